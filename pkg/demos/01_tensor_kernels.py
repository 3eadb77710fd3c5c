"""Tour of the dense tensor kernels: unfolding, Khatri-Rao, MTTKRP, grams.

Everything downstream — every solver sweep — is built from the four kernels
shown here.  Run with:  python3 demos/01_tensor_kernels.py
"""

import numpy as np

from sparsecp import (
    DenseTensor,
    FactorSet,
    gram_excluding,
    khatri_rao,
    kruskal_to_dense,
    mttkrp,
    unfold,
)

rng = np.random.default_rng(0)

# A tensor is stored with the first mode varying fastest, so the flat buffer
# of this 2x2x2 example reads 1..8 in order.
t = DenseTensor.from_flat((2, 2, 2), np.arange(1.0, 9.0))
print("tensor shape:", t.shape)

# Mode-n unfolding arranges mode n along rows, all other modes along columns
# (lower-numbered modes vary fastest among the columns).
for mode in range(3):
    print(f"mode-{mode} unfolding:\n{unfold(t, mode)}")

# The Khatri-Rao product is a columnwise Kronecker product; it has one row
# per combination of the operands' rows.
a = np.array([[1.0, 2.0]])          # 1 x 2
b = np.array([[3.0, 4.0]])          # 1 x 2
print("khatri_rao([[1,2]],[[3,4]]) =", khatri_rao([a, b]))

# A rank-R factor set defines a tensor as a sum of R outer products.
shape, rank = (5, 4, 6), 3
factors = FactorSet([rng.random((e, rank)) for e in shape])
full = kruskal_to_dense(factors)
print("reconstructed tensor shape:", full.shape)

# MTTKRP contracts an unfolding with the Khatri-Rao product of the other
# factors.  It is the expensive kernel of every solver sweep, so verify it
# against the explicit product once:
mode = 1
explicit = unfold(full, mode) @ khatri_rao(
    [np.asarray(factors[m]) for m in reversed(range(3)) if m != mode])
fast = mttkrp(full, factors, mode)
print("mttkrp matches explicit product:",
      bool(np.allclose(explicit, fast, rtol=1e-12, atol=0)))

# The gram of the same Khatri-Rao product never needs to be formed
# explicitly: it is the elementwise product of the small R x R factor grams.
gram = gram_excluding(factors, mode)
print("gram matches explicit product:",
      bool(np.allclose(gram, khatri_rao(
          [np.asarray(factors[m]) for m in reversed(range(3)) if m != mode]
      ).T @ khatri_rao(
          [np.asarray(factors[m]) for m in reversed(range(3)) if m != mode]
      ), rtol=1e-12, atol=1e-12)))
