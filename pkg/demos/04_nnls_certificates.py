"""The two exact NNLS solvers and their KKT certificates.

Solves one batch of nonnegative least squares rows with the active-set and
block-principal-pivoting solvers, prints the optimality certificates, and
cross-checks a small problem against brute-force support enumeration.
Run with:  python3 demos/04_nnls_certificates.py
"""

import itertools

import numpy as np

from sparsecp import NnlsProblem, nnls_active_set, nnls_block_principal_pivoting

rng = np.random.default_rng(3)

# a batch: one gram, many right-hand-side rows (as in one ANLS block solve)
basis = rng.standard_normal((12, 6))
gram = basis.T @ basis
rhs = rng.standard_normal((8, 6))
problem = NnlsProblem(gram=gram, rhs=rhs)

for solver in (nnls_active_set, nnls_block_principal_pivoting):
    x, cert = solver(problem)
    print(f"{solver.__name__}:")
    print(f"  zeros in solution:        {int(np.sum(x == 0.0))}/{x.size}")
    print(f"  max primal violation:     {cert.max_primal_violation:.2e}")
    print(f"  max dual violation:       {cert.max_dual_violation:.2e}")
    print(f"  max complementarity:      {cert.max_complementarity:.2e}")
    print(f"  certificate satisfied:    {cert.satisfied()}\n")

# brute force: try every support set, keep the best feasible candidate
small_gram = gram[:4, :4]
small_rhs = rng.standard_normal(4)
best, best_obj = np.zeros(4), 0.0
for k in range(1, 5):
    for support in itertools.combinations(range(4), k):
        sub = np.ix_(support, support)
        try:
            z = np.linalg.solve(small_gram[sub], small_rhs[list(support)])
        except np.linalg.LinAlgError:
            continue
        if np.any(z < 0):
            continue
        x = np.zeros(4)
        x[list(support)] = z
        obj = 0.5 * x @ small_gram @ x - small_rhs @ x
        if obj < best_obj:
            best, best_obj = x, obj

x_as, _ = nnls_active_set(NnlsProblem(gram=small_gram, rhs=small_rhs[None, :]))
x_bpp, _ = nnls_block_principal_pivoting(
    NnlsProblem(gram=small_gram, rhs=small_rhs[None, :]))
print("enumeration:", np.round(best, 6))
print("active set: ", np.round(x_as[0], 6))
print("pivoting:   ", np.round(x_bpp[0], 6))
print("all agree:  ", bool(np.allclose(best, x_as[0], atol=1e-10)
                           and np.allclose(best, x_bpp[0], atol=1e-10)))
