"""Component pruning under the l1 penalty.

Decomposes a 10-source mixture with rank 20 — twice the true number of
components — and sweeps the sparsity weight beta.  With beta = 0 the solver
keeps nearly all 20 components busy; as beta grows, superfluous components
are driven to exact zeros and the count collapses to the true 10.
Run with:  python3 demos/03_sparsity_sweep.py   (about a minute)
"""

import numpy as np

from sparsecp import (
    SolverConfig,
    SyntheticSpec,
    decompose,
    generate_synthetic,
    metrics_report,
    sparse_signal_matrix,
)

rng = np.random.default_rng(21)
signals = sparse_signal_matrix(200, 10, rng)
spec = SyntheticSpec(signals, (30, 30), snr_db=40.0)
tensor, truth = generate_synthetic(spec, np.random.default_rng(21))
reference = np.asarray(truth[0])
print(f"tensor {tensor.shape}: 10 true sources, decomposed at rank 20\n")

print(f"{'beta':>6} {'components':>10} {'sparsity':>9} {'rel_err':>9} "
      f"{'psnr_db':>8}")
for beta in (0.0, 0.05, 0.1, 0.5, 1.0):
    cfg = SolverConfig(rank=20, method="anls-bpp", alpha=1e-6, beta=beta,
                       stop_epsilon=1e-7, max_iters=2000, max_seconds=30.0,
                       rng_seed=5)
    result = decompose(tensor, cfg)
    report = metrics_report(np.asarray(result.factors[0]), reference)
    psnr = report["psnr_db"]
    print(f"{beta:>6.2f} {report['nonzero_components']:>10} "
          f"{report['sparsity']:>9.3f} {result.final.rel_err:>9.4f} "
          f"{psnr if psnr is None else round(psnr, 1):>8}")

print("\nThe rel_err barely moves while half the components vanish: the "
      "penalty\nprunes redundancy without hurting the fit.")
