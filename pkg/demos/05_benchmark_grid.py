"""A miniature benchmark grid, in-process.

Runs the method-by-beta grid on the small `demo` preset and prints the
aggregate table — the same machinery the `sparsecp grid` command drives from
a config file.  Run with:  python3 demos/05_benchmark_grid.py  (2-3 minutes)
"""

import numpy as np

from sparsecp import ExperimentGrid, generate_synthetic, make_preset, run_grid

rng = np.random.default_rng(1)
spec = make_preset("demo", rng)
tensor, truth = generate_synthetic(spec, rng)
reference = np.asarray(truth[0])
print(f"demo preset: tensor {tensor.shape}, 4 sources, 30 dB noise\n")

grid = ExperimentGrid(
    methods=("mu", "hals", "apg", "anls-bpp"),
    betas=(0.0, 0.5),
    repeats=3,
    rank=8,                # twice the true component count
    alpha=1e-6,
    stop_epsilon=1e-8,
    max_iters=2000,
    max_seconds=10.0,
    base_seed=0,
)
result = run_grid(tensor, reference, grid)

print(f"{'method':>9} {'beta':>5} {'rel_err':>9} {'comps':>6} "
      f"{'sparsity':>9} {'psnr_db':>8} {'sweeps':>7}")
for agg in result.aggregates:
    print(f"{agg.method:>9} {agg.beta:>5.2f} {agg.rel_err:>9.4f} "
          f"{agg.components:>6.1f} {agg.sparsity:>9.3f} "
          f"{agg.psnr_db:>8.1f} {agg.iters:>7.0f}")

print(f"\n{len(result.records)} runs, {len(result.failures)} failures; "
      "means taken over 3 seeds per cell.")
