"""Regenerate the bundled sparse signal asset.

Writes src/sparsecp/assets/sparse_signals_1000x10.dnt: ten sparse
nonnegative channels of 1000 samples each, zero fraction between 0.72 and
0.88 per channel.  The seed is fixed so the asset is reproducible; change it
only together with every recorded result that depends on the asset.
"""

import pathlib
import sys

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from sparsecp.io import write_dnt  # noqa: E402
from sparsecp.synthetic import BUNDLED_SIGNAL_ASSET, sparse_signal_matrix  # noqa: E402

SEED = 1848


def main():
    rng = np.random.default_rng(SEED)
    signals = sparse_signal_matrix(1000, 10, rng)
    target = (pathlib.Path(__file__).resolve().parents[1]
              / "src" / "sparsecp" / "assets" / BUNDLED_SIGNAL_ASSET)
    target.parent.mkdir(parents=True, exist_ok=True)
    write_dnt(target, signals)
    zeros = (signals == 0).mean(axis=0)
    print(f"wrote {target}")
    print("per-channel zero fraction:", np.array2string(zeros, precision=3))


if __name__ == "__main__":
    main()
