"""Recovery quality metrics for factor matrices.

``sparsity_level`` and ``count_nonzero_components`` look at one factor matrix
in isolation; :func:`psnr` compares recovered components against reference
signals after 2-normalizing every column, pairing each estimated column with
the reference column it correlates with best.  The pairing is deliberately
not one-to-one: several estimates may map to the same reference, which is
exactly what reveals duplicated or split components.
"""

import warnings
from dataclasses import dataclass

import numpy as np

DEFAULT_THRESHOLD = 1e-3
PSNR_CAP_DB = 300.0


@dataclass(frozen=True)
class SparsityReport:
    sparsity: float
    nonzero_components: int
    threshold: float


@dataclass(frozen=True)
class PsnrReport:
    """Mean PSNR over matched components plus the per-component detail.

    ``matched_pairs`` holds ``(estimated column, reference column,
    correlation)`` triples in estimated-column order.
    """

    psnr_db: float
    per_component_db: tuple
    matched_pairs: tuple


def sparsity_level(matrix, threshold=DEFAULT_THRESHOLD):
    """Fraction of entries strictly below ``threshold`` in magnitude."""
    m = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    if m.size == 0:
        raise ValueError("matrix is empty")
    return float(np.count_nonzero(np.abs(m) < threshold)) / m.size


def count_nonzero_components(matrix, threshold=DEFAULT_THRESHOLD):
    """Number of columns containing at least one entry >= ``threshold``."""
    m = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    return int(np.count_nonzero((np.abs(m) >= threshold).any(axis=0)))


def sparsity_report(matrix, threshold=DEFAULT_THRESHOLD):
    return SparsityReport(
        sparsity=sparsity_level(matrix, threshold),
        nonzero_components=count_nonzero_components(matrix, threshold),
        threshold=float(threshold),
    )


def _unit_columns(matrix):
    norms = np.linalg.norm(matrix, axis=0)
    safe = np.where(norms > 0.0, norms, 1.0)
    return matrix / safe, norms


def _correlations(est, ref):
    ec = est - est.mean(axis=0)
    rc = ref - ref.mean(axis=0)
    en = np.linalg.norm(ec, axis=0)
    rn = np.linalg.norm(rc, axis=0)
    denom = np.outer(en, rn)
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = (ec.T @ rc) / denom
    # constant columns have no defined correlation; never prefer them
    corr[~np.isfinite(corr)] = -2.0
    return corr


def psnr(estimated, reference, cap_db=PSNR_CAP_DB):
    """Peak signal-to-noise ratio of recovered components, in dB.

    Both inputs are ``(samples, components)`` matrices over the same sample
    count.  Every estimated column is 2-normalized and compared against the
    2-normalized reference column with the highest Pearson correlation:

        10 * log10(samples / ||t_hat - s_hat||**2)

    capped at ``cap_db``.  Estimated columns with zero norm cannot be
    normalized; they are excluded from matching with a warning.
    """
    est = np.atleast_2d(np.asarray(estimated, dtype=np.float64))
    ref = np.atleast_2d(np.asarray(reference, dtype=np.float64))
    if est.shape[0] != ref.shape[0]:
        raise ValueError(
            f"sample counts differ: estimated {est.shape[0]}, reference {ref.shape[0]}"
        )
    if est.shape[1] == 0 or ref.shape[1] == 0:
        raise ValueError("need at least one column on each side")
    samples = est.shape[0]

    est_unit, est_norms = _unit_columns(est)
    keep = np.flatnonzero(est_norms > 0.0)
    if keep.size < est.shape[1]:
        warnings.warn(
            f"excluding {est.shape[1] - keep.size} zero-norm estimated column(s) "
            "from PSNR matching",
            stacklevel=2,
        )
    ref_unit, _ = _unit_columns(ref)

    values = []
    pairs = []
    if keep.size:
        corr = _correlations(est[:, keep], ref)
        for pos, col in enumerate(keep):
            match = int(np.argmax(corr[pos]))
            diff = est_unit[:, col] - ref_unit[:, match]
            dist_sq = float(diff @ diff)
            if dist_sq <= 0.0:
                value = float(cap_db)
            else:
                value = min(10.0 * np.log10(samples / dist_sq), float(cap_db))
            values.append(value)
            pairs.append((int(col), match, float(corr[pos, match])))
    mean_db = float(np.mean(values)) if values else float("nan")
    return PsnrReport(mean_db, tuple(values), tuple(pairs))


def metrics_report(estimated, reference=None, threshold=DEFAULT_THRESHOLD):
    """Assemble the JSON-ready report for one factor matrix.

    PSNR fields are included when ``reference`` is given; matching then uses
    only the estimated columns that clear ``threshold``.
    """
    report = {
        "sparsity": sparsity_level(estimated, threshold),
        "nonzero_components": count_nonzero_components(estimated, threshold),
    }
    if reference is not None:
        est = np.atleast_2d(np.asarray(estimated, dtype=np.float64))
        alive = np.flatnonzero((np.abs(est) >= threshold).any(axis=0))
        if alive.size:
            res = psnr(est[:, alive], reference)
            report["psnr_db"] = res.psnr_db
            report["matched_pairs"] = [
                [int(alive[e]), r, c] for (e, r, c) in res.matched_pairs
            ]
        else:
            report["psnr_db"] = None
            report["matched_pairs"] = []
    return report
