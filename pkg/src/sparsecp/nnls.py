"""Nonnegative least squares on normal equations.

Both solvers take an ``R x R`` symmetric positive definite gram matrix ``G``
and a matrix ``M`` whose rows are right-hand sides, and solve, per row,

    min_{x >= 0}  0.5 * x @ G @ x - m @ x

which is the normal-equations form of ``min ||C x - b||`` with ``G = C.T C``
and ``m = C.T b``.  :func:`nnls_active_set` follows the Lawson-Hanson
pivoting rule; :func:`nnls_block_principal_pivoting` exchanges whole blocks
of infeasible variables and falls back to single-variable exchanges when a
full exchange stops making progress.

Rows are processed together: every pass groups rows by their current passive
set and reuses one Cholesky factorization per group, so the per-pass cost is
a handful of small dense solves regardless of the row count.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import IllConditionedSubproblemError

DEFAULT_TOL = 1e-10

_BACKUP_EXCHANGES = 3


@dataclass(frozen=True, eq=False)
class NnlsProblem:
    """A batch of nonnegative least squares rows sharing one gram matrix."""

    gram: np.ndarray = field(repr=False)
    rhs: np.ndarray = field(repr=False)

    def __post_init__(self):
        gram = np.ascontiguousarray(self.gram, dtype=np.float64)
        rhs = np.atleast_2d(np.asarray(self.rhs, dtype=np.float64))
        if gram.ndim != 2 or gram.shape[0] != gram.shape[1]:
            raise ValueError("gram must be square")
        if rhs.shape[1] != gram.shape[0]:
            raise ValueError(
                f"rhs rows have {rhs.shape[1]} entries, gram is {gram.shape[0]}x{gram.shape[0]}"
            )
        if not (np.isfinite(gram).all() and np.isfinite(rhs).all()):
            raise ValueError("gram and rhs must be finite")
        scale = max(float(np.abs(gram).max()), 1.0)
        if float(np.abs(gram - gram.T).max()) > 1e-10 * scale:
            raise ValueError("gram is not symmetric")
        try:
            cho_factor(gram, check_finite=False)
        except LinAlgError as exc:
            raise IllConditionedSubproblemError(
                "gram matrix is not positive definite"
            ) from exc
        object.__setattr__(self, "gram", gram)
        object.__setattr__(self, "rhs", rhs)

    @property
    def rank(self):
        return self.gram.shape[0]


@dataclass(frozen=True)
class KktCertificate:
    """Optimality report for a solved batch, aggregated over rows.

    ``max_primal_violation`` is the most negative solution entry (0 when the
    raw solution is already nonnegative), ``max_dual_violation`` the most
    negative gradient entry over the zero set, ``max_complementarity`` the
    largest ``|x_i * g_i|``.  ``converged`` is False when any row hit the
    iteration cap and its best feasible iterate was returned instead.
    """

    max_primal_violation: float
    max_dual_violation: float
    max_complementarity: float
    converged: bool = True

    def satisfied(self, tol=DEFAULT_TOL, rhs_scale=1.0):
        return (
            self.converged
            and self.max_primal_violation <= tol
            and self.max_dual_violation <= tol
            and self.max_complementarity <= np.sqrt(tol) * max(rhs_scale, 1.0)
        )


def _solve_rows(gram, rhs, passive, rows, out, cache):
    """Solve ``gram[P, P] z = rhs[i, P]`` for each listed row, grouped by pattern."""
    groups = {}
    for i in rows:
        groups.setdefault(passive[i].tobytes(), []).append(i)
    for key, members in groups.items():
        mask = np.frombuffer(key, dtype=bool)
        idx = np.asarray(members)
        out[idx] = 0.0
        if not mask.any():
            continue
        factor = cache.get(key)
        if factor is None:
            try:
                factor = cho_factor(
                    gram[np.ix_(mask, mask)], lower=True, check_finite=False
                )
            except LinAlgError as exc:
                raise IllConditionedSubproblemError(
                    "gram submatrix is not positive definite"
                ) from exc
            cache[key] = factor
        sol = cho_solve(factor, rhs[np.ix_(idx, mask)].T, check_finite=False)
        out[np.ix_(idx, mask)] = sol.T


def _certificate(gram, rhs, raw, converged):
    grad = raw @ gram - rhs
    primal = max(0.0, float(-raw.min())) if raw.size else 0.0
    zero = raw <= 0.0
    dual = max(0.0, float(-grad[zero].min())) if zero.any() else 0.0
    comp = float(np.abs(raw * grad).max()) if raw.size else 0.0
    return KktCertificate(primal, dual, comp, converged)


def nnls_active_set(problem, tol=DEFAULT_TOL, max_iters=None):
    """Lawson-Hanson active-set solve of every row of ``problem``.

    Returns
    -------
    (ndarray, KktCertificate)
        The nonnegative solution matrix, one row per right-hand side, and an
        aggregate optimality certificate.  Rows that exceed the iteration cap
        (default ``5 R``) keep their best feasible iterate and flag the
        certificate as not converged.
    """
    gram, rhs = problem.gram, problem.rhs
    nrows, rank = rhs.shape
    cap = max_iters if max_iters is not None else max(5 * rank, 10)
    x = np.zeros((nrows, rank))
    z = np.zeros((nrows, rank))
    passive = np.zeros((nrows, rank), dtype=bool)
    solves = np.zeros(nrows, dtype=np.int64)
    flagged = np.zeros(nrows, dtype=bool)
    working = np.ones(nrows, dtype=bool)
    cache = {}

    while True:
        rows = np.flatnonzero(working)
        if rows.size == 0:
            break
        # price the active variables at the current feasible iterate
        price = rhs[rows] - x[rows] @ gram
        price[passive[rows]] = -np.inf
        best = price.argmax(axis=1)
        improvable = price[np.arange(rows.size), best] > tol
        working[rows[~improvable]] = False
        pending = rows[improvable]
        if pending.size == 0:
            continue
        passive[pending, best[improvable]] = True

        while pending.size:
            solves[pending] += 1
            over = solves[pending] > cap
            if over.any():
                flagged[pending[over]] = True
                working[pending[over]] = False
                pending = pending[~over]
                if pending.size == 0:
                    break
            _solve_rows(gram, rhs, passive, pending, z, cache)
            bad = (passive[pending] & (z[pending] <= 0.0)).any(axis=1)
            accepted = pending[~bad]
            x[accepted] = z[accepted]
            pending = pending[bad]
            if pending.size == 0:
                break
            # step toward the candidate until the first variable hits zero
            xb, zb = x[pending], z[pending]
            blocking = passive[pending] & (zb <= 0.0)
            gap = xb - zb
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(blocking & (gap > 0.0), xb / gap, np.inf)
            ratio[blocking & (gap <= 0.0)] = 0.0
            step = ratio.min(axis=1)
            moved = xb + step[:, None] * (zb - xb)
            drop = blocking & (ratio <= step[:, None] * (1.0 + 1e-12))
            moved[drop] = 0.0
            moved[~passive[pending]] = 0.0
            x[pending] = np.maximum(moved, 0.0)
            passive[pending] &= ~drop

    cert = _certificate(gram, rhs, x, converged=not flagged.any())
    return np.maximum(x, 0.0), cert


def nnls_block_principal_pivoting(problem, tol=DEFAULT_TOL, max_iters=None):
    """Block principal pivoting solve of every row of ``problem``.

    Whole blocks of primal/dual infeasible variables swap between the free
    and zero sets; when a full exchange fails to shrink the infeasibility
    count ``_BACKUP_EXCHANGES`` times in a row, the row switches to exchanging
    only its highest-index infeasible variable, which cannot cycle.  The
    return convention matches :func:`nnls_active_set`.
    """
    gram, rhs = problem.gram, problem.rhs
    nrows, rank = rhs.shape
    cap = max_iters if max_iters is not None else max(5 * rank, 10)
    free = np.zeros((nrows, rank), dtype=bool)
    x = np.zeros((nrows, rank))
    grad = -rhs.copy()
    backup = np.full(nrows, _BACKUP_EXCHANGES, dtype=np.int64)
    best_ninf = np.full(nrows, rank + 1, dtype=np.int64)
    best_x = np.zeros((nrows, rank))
    solves = np.zeros(nrows, dtype=np.int64)
    flagged = np.zeros(nrows, dtype=bool)
    working = np.ones(nrows, dtype=bool)
    cache = {}

    while True:
        rows = np.flatnonzero(working)
        if rows.size == 0:
            break
        infeas = np.where(free[rows], x[rows] < -tol, grad[rows] < -tol)
        ninf = infeas.sum(axis=1)
        done = ninf == 0
        working[rows[done]] = False
        rows, infeas, ninf = rows[~done], infeas[~done], ninf[~done]
        if rows.size == 0:
            continue

        solves[rows] += 1
        over = solves[rows] > cap
        if over.any():
            gave_up = rows[over]
            flagged[gave_up] = True
            working[gave_up] = False
            x[gave_up] = best_x[gave_up]
            rows, infeas, ninf = rows[~over], infeas[~over], ninf[~over]
            if rows.size == 0:
                continue

        improved = ninf < best_ninf[rows]
        best_ninf[rows[improved]] = ninf[improved]
        backup[rows[improved]] = _BACKUP_EXCHANGES
        best_x[rows[improved]] = x[rows[improved]]
        full = improved | (backup[rows] > 0)
        backup[rows[~improved & (backup[rows] > 0)]] -= 1
        if full.any():
            free[rows[full]] ^= infeas[full]
        single = rows[~full]
        if single.size:
            # Murty's rule: flip only the highest-index infeasible variable
            highest = rank - 1 - np.argmax(infeas[~full][:, ::-1], axis=1)
            free[single, highest] ^= True

        _solve_rows(gram, rhs, free, rows, x, cache)
        grad[rows] = x[rows] @ gram - rhs[rows]

    cert = _certificate(gram, rhs, x, converged=not flagged.any())
    return np.maximum(x, 0.0), cert
