"""Objective evaluation, iteration traces, and stopping rules.

The residual objective ``0.5 * ||X - [[A_0, ..., A_{N-1}]]||_F**2`` is never
formed from a dense reconstruction while iterating.  After a full ascending
sweep the last mode's cached context (MTTKRP and Khatri-Rao gram) makes it

    0.5 * (||X||_F**2 - 2 * <A, mttkrp> + <A.T @ A, gram>)

which costs ``O(I R + R**2)`` and is exact at the current factor state
because the last mode is updated after every other one.
"""

from dataclasses import dataclass

import numpy as np

from .errors import StaleContextError

STOP_RULES = ("relerr_change", "objective_change")

TERMINATION_CAUSES = ("epsilon_reached", "max_iters", "max_time")


@dataclass(frozen=True)
class PrecomputedNorm:
    """Squared Frobenius norm of the input tensor, computed once per run."""

    norm_squared: float

    @classmethod
    def from_tensor(cls, t):
        return cls(t.norm_squared())

    @property
    def norm(self):
        return float(np.sqrt(self.norm_squared))


@dataclass(frozen=True)
class IterationTrace:
    """One row of the convergence trace.

    ``objective`` is the stopping objective of the method in use (the
    residual plus its penalty terms), ``ncp_objective`` the bare residual
    term.  ``elapsed_seconds`` is wall clock since the decomposition started.
    """

    iteration: int
    objective: float
    ncp_objective: float
    rel_err: float
    fit: float
    elapsed_seconds: float


def fast_ncp_objective(factor, ctx, norm, expected_seq=None):
    """Residual objective from one mode's cached context.

    Parameters
    ----------
    factor : ndarray
        The current factor matrix of ``ctx.mode`` (already updated).
    ctx : SubproblemContext
        Context built for that mode at the current state of the other
        factors.
    norm : PrecomputedNorm or float
        Squared Frobenius norm of the input tensor.
    expected_seq : int, optional
        Sweep number the caller believes the context belongs to; a mismatch
        raises :class:`StaleContextError`.

    Tiny negative results from cancellation are clamped to zero.
    """
    if expected_seq is not None and ctx.seq != expected_seq:
        raise StaleContextError(
            f"context for mode {ctx.mode} is from sweep {ctx.seq}, "
            f"expected {expected_seq}"
        )
    x_norm_sq = norm.norm_squared if isinstance(norm, PrecomputedNorm) else float(norm)
    cross = float(np.vdot(factor, ctx.mttkrp))
    model = float(np.vdot(factor.T @ factor, ctx.gram))
    return max(0.5 * (x_norm_sq - 2.0 * cross + model), 0.0)


def relative_error(ncp_objective, norm):
    """``sqrt(2 * residual) / ||X||_F``; zero-norm inputs map to 0 or inf."""
    x_norm_sq = norm.norm_squared if isinstance(norm, PrecomputedNorm) else float(norm)
    if x_norm_sq <= 0.0:
        return 0.0 if ncp_objective <= 0.0 else float("inf")
    return float(np.sqrt(2.0 * max(ncp_objective, 0.0) / x_norm_sq))


def full_objective(ncp_objective, factors, alpha, beta, method):
    """Add the regularization terms for ``method`` to the residual objective.

    Every method pays ``alpha_n / 2 * ||A_n||_F**2`` per mode.  The sparsity
    term is ``beta_n * sum_r ||column r||_1`` except for the ANLS methods,
    whose subproblem absorbs ``beta_n / 2 * sum_i ||row i||_1**2`` instead.
    """
    factors = list(factors)
    if len(alpha) != len(factors) or len(beta) != len(factors):
        raise ValueError("alpha and beta must give one value per mode")
    total = float(ncp_objective)
    squared_row_l1 = method.startswith("anls")
    for f, a, b in zip(factors, alpha, beta):
        f = np.asarray(f)
        if a:
            total += 0.5 * a * float(np.vdot(f, f))
        if b:
            if squared_row_l1:
                rows = np.abs(f).sum(axis=1)
                total += 0.5 * b * float(rows @ rows)
            else:
                total += b * float(np.abs(f).sum())
    return total


def should_stop(trace, rule, epsilon):
    """Change-based stopping decision from the last two trace rows.

    ``relerr_change`` compares consecutive relative errors,
    ``objective_change`` consecutive stopping objectives; both use absolute
    differences.  Fewer than two rows never stop.
    """
    if rule not in STOP_RULES:
        raise ValueError(f"unknown stopping rule {rule!r}")
    if len(trace) < 2:
        return False
    prev, last = trace[-2], trace[-1]
    if rule == "relerr_change":
        return abs(prev.rel_err - last.rel_err) < epsilon
    return abs(prev.objective - last.objective) < epsilon


TRACE_HEADER = "iter,objective,ncp_objective,rel_err,fit,elapsed_seconds"


def format_trace_row(row):
    values = (row.objective, row.ncp_objective, row.rel_err, row.fit,
              row.elapsed_seconds)
    return ",".join([str(row.iteration)] + [f"{v:.17g}" for v in values])


def write_trace_csv(trace, path):
    """Serialize trace rows to CSV with 17 significant digits."""
    lines = [TRACE_HEADER]
    lines.extend(format_trace_row(row) for row in trace)
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
