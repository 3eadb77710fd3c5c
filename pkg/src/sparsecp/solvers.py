"""Block-coordinate solvers for sparse nonnegative CP decomposition.

The model fitted to an order-N tensor ``X`` with factor matrices ``A_n`` is

    minimize  0.5 * ||X - [[A_0, ..., A_{N-1}]]||_F**2
              + sum_n alpha_n / 2 * ||A_n||_F**2  + sparsity terms
    subject to  A_n >= 0

where the sparsity term is ``beta_n * sum_r ||column r of A_n||_1`` for the
multiplicative (``mu``), projected least squares (``als``), hierarchical
(``hals``) and accelerated proximal gradient (``apg``) methods, and
``beta_n / 2 * sum_i ||row i of A_n||_1**2`` for the two ``anls`` methods,
whose row subproblems absorb it into the gram matrix.

Each outer iteration sweeps the modes in ascending order; a per-mode
:class:`~sparsecp.tensor.SubproblemContext` (MTTKRP plus Khatri-Rao gram) is
built once per mode per sweep and shared between the update rule and the
objective evaluation.
"""

import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import IllConditionedSubproblemError
from .nnls import (
    DEFAULT_TOL,
    NnlsProblem,
    nnls_active_set,
    nnls_block_principal_pivoting,
)
from .objective import (
    STOP_RULES,
    IterationTrace,
    PrecomputedNorm,
    fast_ncp_objective,
    full_objective,
    relative_error,
    should_stop,
)
from .tensor import DenseTensor, FactorSet, subproblem_context, unfold

METHODS = ("mu", "als", "hals", "apg", "anls-as", "anls-bpp")


def _per_mode(value, order, name):
    if np.isscalar(value):
        values = [float(value)] * order
    else:
        values = [float(v) for v in value]
        if len(values) != order:
            raise ValueError(f"{name} must give one value per mode, got {len(values)}")
    for v in values:
        if not np.isfinite(v) or v < 0:
            raise ValueError(f"{name} values must be finite and >= 0")
    return values


@dataclass
class SolverConfig:
    """Settings for one decomposition run.

    ``alpha`` (Frobenius regularization) and ``beta`` (sparsity weight) may be
    scalars, broadcast to every mode, or per-mode sequences.  ``mu_floor``
    clamps the multiplicative update's fractions away from zero and
    ``mu_init_offset`` is added to the multiplicative method's starting
    factors so no entry begins at exactly zero.  ``apg_delta_omega`` bounds
    the extrapolation weight slightly below the step-length ratio.
    """

    rank: int
    method: str = "anls-bpp"
    alpha: object = 1e-6
    beta: object = 0.0
    stop_rule: str = "relerr_change"
    stop_epsilon: float = 1e-8
    max_iters: int = 1000
    max_seconds: float = None
    rng_seed: int = None
    mu_floor: float = 1e-16
    mu_init_offset: float = 1e-9
    apg_delta_omega: float = 0.9999
    nnls_tol: float = DEFAULT_TOL
    precompute_unfoldings: bool = True

    def __post_init__(self):
        self.stop_rule = str(self.stop_rule).replace("-", "_")
        self.method = str(self.method).lower()

    def validate(self, order=None):
        if int(self.rank) != self.rank or self.rank < 1:
            raise ValueError(f"rank must be a positive integer, got {self.rank}")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}, expected one of {METHODS}")
        if self.stop_rule not in STOP_RULES:
            raise ValueError(f"unknown stop rule {self.stop_rule!r}")
        if not self.stop_epsilon > 0:
            raise ValueError("stop_epsilon must be > 0")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError("max_iters must be a positive integer")
        if self.max_seconds is not None and not self.max_seconds > 0:
            raise ValueError("max_seconds must be > 0 when set")
        if not self.mu_floor > 0:
            raise ValueError("mu_floor must be > 0")
        if self.mu_init_offset < 0:
            raise ValueError("mu_init_offset must be >= 0")
        if not 0 < self.apg_delta_omega < 1:
            raise ValueError("apg_delta_omega must lie in (0, 1)")
        if not self.nnls_tol > 0:
            raise ValueError("nnls_tol must be > 0")
        if order is not None:
            _per_mode(self.alpha, order, "alpha")
            _per_mode(self.beta, order, "beta")

    def per_mode(self, order):
        """Resolved (alpha, beta) lists with one value per mode."""
        return (_per_mode(self.alpha, order, "alpha"),
                _per_mode(self.beta, order, "beta"))


@dataclass
class ApgState:
    """Carries the accelerated method's memory between sweeps.

    ``factors_prev`` holds each mode's previous accepted iterate,
    ``lipschitz_prev`` the previous sweep's per-mode gram spectral norms, and
    ``t_prev``/``t_curr`` the momentum coefficient sequence (``t_0 = 1``).
    """

    factors_prev: list
    lipschitz_prev: list
    t_prev: float = 1.0
    t_curr: float = 1.0

    @classmethod
    def fresh(cls, factors):
        return cls(factors_prev=list(factors),
                   lipschitz_prev=[None] * len(factors))

    def advance_t(self):
        self.t_prev = self.t_curr
        self.t_curr = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * self.t_prev**2))

    @property
    def omega_hat(self):
        return (self.t_prev - 1.0) / self.t_curr


@dataclass(frozen=True)
class DecompositionResult:
    factors: FactorSet
    trace: list
    termination: str
    iterations: int
    wall_seconds: float
    config: SolverConfig = field(repr=False, default=None)

    @property
    def final(self):
        return self.trace[-1] if self.trace else None


def init_factors(shape, config, rng=None):
    """Draw starting factors: elementwise ``max(0, standard normal)``.

    Roughly half the entries start at zero.  The multiplicative method
    additionally gets ``mu_init_offset`` added everywhere so its updates can
    move every entry.
    """
    if rng is None:
        rng = np.random.default_rng(config.rng_seed)
    offset = config.mu_init_offset if config.method == "mu" else 0.0
    mats = []
    for extent in shape:
        m = np.maximum(rng.standard_normal((extent, config.rank)), 0.0)
        if offset:
            m += offset
        mats.append(m)
    return FactorSet(mats)


def gram_spectral_norm(gram, max_iters=100, tol=1e-10):
    """Largest eigenvalue of a PSD matrix by power iteration.

    Uses a deterministic start vector; for the nonnegative gram matrices seen
    here the dominant eigenvector is nonnegative, so the all-ones start
    cannot be orthogonal to it.
    """
    rank = gram.shape[0]
    v = np.full(rank, 1.0 / np.sqrt(rank))
    estimate = 0.0
    for _ in range(max_iters):
        w = gram @ v
        norm_w = float(np.linalg.norm(w))
        if norm_w <= 0.0:
            return 0.0
        v = w / norm_w
        updated = float(v @ gram @ v)
        if abs(updated - estimate) <= tol * max(abs(updated), 1e-30):
            return updated
        estimate = updated
    return estimate


def update_mu(factor, ctx, alpha, beta, floor=1e-16):
    """Multiplicative update; keeps every entry strictly positive.

    Both the numerator (MTTKRP) and the denominator are clamped at ``floor``
    so a vanishing numerator shrinks entries toward the floor instead of
    pinning them at zero.
    """
    denom = factor @ ctx.gram
    if alpha:
        denom = denom + alpha * factor
    if beta:
        denom = denom + beta
    numer = np.maximum(ctx.mttkrp, floor)
    return factor * numer / np.maximum(denom, floor)


def _regularized_cholesky(gram, alpha, mode):
    ridge = gram if not alpha else gram + alpha * np.eye(gram.shape[0])
    try:
        return cho_factor(ridge, lower=True, check_finite=False)
    except LinAlgError:
        pass
    # one retry with a slightly larger ridge before giving up
    try:
        return cho_factor(ridge + 1e-10 * np.eye(gram.shape[0]),
                          lower=True, check_finite=False)
    except LinAlgError as exc:
        raise IllConditionedSubproblemError(
            f"mode {mode}: Khatri-Rao gram is not positive definite"
        ) from exc


def update_als(factor, ctx, alpha, beta):
    """Solve the unconstrained regularized least squares block, then clip at 0."""
    rhs = ctx.mttkrp - beta if beta else ctx.mttkrp
    chol = _regularized_cholesky(ctx.gram, alpha, ctx.mode)
    solution = cho_solve(chol, rhs.T, check_finite=False).T
    return np.maximum(solution, 0.0)


def update_hals(factor, ctx, alpha, beta, normalize=False):
    """Column-by-column closed-form updates using the partially updated factor.

    With ``normalize`` each freshly updated column is scaled to unit 2-norm
    (columns that came out identically zero are left alone).
    """
    a = factor.copy()
    gram, mt = ctx.gram, ctx.mttkrp
    for r in range(a.shape[1]):
        denom = gram[r, r] + alpha
        if denom <= 0.0:
            a[:, r] = 0.0
            continue
        head = mt[:, r] - a @ gram[:, r] + gram[r, r] * a[:, r]
        if beta:
            head = head - beta
        col = np.maximum(head / denom, 0.0)
        if normalize:
            scale = float(np.linalg.norm(col))
            if scale > 0.0:
                col = col / scale
        a[:, r] = col
    return a


def update_apg(factor, ctx, alpha, beta, state, delta_omega=0.9999,
               omega_override=None):
    """One extrapolated projected-gradient step for a single mode.

    The step length is the reciprocal of the gram spectral norm; the
    extrapolation weight is the momentum coefficient capped by
    ``delta_omega * sqrt(L_prev / L)``.  Pass ``omega_override=0.0`` to take
    the plain projected-gradient step used after a restart.
    """
    mode = ctx.mode
    lipschitz = max(gram_spectral_norm(ctx.gram), 1e-30)
    previous_l = state.lipschitz_prev[mode]
    if previous_l is None:
        previous_l = lipschitz
    if omega_override is None:
        omega = min(state.omega_hat,
                    delta_omega * np.sqrt(previous_l / lipschitz))
    else:
        omega = omega_override
    prev1 = factor
    prev2 = state.factors_prev[mode]
    ahead = prev1 + omega * (prev1 - prev2) if omega else prev1
    grad = ahead @ ctx.gram - ctx.mttkrp
    if alpha:
        grad = grad + alpha * ahead
    if beta:
        grad = grad + beta
    state.factors_prev[mode] = prev1
    state.lipschitz_prev[mode] = lipschitz
    return np.maximum(ahead - grad / lipschitz, 0.0)


def apg_restart_check(objective, objective_prev):
    """True when the accelerated sweep overshot and must be redone plainly."""
    return objective > objective_prev


def update_anls(factor, ctx, alpha, beta, variant="bpp", tol=DEFAULT_TOL):
    """Exact nonnegative solve of one mode's block subproblem.

    The squared row-wise 1-norm sparsity term and the Frobenius term both
    fold into the gram: ``G + alpha * I + beta * ones``.  The right-hand
    side stays the bare MTTKRP.
    """
    rank = ctx.gram.shape[0]
    if float(ctx.mttkrp.max()) <= 0.0:
        # nonpositive rhs: zero is optimal for any PSD gram, no solve needed
        return np.zeros_like(ctx.mttkrp)
    augmented = ctx.gram + alpha * np.eye(rank) + beta
    try:
        problem = NnlsProblem(augmented, ctx.mttkrp)
    except IllConditionedSubproblemError as exc:
        raise IllConditionedSubproblemError(f"mode {ctx.mode}: {exc}") from exc
    solver = nnls_active_set if variant == "as" else nnls_block_principal_pivoting
    solution, _cert = solver(problem, tol=tol)
    return solution


def _update_for(method, factors, n, ctx, alpha, beta, cfg, apg_state,
                omega_override=None):
    if method == "mu":
        return update_mu(factors[n], ctx, alpha[n], beta[n], floor=cfg.mu_floor)
    if method == "als":
        return update_als(factors[n], ctx, alpha[n], beta[n])
    if method == "hals":
        last = len(factors) - 1
        return update_hals(factors[n], ctx, alpha[n], beta[n], normalize=n < last)
    if method == "apg":
        return update_apg(factors[n], ctx, alpha[n], beta[n], apg_state,
                          delta_omega=cfg.apg_delta_omega,
                          omega_override=omega_override)
    variant = "as" if method == "anls-as" else "bpp"
    return update_anls(factors[n], ctx, alpha[n], beta[n], variant=variant,
                       tol=cfg.nnls_tol)


def _sweep(t, factors, method, alpha, beta, cfg, seq, unfoldings, apg_state,
           omega_override=None):
    ctx = None
    for n in range(len(factors)):
        unf = unfoldings[n] if unfoldings is not None else None
        ctx = subproblem_context(t, factors, n, seq=seq, unfolding=unf)
        factors[n] = _update_for(method, factors, n, ctx, alpha, beta, cfg,
                                 apg_state, omega_override=omega_override)
    return ctx


def decompose(tensor, config, initial=None):
    """Run one decomposition to convergence or a limit.

    Parameters
    ----------
    tensor : DenseTensor or ndarray
        Nonnegative input with at least three modes.
    config : SolverConfig
    initial : FactorSet, optional
        Starting point; drawn from ``config.rng_seed`` when omitted.

    Returns
    -------
    DecompositionResult
        Final factors, per-iteration trace, and the termination cause
        (``epsilon_reached``, ``max_iters``, or ``max_time``).  The trace is
        evaluated from the last mode's cached context after each sweep, so it
        is exact at the recorded factor state.
    """
    t = tensor if isinstance(tensor, DenseTensor) else DenseTensor(np.asarray(tensor))
    if t.order < 3:
        raise ValueError(f"decomposition needs an order >= 3 tensor, got {t.order}")
    if float(t.data.min()) < 0.0:
        raise ValueError("tensor has negative entries")
    config.validate(order=t.order)
    alpha, beta = config.per_mode(t.order)
    method = config.method
    last = t.order - 1

    if initial is None:
        initial = init_factors(t.shape, config)
    elif not isinstance(initial, FactorSet):
        initial = FactorSet(initial)
    if initial.shape != t.shape or initial.rank != config.rank:
        raise ValueError("initial factors do not match the tensor and rank")
    factors = initial.copy_arrays()

    unfoldings = None
    if config.precompute_unfoldings:
        unfoldings = [unfold(t, n) for n in range(t.order)]
    norm = PrecomputedNorm.from_tensor(t)

    apg_state = None
    objective_prev = None
    if method == "apg":
        apg_state = ApgState.fresh(factors)
        ctx0 = subproblem_context(t, factors, last, seq=0,
                                  unfolding=None if unfoldings is None else unfoldings[last])
        ncp0 = fast_ncp_objective(factors[last], ctx0, norm, expected_seq=0)
        objective_prev = full_objective(ncp0, factors, alpha, beta, method)

    trace = []
    termination = "max_iters"
    start = time.perf_counter()
    iterations = 0
    for k in range(1, int(config.max_iters) + 1):
        iterations = k
        if method == "apg":
            apg_state.advance_t()
            ctx = _sweep(t, factors, method, alpha, beta, config, k,
                         unfoldings, apg_state)
            ncp = fast_ncp_objective(factors[last], ctx, norm, expected_seq=k)
            objective = full_objective(ncp, factors, alpha, beta, method)
            if apg_restart_check(objective, objective_prev):
                factors[:] = list(apg_state.factors_prev)
                ctx = _sweep(t, factors, method, alpha, beta, config, k,
                             unfoldings, apg_state, omega_override=0.0)
                ncp = fast_ncp_objective(factors[last], ctx, norm, expected_seq=k)
                objective = full_objective(ncp, factors, alpha, beta, method)
            objective_prev = objective
        else:
            ctx = _sweep(t, factors, method, alpha, beta, config, k,
                         unfoldings, apg_state)
            ncp = fast_ncp_objective(factors[last], ctx, norm, expected_seq=k)
            objective = full_objective(ncp, factors, alpha, beta, method)
        rel = relative_error(ncp, norm)
        elapsed = time.perf_counter() - start
        trace.append(IterationTrace(k, objective, ncp, rel, 1.0 - rel, elapsed))
        if should_stop(trace, config.stop_rule, config.stop_epsilon):
            termination = "epsilon_reached"
            break
        if config.max_seconds is not None and elapsed >= config.max_seconds:
            termination = "max_time"
            break

    wall = time.perf_counter() - start
    return DecompositionResult(FactorSet(factors), trace, termination,
                               iterations, wall, config=replace(config))
