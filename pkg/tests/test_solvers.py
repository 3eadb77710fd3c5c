"""Update rules, solver configuration, and the outer decomposition loop."""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from sparsecp import (
    ApgState,
    DenseTensor,
    FactorSet,
    IllConditionedSubproblemError,
    METHODS,
    SolverConfig,
    SubproblemContext,
    apg_restart_check,
    decompose,
    gram_spectral_norm,
    init_factors,
    kruskal_to_dense,
    subproblem_context,
    update_als,
    update_anls,
    update_apg,
    update_hals,
    update_mu,
)
from oracles import ncp_objective_by_reconstruction, random_nonneg_factors


def ctx_of(gram, mttkrp, mode=0):
    return SubproblemContext(mode=mode, mttkrp=np.asarray(mttkrp, float),
                             gram=np.asarray(gram, float))


def exact_model(rng, shape=(5, 4, 6), rank=3):
    factors = FactorSet([0.2 + rng.random((e, rank)) for e in shape])
    return kruskal_to_dense(factors), factors


def separated_model(seed=3, shape=(8, 8, 8), rank=2):
    """Exact model whose rank-1 components are far from parallel."""
    rng = np.random.default_rng(seed)
    factors = FactorSet([np.maximum(rng.standard_normal((e, rank)), 0.0) + 0.05
                         for e in shape])
    return kruskal_to_dense(factors), factors


class TestSolverConfig:
    def test_defaults_validate(self):
        SolverConfig(rank=3).validate(order=3)

    @pytest.mark.parametrize("kwargs", [
        {"rank": 0},
        {"rank": 2, "method": "nope"},
        {"rank": 2, "stop_rule": "nope"},
        {"rank": 2, "stop_epsilon": 0.0},
        {"rank": 2, "max_iters": 0},
        {"rank": 2, "max_seconds": 0.0},
        {"rank": 2, "mu_floor": 0.0},
        {"rank": 2, "mu_init_offset": -1.0},
        {"rank": 2, "apg_delta_omega": 1.0},
        {"rank": 2, "nnls_tol": 0.0},
    ])
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ValueError):
            SolverConfig(**kwargs).validate()

    def test_per_mode_length_checked_against_order(self):
        cfg = SolverConfig(rank=2, alpha=[0.1, 0.2])
        with pytest.raises(ValueError):
            cfg.validate(order=3)
        cfg3 = SolverConfig(rank=2, alpha=[0.1, 0.2, 0.3])
        cfg3.validate(order=3)
        assert cfg3.per_mode(3) == ([0.1, 0.2, 0.3], [0.0, 0.0, 0.0])

    def test_negative_weights_rejected(self):
        with pytest.raises(ValueError):
            SolverConfig(rank=2, beta=-0.1).validate(order=3)

    def test_normalizes_spellings(self):
        cfg = SolverConfig(rank=2, method="HALS", stop_rule="relerr-change")
        assert cfg.method == "hals"
        assert cfg.stop_rule == "relerr_change"


class TestInitFactors:
    def cfg(self, method="als", seed=11, rank=4):
        return SolverConfig(rank=rank, method=method, rng_seed=seed)

    def test_deterministic(self):
        a = init_factors((6, 7, 8), self.cfg())
        b = init_factors((6, 7, 8), self.cfg())
        for x, y in zip(a, b):
            assert_array_equal(x, y)

    def test_seed_changes_draw(self):
        a = init_factors((6, 7, 8), self.cfg(seed=1))
        b = init_factors((6, 7, 8), self.cfg(seed=2))
        assert not np.array_equal(np.asarray(a[0]), np.asarray(b[0]))

    def test_nonnegative_with_half_zeros(self):
        factors = init_factors((40, 50), self.cfg(rank=30))
        stacked = np.concatenate([np.asarray(f).ravel() for f in factors])
        assert stacked.min() >= 0.0
        frac = np.mean(stacked == 0.0)
        assert 0.40 < frac < 0.60        # clipped standard normal

    def test_multiplicative_offset(self):
        cfg = self.cfg(method="mu")
        factors = init_factors((30, 30), cfg)
        lows = min(float(np.asarray(f).min()) for f in factors)
        assert lows >= cfg.mu_init_offset
        assert lows == pytest.approx(cfg.mu_init_offset)


class TestGramSpectralNorm:
    def test_diagonal(self):
        assert gram_spectral_norm(np.diag([3.0, 1.0, 0.5])) == pytest.approx(3.0)

    def test_identity(self):
        assert gram_spectral_norm(np.eye(5)) == pytest.approx(1.0)

    def test_zero(self):
        assert gram_spectral_norm(np.zeros((3, 3))) == 0.0

    def test_matches_eigvalsh(self, rng):
        for _ in range(10):
            f = rng.random((8, 5))
            gram = f.T @ f
            expected = float(np.linalg.eigvalsh(gram)[-1])
            assert gram_spectral_norm(gram) == pytest.approx(expected, rel=1e-8)


class TestUpdateMu:
    def test_exact_model_is_fixed_point(self, rng):
        t, factors = exact_model(rng)
        ctx = subproblem_context(t, factors, 1)
        updated = update_mu(np.asarray(factors[1]), ctx, alpha=0.0, beta=0.0)
        assert_allclose(updated, np.asarray(factors[1]), rtol=1e-12)

    def test_zero_numerator_shrinks_to_floor(self):
        factor = np.full((3, 2), 0.5)
        ctx = ctx_of(np.eye(2), np.zeros((3, 2)))
        updated = update_mu(factor, ctx, alpha=0.0, beta=0.0, floor=1e-16)
        assert_array_equal(updated, np.full((3, 2), 1e-16))

    def test_output_strictly_positive(self, rng):
        factor = rng.random((4, 3)) + 1e-9
        f = rng.random((6, 3))
        ctx = ctx_of(f.T @ f + np.eye(3), rng.standard_normal((4, 3)))
        updated = update_mu(factor, ctx, alpha=0.1, beta=0.2)
        assert float(updated.min()) > 0.0

    def test_penalties_shrink_entries(self, rng):
        t, factors = exact_model(rng)
        ctx = subproblem_context(t, factors, 0)
        plain = update_mu(np.asarray(factors[0]), ctx, 0.0, 0.0)
        penalized = update_mu(np.asarray(factors[0]), ctx, 1.0, 1.0)
        assert float((penalized < plain).mean()) == 1.0


class TestUpdateAls:
    def test_identity_gram_clips_mttkrp(self, rng):
        mt = rng.standard_normal((5, 3))
        updated = update_als(np.zeros((5, 3)), ctx_of(np.eye(3), mt), 0.0, 0.0)
        assert_allclose(updated, np.maximum(mt, 0.0), atol=1e-14)

    def test_beta_shifts_rhs(self, rng):
        mt = rng.standard_normal((5, 3))
        updated = update_als(np.zeros((5, 3)), ctx_of(np.eye(3), mt), 0.0, 0.25)
        assert_allclose(updated, np.maximum(mt - 0.25, 0.0), atol=1e-14)

    def test_alpha_adds_ridge(self, rng):
        mt = np.abs(rng.standard_normal((4, 2))) + 0.1
        updated = update_als(np.zeros((4, 2)), ctx_of(np.eye(2), mt), 1.0, 0.0)
        assert_allclose(updated, mt / 2.0, atol=1e-14)

    def test_matches_dense_solve(self, rng):
        f = rng.random((7, 3))
        gram = f.T @ f + 0.5 * np.eye(3)
        mt = rng.standard_normal((6, 3))
        updated = update_als(np.zeros((6, 3)), ctx_of(gram, mt), 0.0, 0.0)
        expected = np.maximum(np.linalg.solve(gram, mt.T).T, 0.0)
        assert_allclose(updated, expected, atol=1e-11)

    def test_indefinite_gram_raises_with_mode(self):
        gram = np.array([[1.0, 2.0], [2.0, 1.0]])       # eigenvalues 3, -1
        with pytest.raises(IllConditionedSubproblemError, match="mode 1"):
            update_als(np.zeros((3, 2)), ctx_of(gram, np.ones((3, 2)), mode=1),
                       0.0, 0.0)


class TestUpdateHals:
    def test_exact_model_is_fixed_point_unnormalized(self, rng):
        t, factors = exact_model(rng)
        ctx = subproblem_context(t, factors, 2)
        updated = update_hals(np.asarray(factors[2]), ctx, 0.0, 0.0,
                              normalize=False)
        assert_allclose(updated, np.asarray(factors[2]), rtol=1e-12)

    def test_sequential_columns_match_reference(self, rng):
        """Later columns must see the earlier columns' fresh values."""
        gram = np.array([[2.0, 0.8, 0.3], [0.8, 1.5, 0.4], [0.3, 0.4, 1.0]])
        factor = rng.random((5, 3))
        mt = rng.standard_normal((5, 3))
        beta = 0.05
        expected = factor.copy()
        for r in range(3):
            others = [s for s in range(3) if s != r]
            head = mt[:, r] - expected[:, others] @ gram[others, r] - beta
            expected[:, r] = np.maximum(head / gram[r, r], 0.0)
        got = update_hals(factor, ctx_of(gram, mt), 0.0, beta, normalize=False)
        assert_allclose(got, expected, atol=1e-12)

    def test_normalize_gives_unit_columns(self, rng):
        t, _ = exact_model(rng)
        factors = FactorSet(random_nonneg_factors(rng, t.shape, 3))
        ctx = subproblem_context(t, factors, 0)
        updated = update_hals(np.asarray(factors[0]), ctx, 0.0, 0.0,
                              normalize=True)
        norms = np.linalg.norm(updated, axis=0)
        assert_allclose(norms[norms > 0], 1.0, atol=1e-12)

    def test_large_beta_zeroes_columns(self, rng):
        t, factors = exact_model(rng)
        ctx = subproblem_context(t, factors, 1)
        updated = update_hals(np.asarray(factors[1]), ctx, 0.0, 1e6,
                              normalize=False)
        assert_array_equal(updated, np.zeros_like(updated))

    def test_zero_diagonal_column_is_zeroed(self):
        gram = np.array([[1.0, 0.0], [0.0, 0.0]])       # dead second component
        factor = np.ones((3, 2))
        mt = np.ones((3, 2))
        updated = update_hals(factor, ctx_of(gram, mt), 0.0, 0.0)
        assert_array_equal(updated[:, 1], np.zeros(3))


class TestUpdateApg:
    def make_state(self, mode_count=1):
        return ApgState(factors_prev=[np.zeros((1, 2))] * mode_count,
                        lipschitz_prev=[None] * mode_count)

    def test_momentum_sequence(self):
        state = self.make_state()
        assert state.t_prev == 1.0 and state.t_curr == 1.0
        assert state.omega_hat == 0.0
        state.advance_t()
        assert state.t_curr == pytest.approx(1.6180339887498949)
        assert state.omega_hat == 0.0                   # (1 - 1) / t_1
        state.advance_t()
        assert state.t_prev == pytest.approx(1.6180339887498949)
        assert state.t_curr == pytest.approx(2.1935270853310540)
        assert state.omega_hat == pytest.approx(0.28175352512532087)

    def test_plain_step_formula(self):
        # G = diag(4, 1) so L = 4; x+ = max(x - (xG - mt)/L, 0)
        gram = np.diag([4.0, 1.0])
        factor = np.ones((1, 2))
        state = self.make_state()
        got = update_apg(factor, ctx_of(gram, np.zeros((1, 2))), 0.0, 0.0,
                         state, omega_override=0.0)
        assert_allclose(got, [[0.0, 0.75]], atol=1e-14)

    def test_extrapolation_weight_applied(self):
        # with prev2 = 0 the step's second coordinate is 3 (1 + omega) / 4
        gram = np.diag([4.0, 1.0])
        factor = np.ones((1, 2))
        state = self.make_state()
        state.t_prev, state.t_curr = 3.0, 4.0           # omega_hat = 0.5
        got = update_apg(factor, ctx_of(gram, np.zeros((1, 2))), 0.0, 0.0, state)
        assert_allclose(got, [[0.0, 1.125]], atol=1e-14)

    def test_weight_capped_by_step_ratio(self):
        # L grew 16x, so the cap delta * sqrt(L_prev / L) = 0.9999 / 4 binds
        gram = np.diag([4.0, 1.0])
        factor = np.ones((1, 2))
        state = self.make_state()
        state.t_prev, state.t_curr = 3.0, 4.0
        state.lipschitz_prev[0] = 0.25
        got = update_apg(factor, ctx_of(gram, np.zeros((1, 2))), 0.0, 0.0, state)
        omega = 0.9999 * np.sqrt(0.25 / 4.0)
        assert_allclose(got, [[0.0, 3.0 * (1.0 + omega) / 4.0]], atol=1e-14)

    def test_state_bookkeeping(self):
        gram = np.diag([4.0, 1.0])
        factor = np.full((1, 2), 2.0)
        state = self.make_state()
        update_apg(factor, ctx_of(gram, np.zeros((1, 2))), 0.0, 0.0, state)
        assert_array_equal(state.factors_prev[0], factor)
        assert state.lipschitz_prev[0] == pytest.approx(4.0)

    def test_penalties_enter_gradient(self):
        gram = np.diag([4.0, 4.0])
        factor = np.ones((1, 2))
        state = self.make_state()
        # grad = xG + alpha x + beta - mt = (4 + 2 + 1) each; x+ = 1 - 7/4 < 0
        got = update_apg(factor, ctx_of(gram, np.zeros((1, 2))), 2.0, 1.0,
                         state, omega_override=0.0)
        assert_array_equal(got, [[0.0, 0.0]])

    def test_restart_check(self):
        assert apg_restart_check(1.1, 1.0)
        assert not apg_restart_check(1.0, 1.0)
        assert not apg_restart_check(0.9, 1.0)


class TestUpdateAnls:
    @pytest.mark.parametrize("variant", ["as", "bpp"])
    def test_identity_gram_clips(self, rng, variant):
        mt = rng.standard_normal((6, 3))
        got = update_anls(np.zeros((6, 3)), ctx_of(np.eye(3), mt), 0.0, 0.0,
                          variant=variant)
        assert_allclose(got, np.maximum(mt, 0.0), atol=1e-12)

    @pytest.mark.parametrize("variant", ["as", "bpp"])
    def test_penalties_augment_gram(self, variant):
        # I + 0.5 I + 1 = [[2.5, 1], [1, 2.5]]; solve against rhs (1, 2)
        ctx = ctx_of(np.eye(2), np.array([[1.0, 2.0]]))
        got = update_anls(np.zeros((1, 2)), ctx, 0.5, 1.0, variant=variant)
        assert_allclose(got, [[2.0 / 21.0, 16.0 / 21.0]], atol=1e-12)

    def test_variants_agree(self, rng):
        f = rng.random((8, 4))
        gram = f.T @ f + 0.01 * np.eye(4)
        mt = rng.standard_normal((7, 4))
        a = update_anls(np.zeros((7, 4)), ctx_of(gram, mt), 0.0, 0.1, "as")
        b = update_anls(np.zeros((7, 4)), ctx_of(gram, mt), 0.0, 0.1, "bpp")
        assert_allclose(a, b, atol=1e-9)


def run(tensor, method, seed=5, **kwargs):
    defaults = dict(rank=2, method=method, alpha=0.0, beta=0.0,
                    stop_epsilon=1e-10, max_iters=50, rng_seed=seed)
    defaults.update(kwargs)
    return decompose(tensor, SolverConfig(**defaults))


class TestDecomposeValidation:
    def test_rejects_low_order(self, rng):
        with pytest.raises(ValueError):
            run(rng.random((4, 5)), "hals")

    def test_rejects_negative_entries(self, rng):
        arr = rng.random((3, 3, 3))
        arr[0, 0, 0] = -1e-9
        with pytest.raises(ValueError):
            run(arr, "hals")

    def test_rejects_mismatched_initial(self, rng):
        t = DenseTensor(rng.random((3, 4, 5)))
        bad = FactorSet([np.ones((3, 2)), np.ones((4, 2)), np.ones((6, 2))])
        with pytest.raises(ValueError):
            decompose(t, SolverConfig(rank=2, max_iters=2), initial=bad)

    def test_rejects_wrong_rank_initial(self, rng):
        t = DenseTensor(rng.random((3, 4, 5)))
        bad = FactorSet([np.ones((e, 3)) for e in (3, 4, 5)])
        with pytest.raises(ValueError):
            decompose(t, SolverConfig(rank=2, max_iters=2), initial=bad)


class TestDecomposeBehaviour:
    @pytest.mark.parametrize("method", METHODS)
    def test_deterministic_given_seed(self, rng, method):
        arr = rng.random((5, 6, 4))
        a = run(arr, method, seed=3, max_iters=8)
        b = run(arr, method, seed=3, max_iters=8)
        for x, y in zip(a.factors, b.factors):
            assert_array_equal(np.asarray(x), np.asarray(y))
        assert [r.objective for r in a.trace] == [r.objective for r in b.trace]

    @pytest.mark.parametrize("method", [m for m in METHODS if m != "als"])
    def test_recovers_exact_low_rank_model(self, method):
        # ALS carries no convergence guarantee and is checked separately
        t, _ = separated_model()
        result = run(t, method, seed=1, max_iters=2000, alpha=1e-6,
                     stop_epsilon=1e-14)
        assert min(row.rel_err for row in result.trace) < 1e-3

    def test_als_reported_but_not_gated(self):
        t, _ = separated_model()
        result = run(t, "als", seed=1, max_iters=300, alpha=1e-6)
        assert np.isfinite(result.final.objective)

    @pytest.mark.parametrize("method", METHODS)
    def test_zero_tensor_stays_finite(self, method):
        # degenerate input: no NaNs or crashes; objective is penalties only
        result = run(np.zeros((3, 4, 3)), method, max_iters=5)
        for factor in result.factors:
            assert not np.isnan(np.asarray(factor)).any()
        assert result.final.ncp_objective <= 1e-12
        assert not np.isnan(result.final.objective)

    def test_low_memory_path_identical(self, rng):
        arr = rng.random((4, 5, 6))
        a = run(arr, "hals", seed=9, max_iters=10)
        b = run(arr, "hals", seed=9, max_iters=10, precompute_unfoldings=False)
        for x, y in zip(a.factors, b.factors):
            assert_array_equal(np.asarray(x), np.asarray(y))

    def test_initial_factors_honoured(self, rng):
        # the exact factors are a fixed point of the projected solve
        t, truth = exact_model(rng)
        result = decompose(t, SolverConfig(rank=3, method="als", alpha=0.0,
                                           max_iters=1, stop_epsilon=1e-14),
                           initial=truth)
        assert result.final.rel_err < 1e-10

    def test_hals_reconverges_after_normalization(self):
        # column normalization moves off the exact point; sweeps return to it
        t, truth = separated_model()
        result = decompose(t, SolverConfig(rank=2, method="hals", alpha=0.0,
                                           max_iters=200, stop_epsilon=1e-16),
                           initial=truth)
        assert result.final.rel_err < 1e-6

    def test_order_four_and_five(self, rng):
        for shape in [(3, 4, 3, 4), (3, 3, 3, 3, 3)]:
            result = run(rng.random(shape), "anls-bpp", max_iters=5,
                         alpha=1e-6)
            assert result.iterations == 5
            assert np.isfinite(result.final.objective)


class TestTerminationRules:
    def test_max_iters(self, rng):
        result = run(rng.random((4, 4, 4)), "hals", max_iters=5,
                     stop_epsilon=1e-300)
        assert result.termination == "max_iters"
        assert result.iterations == 5
        assert len(result.trace) == 5

    def test_epsilon_reached(self, rng):
        result = run(rng.random((4, 4, 4)), "hals", max_iters=100,
                     stop_epsilon=1e10)
        assert result.termination == "epsilon_reached"
        assert result.iterations == 2          # first iteration with a delta

    def test_max_time(self, rng):
        result = run(rng.random((4, 4, 4)), "hals", max_iters=100,
                     stop_epsilon=1e-300, max_seconds=1e-9)
        assert result.termination == "max_time"
        assert result.iterations == 1          # checked after each full sweep

    def test_epsilon_beats_max_iters_on_tie(self, rng):
        result = run(rng.random((4, 4, 4)), "hals", max_iters=2,
                     stop_epsilon=1e10)
        assert result.termination == "epsilon_reached"

    def test_objective_change_rule(self, rng):
        result = run(rng.random((4, 4, 4)), "hals", max_iters=100,
                     stop_rule="objective_change", stop_epsilon=1e10)
        assert result.termination == "epsilon_reached"
        assert result.iterations == 2


class TestTraceInvariants:
    def test_fields_consistent(self, rng):
        result = run(rng.random((5, 4, 3)), "anls-bpp", max_iters=8,
                     alpha=0.01, beta=0.05)
        for i, row in enumerate(result.trace, start=1):
            assert row.iteration == i
            assert row.fit == 1.0 - row.rel_err
            assert row.objective >= row.ncp_objective    # penalties are >= 0
        elapsed = [row.elapsed_seconds for row in result.trace]
        assert elapsed == sorted(elapsed)

    def test_unpenalized_objective_equals_residual(self, rng):
        result = run(rng.random((5, 4, 3)), "hals", max_iters=6)
        for row in result.trace:
            assert row.objective == row.ncp_objective

    def test_trace_objective_matches_naive_recomputation(self, rng):
        """The fast in-loop objective agrees with a dense reconstruction."""
        arr = rng.random((5, 6, 4))
        for method, beta in [("mu", 0.1), ("hals", 0.2), ("anls-bpp", 0.3)]:
            result = run(arr, method, max_iters=6, alpha=0.01, beta=beta)
            factors = [np.asarray(f) for f in result.factors]
            ncp = ncp_objective_by_reconstruction(arr, factors)
            assert result.final.ncp_objective == pytest.approx(
                ncp, rel=1e-10, abs=1e-12)
            penalty = 0.0
            for f in factors:
                penalty += 0.5 * 0.01 * float(np.sum(f * f))
                if method.startswith("anls"):
                    rows = np.abs(f).sum(axis=1)
                    penalty += 0.5 * beta * float(rows @ rows)
                else:
                    penalty += beta * float(np.abs(f).sum())
            assert result.final.objective == pytest.approx(
                ncp + penalty, rel=1e-10, abs=1e-12)


class TestMethodGuarantees:
    @pytest.mark.parametrize("method,beta", [
        ("mu", 0.0), ("mu", 0.3),
        ("anls-as", 0.0), ("anls-as", 0.3),
        ("anls-bpp", 0.0), ("anls-bpp", 0.3),
        ("hals", 0.0), ("hals", 0.3),
    ])
    def test_per_sweep_monotonicity(self, rng, method, beta):
        arr = rng.random((6, 7, 5))
        result = run(arr, method, max_iters=40, alpha=1e-6, beta=beta,
                     stop_epsilon=1e-300)
        objectives = [row.objective for row in result.trace]
        slack = 1e-10 * objectives[0]
        for prev, curr in zip(objectives, objectives[1:]):
            assert curr <= prev + slack

    def test_apg_accepted_sequence_non_increasing(self, rng):
        arr = rng.random((6, 7, 5))
        result = run(arr, "apg", max_iters=60, alpha=1e-6, beta=0.1,
                     stop_epsilon=1e-300)
        objectives = [row.objective for row in result.trace]
        slack = 1e-9 * objectives[0]
        for prev, curr in zip(objectives, objectives[1:]):
            assert curr <= prev + slack

    def test_hals_interior_modes_unit_norm(self, rng):
        arr = rng.random((6, 5, 7, 4))
        result = run(arr, "hals", max_iters=12, rank=3, beta=0.01)
        for factor in list(result.factors)[:-1]:
            norms = np.linalg.norm(np.asarray(factor), axis=0)
            live = norms[norms > 0]
            assert np.abs(live - 1.0).max() <= 1e-12

    def test_mu_iterates_strictly_positive(self, rng):
        arr = rng.random((5, 5, 5))
        result = run(arr, "mu", max_iters=25, beta=0.5)
        for factor in result.factors:
            assert float(np.asarray(factor).min()) > 0.0

    def test_sparsity_increases_with_beta(self, rng):
        t, _ = exact_model(rng, shape=(8, 8, 8), rank=3)
        noisy = DenseTensor(t.data + 0.01 * rng.random(t.shape))
        free = run(noisy, "anls-bpp", rank=6, max_iters=60, alpha=1e-6,
                   beta=0.0)
        tight = run(noisy, "anls-bpp", rank=6, max_iters=60, alpha=1e-6,
                    beta=2.0)
        nnz_free = sum(float((np.abs(np.asarray(f)) >= 1e-3).mean())
                       for f in free.factors)
        nnz_tight = sum(float((np.abs(np.asarray(f)) >= 1e-3).mean())
                        for f in tight.factors)
        assert nnz_tight < nnz_free
