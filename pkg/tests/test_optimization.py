"""Tests for projections, the deterministic mean-variance oracle, and the
projected stochastic-gradient driver."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import mean_variance_objective, simplex_grid_min, simplex_grid_nearest
from shortfall.estimation import EstimationError
from shortfall.optimization import (
    BallProjection,
    BoxProjection,
    IdentityProjection,
    OCEObjective,
    SGAbort,
    SGConfig,
    SGTrace,
    SimplexProjection,
    UBSRObjective,
    deterministic_mv_optimum,
    project_simplex,
    sg_run,
)
from shortfall.risk_functions import EntropicLoss, EntropicUtility, PiecewiseLinearLoss
from shortfall.scenarios import (
    GaussianVectorSampler,
    PointMassSampler,
    synthetic_market,
)


# ---------------------------------------------------------------------------
# projections


class TestSimplexProjection:
    def test_uniform_shift(self):
        out = project_simplex(np.array([0.5, 0.5, 0.5]))
        np.testing.assert_allclose(out, np.full(3, 1.0 / 3.0), atol=1e-12)

    def test_already_on_simplex_is_fixed_point(self):
        v = np.array([0.2, 0.3, 0.5])
        np.testing.assert_allclose(project_simplex(v), v, atol=1e-12)

    def test_outside_point_hits_vertex(self):
        v = np.array([2.0, -1.0])
        out = project_simplex(v)
        np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-12)
        # independent check: brute-force nearest point on the 1-simplex
        np.testing.assert_allclose(out, simplex_grid_nearest(v), atol=1e-4)

    def test_matches_grid_oracle_on_random_2d_points(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            v = rng.uniform(-3, 3, size=2)
            np.testing.assert_allclose(
                project_simplex(v), simplex_grid_nearest(v), atol=1e-4
            )

    def test_output_always_on_simplex(self):
        proj = SimplexProjection()
        rng = np.random.default_rng(5)
        for d in (1, 2, 3, 7, 40):
            v = rng.uniform(-10, 10, size=d)
            w = proj.project(v)
            assert proj.contains(w)
            assert w.sum() == pytest.approx(1.0, abs=1e-12)
            assert np.all(w >= 0.0)


PROJECTIONS = [
    SimplexProjection(),
    BoxProjection(-1.0, 2.0),
    BallProjection(1.5),
    BallProjection(2.0, center=np.array([1.0, -1.0, 0.5])),
    IdentityProjection(),
]


@st.composite
def vector_pairs(draw):
    d = 3
    elems = st.floats(min_value=-50, max_value=50, allow_nan=False)
    u = draw(st.lists(elems, min_size=d, max_size=d))
    v = draw(st.lists(elems, min_size=d, max_size=d))
    return np.array(u), np.array(v)


class TestProjectionProperties:
    @pytest.mark.parametrize("proj", PROJECTIONS, ids=lambda p: type(p).__name__)
    @given(pair=vector_pairs())
    @settings(max_examples=60, deadline=None)
    def test_nonexpansive_idempotent_feasible(self, proj, pair):
        u, v = pair
        pu, pv = proj.project(u), proj.project(v)
        # membership
        assert proj.contains(pu) and proj.contains(pv)
        # idempotency
        np.testing.assert_allclose(proj.project(pu), pu, atol=1e-9)
        # non-expansiveness
        assert np.linalg.norm(pu - pv) <= np.linalg.norm(u - v) + 1e-12

    def test_initial_points_feasible(self):
        for proj in PROJECTIONS:
            assert proj.contains(proj.initial_point(3))


class TestBoxProjection:
    def test_scalar_bounds_clip(self):
        proj = BoxProjection(0.0, 1.0)
        np.testing.assert_allclose(
            proj.project(np.array([-3.0, 0.4, 7.0])), [0.0, 0.4, 1.0]
        )

    def test_vector_bounds_clip_per_axis(self):
        proj = BoxProjection(np.array([0.0, -1.0]), np.array([1.0, 2.0]))
        np.testing.assert_allclose(proj.project(np.array([5.0, -5.0])), [1.0, -1.0])
        np.testing.assert_allclose(proj.initial_point(2), [0.5, 0.5])

    def test_rejects_inverted_bounds(self):
        with pytest.raises(ValueError):
            BoxProjection(1.0, 1.0)
        with pytest.raises(ValueError):
            BoxProjection(np.array([0.0, 2.0]), np.array([1.0, 1.0]))


class TestBallProjection:
    def test_scales_onto_sphere(self):
        proj = BallProjection(1.0)
        np.testing.assert_allclose(proj.project(np.array([3.0, 4.0])), [0.6, 0.8])

    def test_interior_point_unchanged(self):
        proj = BallProjection(10.0)
        v = np.array([1.0, 2.0])
        np.testing.assert_allclose(proj.project(v), v)

    def test_off_origin_center(self):
        proj = BallProjection(2.0, center=np.array([1.0, 1.0]))
        np.testing.assert_allclose(proj.project(np.array([5.0, 1.0])), [3.0, 1.0])

    def test_rejects_nonpositive_radius(self):
        with pytest.raises(ValueError):
            BallProjection(0.0)


# ---------------------------------------------------------------------------
# deterministic mean-variance optimum


class TestDeterministicMVOptimum:
    def test_symmetric_problem_gives_uniform(self):
        out = deterministic_mv_optimum(np.zeros(4), np.eye(4), 1.0, SimplexProjection())
        np.testing.assert_allclose(out, np.full(4, 0.25), atol=1e-9)

    def test_scalar_first_order_condition(self):
        out = deterministic_mv_optimum(
            np.array([1.0]), np.array([[2.0]]), 0.5, IdentityProjection()
        )
        # -1 + 0.5 * 2 * theta = 0  =>  theta = 1
        np.testing.assert_allclose(out, [1.0], atol=1e-8)

    def test_two_asset_boundary_solution(self):
        mu, sigma = np.array([1.0, 0.0]), np.eye(2)
        out = deterministic_mv_optimum(mu, sigma, 1.0, SimplexProjection())
        grid = simplex_grid_min(mean_variance_objective(mu, sigma, 1.0))
        np.testing.assert_allclose(out, grid, atol=1e-4)
        np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-8)

    def test_two_asset_interior_solution(self):
        mu, sigma = np.array([1.0, 0.0]), np.eye(2)
        out = deterministic_mv_optimum(mu, sigma, 2.0, SimplexProjection())
        grid = simplex_grid_min(mean_variance_objective(mu, sigma, 2.0))
        np.testing.assert_allclose(out, grid, atol=1e-4)
        np.testing.assert_allclose(out, [0.75, 0.25], atol=1e-8)

    def test_random_problems_beat_grid_oracle(self):
        rng = np.random.default_rng(23)
        for _ in range(5):
            mu = rng.uniform(-1, 1, size=2)
            a = rng.standard_normal((2, 2))
            sigma = a @ a.T + 0.1 * np.eye(2)
            beta = float(rng.uniform(0.5, 3.0))
            f = mean_variance_objective(mu, sigma, beta)
            out = deterministic_mv_optimum(mu, sigma, beta, SimplexProjection())
            grid = simplex_grid_min(f)
            assert f(out) <= f(grid) + 1e-8

    def test_rejects_indefinite_matrix(self):
        with pytest.raises(ValueError, match="positive-definite"):
            deterministic_mv_optimum(
                np.zeros(2), np.diag([1.0, -1.0]), 1.0, SimplexProjection()
            )

    def test_rejects_asymmetric_matrix(self):
        with pytest.raises(ValueError, match="symmetric"):
            deterministic_mv_optimum(
                np.zeros(2),
                np.array([[1.0, 0.5], [0.0, 1.0]]),
                1.0,
                SimplexProjection(),
            )

    def test_rejects_nonpositive_beta(self):
        with pytest.raises(ValueError, match="beta"):
            deterministic_mv_optimum(np.zeros(2), np.eye(2), 0.0, SimplexProjection())


# ---------------------------------------------------------------------------
# SG configuration


class TestSGConfig:
    def test_defaults_are_valid_and_theory_conforming(self):
        cfg = SGConfig(n_iterations=10)
        assert cfg.theory_conforming
        assert cfg.batch_size(3) == 3  # increasing, m0 = 1
        assert cfg.step_size(4) == pytest.approx(0.25)

    def test_boundary_exponent_accepted_but_flagged(self):
        cfg = SGConfig(n_iterations=10, step_exponent=0.5)
        assert not cfg.theory_conforming
        assert cfg.to_json()["theory_conforming"] is False

    def test_batch_schedules(self):
        inc = SGConfig(n_iterations=5, batch_schedule="increasing", m0=3)
        assert [inc.batch_size(k) for k in (1, 2, 3)] == [3, 6, 9]
        const = SGConfig(n_iterations=5, batch_schedule="constant", m0=7)
        assert [const.batch_size(k) for k in (1, 2, 3)] == [7, 7, 7]
        power = SGConfig(n_iterations=5, batch_schedule="power", power_p=1.5)
        assert [power.batch_size(k) for k in (1, 2, 4)] == [1, 3, 8]

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"n_iterations": 0},
            {"n_iterations": 5, "step_c": 0.0},
            {"n_iterations": 5, "step_exponent": 0.4},
            {"n_iterations": 5, "step_exponent": 1.1},
            {"n_iterations": 5, "batch_schedule": "geometric"},
            {"n_iterations": 5, "m0": 0},
            {"n_iterations": 5, "batch_schedule": "power", "power_p": 0.0},
            {"n_iterations": 5, "delta_scale": 0.0},
            {"n_iterations": 5, "epsilon": 0.0},
        ],
    )
    def test_invalid_configs_rejected(self, kwargs):
        with pytest.raises(ValueError):
            SGConfig(**kwargs)

    def test_json_echo_carries_all_run_parameters(self):
        cfg = SGConfig(
            n_iterations=9,
            step_c=2.0,
            step_exponent=0.75,
            batch_schedule="power",
            m0=2,
            power_p=1.2,
            delta_scale=0.5,
            epsilon=0.1,
            seed=42,
        )
        echo = cfg.to_json()
        assert echo["n_iterations"] == 9
        assert echo["step_c"] == 2.0
        assert echo["step_exponent"] == 0.75
        assert echo["batch_schedule"] == "power"
        assert echo["seed"] == 42
        assert echo["theory_conforming"] is True


# ---------------------------------------------------------------------------
# SG runs


ENTROPIC_HALF = EntropicLoss(beta=0.5, lam=1.0)


def market_sampler(d=5, structure_seed=0):
    mu, sigma = synthetic_market(d, structure_seed=structure_seed)
    return GaussianVectorSampler(mu=mu, sigma=sigma), mu, sigma


class TestSGRun:
    def test_bit_identical_replay(self):
        sampler, _, _ = market_sampler(3)
        cfg = SGConfig(n_iterations=40, step_c=1.0, seed=99)
        a = sg_run(UBSRObjective(ENTROPIC_HALF), sampler, SimplexProjection(), cfg)
        b = sg_run(UBSRObjective(ENTROPIC_HALF), sampler, SimplexProjection(), cfg)
        assert np.array_equal(a.theta, b.theta)
        assert np.array_equal(a.grad_norm, b.grad_norm)
        assert np.array_equal(a.m, b.m)

    def test_different_seed_changes_trace(self):
        sampler, _, _ = market_sampler(3)
        a = sg_run(
            UBSRObjective(ENTROPIC_HALF),
            sampler,
            SimplexProjection(),
            SGConfig(n_iterations=10, seed=0),
        )
        b = sg_run(
            UBSRObjective(ENTROPIC_HALF),
            sampler,
            SimplexProjection(),
            SGConfig(n_iterations=10, seed=1),
        )
        assert not np.array_equal(a.theta, b.theta)

    def test_every_iterate_feasible_and_trace_complete(self):
        sampler, _, _ = market_sampler(4)
        proj = SimplexProjection()
        cfg = SGConfig(n_iterations=50, seed=2)
        trace = sg_run(UBSRObjective(ENTROPIC_HALF), sampler, proj, cfg)
        assert trace.theta.shape == (50, 4)
        assert list(trace.k) == list(range(1, 51))
        for row in trace.theta:
            assert proj.contains(row)

    def test_sample_accounting_increasing_schedule(self):
        sampler, _, _ = market_sampler(2)
        n = 30
        cfg = SGConfig(n_iterations=n, batch_schedule="increasing", m0=1, seed=0)
        trace = sg_run(UBSRObjective(ENTROPIC_HALF), sampler, SimplexProjection(), cfg)
        # m_k = k and each iteration draws primary + auxiliary: n(n+1) total
        assert trace.total_samples == n * (n + 1)
        assert trace.metadata["total_samples"] == n * (n + 1)
        assert list(trace.m) == list(range(1, n + 1))

    def test_step_sizes_recorded(self):
        sampler, _, _ = market_sampler(2)
        cfg = SGConfig(n_iterations=5, step_c=2.0, step_exponent=1.0, seed=0)
        trace = sg_run(UBSRObjective(ENTROPIC_HALF), sampler, SimplexProjection(), cfg)
        np.testing.assert_allclose(trace.alpha, 2.0 / np.arange(1, 6))

    def test_infeasible_start_is_projected(self):
        z0 = np.array([0.3, 0.7])
        trace = sg_run(
            UBSRObjective(EntropicLoss(beta=1.0, lam=1.0)),
            PointMassSampler(point=z0),
            SimplexProjection(),
            SGConfig(n_iterations=3, seed=0),
            theta0=np.array([5.0, -5.0]),
        )
        assert SimplexProjection().contains(trace.theta[0])

    def test_point_mass_converges_to_vertex(self):
        # no noise: the run is deterministic ascent on theta . z0 and must
        # land on the vertex of the largest component within alpha_n
        z0 = np.array([0.2, 1.0, 0.5])
        cfg = SGConfig(
            n_iterations=200, step_c=1.0, batch_schedule="constant", m0=2, seed=3
        )
        trace = sg_run(
            UBSRObjective(EntropicLoss(beta=1.0, lam=1.0)),
            PointMassSampler(point=z0),
            SimplexProjection(),
            cfg,
        )
        vertex = np.zeros(3)
        vertex[int(np.argmax(z0))] = 1.0
        alpha_n = cfg.step_size(cfg.n_iterations)
        assert np.linalg.norm(trace.final_theta - vertex) <= alpha_n + 1e-9

    def test_entropic_market_run_closes_most_of_the_gap(self):
        sampler, mu, sigma = market_sampler(5)
        proj = SimplexProjection()
        star = deterministic_mv_optimum(mu, sigma, 0.5, proj)
        cfg = SGConfig(
            n_iterations=500,
            step_c=2.0,
            step_exponent=1.0,
            batch_schedule="increasing",
            m0=1,
            seed=7,
        )
        init_err = float(np.sum((proj.initial_point(5) - star) ** 2))
        trace = sg_run(UBSRObjective(ENTROPIC_HALF), sampler, proj, cfg, optimum=star)
        assert trace.err_sq[-1] < init_err / 10.0

    def test_entropic_oce_run_hits_same_target(self):
        # the exponential-utility objective has the same minimizer
        sampler, mu, sigma = market_sampler(5)
        proj = SimplexProjection()
        star = deterministic_mv_optimum(mu, sigma, 0.5, proj)
        cfg = SGConfig(
            n_iterations=500,
            step_c=2.0,
            step_exponent=1.0,
            batch_schedule="increasing",
            m0=1,
            seed=7,
        )
        init_err = float(np.sum((proj.initial_point(5) - star) ** 2))
        trace = sg_run(
            OCEObjective(EntropicUtility(beta=0.5)), sampler, proj, cfg, optimum=star
        )
        assert trace.err_sq[-1] < init_err / 10.0

    def test_estimator_failure_aborts_with_iteration_index(self):
        # threshold below the loss range: the root search can never bracket
        bad = PiecewiseLinearLoss(a=1.0, b=0.0, c=0.0, lam=-1.0)
        with pytest.raises(SGAbort) as exc_info:
            sg_run(
                UBSRObjective(bad),
                PointMassSampler(point=np.array([0.1, 0.2])),
                SimplexProjection(),
                SGConfig(n_iterations=5, seed=0),
            )
        assert exc_info.value.iteration == 1
        assert "iteration 1" in str(exc_info.value)
        assert isinstance(exc_info.value, RuntimeError)
        assert issubclass(SGAbort, RuntimeError)
        assert not issubclass(SGAbort, EstimationError)

    def test_error_columns_only_with_oracle(self):
        sampler, mu, sigma = market_sampler(2)
        cfg = SGConfig(n_iterations=4, seed=0)
        bare = sg_run(UBSRObjective(ENTROPIC_HALF), sampler, SimplexProjection(), cfg)
        assert bare.err_sq is None and bare.h_gap is None

        star = deterministic_mv_optimum(mu, sigma, 0.5, SimplexProjection())
        with_err = sg_run(
            UBSRObjective(ENTROPIC_HALF),
            sampler,
            SimplexProjection(),
            cfg,
            optimum=star,
        )
        assert with_err.err_sq is not None and with_err.h_gap is None

        f = mean_variance_objective(mu, sigma, 0.5)
        full = sg_run(
            UBSRObjective(ENTROPIC_HALF),
            sampler,
            SimplexProjection(),
            cfg,
            optimum=star,
            objective_fn=f,
        )
        assert full.err_sq is not None and full.h_gap is not None
        # gaps against the exact objective and its true minimizer are >= 0
        assert np.all(full.h_gap >= -1e-12)

    def test_metadata_echo(self):
        sampler, _, _ = market_sampler(2)
        cfg = SGConfig(n_iterations=3, seed=5)
        trace = sg_run(OCEObjective(EntropicUtility(beta=0.5)), sampler, SimplexProjection(), cfg)
        assert trace.metadata["config"] == cfg.to_json()
        assert trace.metadata["projection"] == "SimplexProjection"
        assert trace.metadata["objective"] == "OCEObjective"
        assert trace.metadata["dim"] == 2


class TestTraceSerialization:
    def make_trace(self, with_oracle: bool) -> SGTrace:
        z0 = np.array([0.3, 0.9])
        kwargs = {}
        if with_oracle:
            kwargs = {
                "optimum": np.array([0.0, 1.0]),
                "objective_fn": lambda th: -float(th @ z0),
            }
        return sg_run(
            UBSRObjective(EntropicLoss(beta=1.0, lam=1.0)),
            PointMassSampler(point=z0),
            SimplexProjection(),
            SGConfig(n_iterations=7, seed=1),
            **kwargs,
        )

    @pytest.mark.parametrize("with_oracle", [False, True])
    def test_csv_round_trip_is_bit_exact(self, tmp_path, with_oracle):
        trace = self.make_trace(with_oracle)
        path = tmp_path / "trace.csv"
        trace.to_csv(path)
        back = SGTrace.from_csv(path)
        assert np.array_equal(trace.k, back.k)
        assert np.array_equal(trace.theta, back.theta)
        assert np.array_equal(trace.alpha, back.alpha)
        assert np.array_equal(trace.m, back.m)
        assert np.array_equal(trace.grad_norm, back.grad_norm)
        if with_oracle:
            assert np.array_equal(trace.err_sq, back.err_sq)
            assert np.array_equal(trace.h_gap, back.h_gap)
        else:
            assert back.err_sq is None and back.h_gap is None

    def test_dataframe_columns(self):
        frame = self.make_trace(True).to_dataframe()
        assert list(frame.columns) == [
            "k",
            "theta_0",
            "theta_1",
            "alpha_k",
            "m_k",
            "grad_norm",
            "err_sq",
            "h_gap",
        ]
