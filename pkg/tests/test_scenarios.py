"""Samplers, the synthetic market, scalar distributions with closed forms,
and the returns-CSV reader."""

import numpy as np
import pytest

from shortfall.scenarios import (
    EmpiricalBootstrapSampler,
    ExponentialDist,
    GaussianDist,
    GaussianVectorSampler,
    PointMassDist,
    PointMassSampler,
    ReturnsData,
    UniformDist,
    analytic_cvar,
    analytic_entropic,
    analytic_var,
    entropic_gradient,
    entropic_objective,
    independent_streams,
    parse_dist,
    read_returns,
    synthetic_market,
    write_returns,
)

from oracles import (
    exponential_cvar,
    exponential_var,
    gaussian_cvar,
    gaussian_var,
    uniform_cvar,
    uniform_var,
)


class TestSyntheticMarket:
    def test_deterministic_and_documented_means(self):
        mu1, sig1 = synthetic_market(5, structure_seed=0)
        mu2, sig2 = synthetic_market(5, structure_seed=0)
        np.testing.assert_array_equal(mu1, mu2)
        np.testing.assert_array_equal(sig1, sig2)
        np.testing.assert_allclose(mu1, 0.02 * np.arange(1, 6))

    def test_structure_seed_changes_covariance_not_means(self):
        mu0, sig0 = synthetic_market(4, structure_seed=0)
        mu9, sig9 = synthetic_market(4, structure_seed=9)
        np.testing.assert_array_equal(mu0, mu9)
        assert not np.allclose(sig0, sig9)

    def test_covariance_positive_definite(self):
        for d in (1, 2, 7):
            _, sig = synthetic_market(d)
            np.testing.assert_allclose(sig, sig.T)
            assert np.linalg.eigvalsh(sig).min() > 0


class TestGaussianVectorSampler:
    def test_equal_specs_equal_streams(self):
        mu, sig = synthetic_market(3)
        a = GaussianVectorSampler(mu=mu, sigma=sig)
        b = GaussianVectorSampler(mu=mu, sigma=sig)
        ra = np.random.default_rng(np.random.SeedSequence(42))
        rb = np.random.default_rng(np.random.SeedSequence(42))
        np.testing.assert_array_equal(a.draw(ra, 100), b.draw(rb, 100))

    def test_draw_schedule_independence(self):
        # chunking the draws differently must not change the stream
        mu, sig = synthetic_market(3)
        s = GaussianVectorSampler(mu=mu, sigma=sig)
        r1 = np.random.default_rng(np.random.SeedSequence(7))
        r2 = np.random.default_rng(np.random.SeedSequence(7))
        chunked = np.vstack([s.draw(r1, 4), s.draw(r1, 6)])
        np.testing.assert_array_equal(chunked, s.draw(r2, 10))

    def test_sample_moments(self):
        mu, sig = synthetic_market(3, structure_seed=1)
        s = GaussianVectorSampler(mu=mu, sigma=sig)
        rng = np.random.default_rng(np.random.SeedSequence(11))
        draws = s.draw(rng, 200_000)
        np.testing.assert_allclose(draws.mean(axis=0), mu, atol=0.005)
        np.testing.assert_allclose(np.cov(draws.T), sig, atol=0.01)

    def test_near_degenerate_noise(self):
        mu = np.array([0.3, -0.2])
        s = GaussianVectorSampler(mu=mu, sigma=1e-20 * np.eye(2))
        rng = np.random.default_rng(np.random.SeedSequence(0))
        draws = s.draw(rng, 10_000)
        np.testing.assert_allclose(draws.mean(axis=0), mu, atol=1e-8)

    def test_rejects_non_positive_definite(self):
        with pytest.raises(ValueError):
            GaussianVectorSampler(mu=np.zeros(2),
                                  sigma=np.array([[1.0, 2.0], [2.0, 1.0]]))
        with pytest.raises(ValueError):
            GaussianVectorSampler(mu=np.zeros(2),
                                  sigma=np.array([[1.0, 0.5], [0.4, 1.0]]))


class TestPointMassSampler:
    def test_every_draw_is_the_point(self):
        p = np.array([0.1, 0.9])
        s = PointMassSampler(point=p)
        rng = np.random.default_rng(np.random.SeedSequence(1))
        draws = s.draw(rng, 17)
        assert draws.shape == (17, 2)
        assert (draws == p).all()


class TestBootstrapSampler:
    def test_zero_noise_single_row(self):
        row = np.array([[0.01, -0.02, 0.005]])
        s = EmpiricalBootstrapSampler(rows=row, noise_scale=0.0)
        rng = np.random.default_rng(np.random.SeedSequence(2))
        draws = s.draw(rng, 25)
        assert (draws == row[0]).all()

    def test_zero_noise_draws_are_rows(self):
        rows = np.array([[1.0, 0.0], [2.0, 1.0], [3.0, -1.0]])
        s = EmpiricalBootstrapSampler(rows=rows, noise_scale=0.0)
        rng = np.random.default_rng(np.random.SeedSequence(3))
        draws = s.draw(rng, 200)
        row_set = {tuple(r) for r in rows}
        assert all(tuple(d) in row_set for d in draws)

    def test_variance_inflation(self):
        # independent gaussian noise with variance s*var adds exactly that
        # much on top of the resampling variance
        rng0 = np.random.default_rng(np.random.SeedSequence(4))
        rows = rng0.normal(0.0, 0.02, size=(300, 2))
        s = EmpiricalBootstrapSampler(rows=rows, noise_scale=0.1)
        rng = np.random.default_rng(np.random.SeedSequence(5))
        draws = s.draw(rng, 100_000)
        target = 1.1 * rows.var(axis=0)
        np.testing.assert_allclose(draws.var(axis=0), target, rtol=0.05)


def test_independent_streams_deterministic():
    a = independent_streams(123, 4)
    b = independent_streams(123, 4)
    for ga, gb in zip(a, b):
        assert ga.standard_normal(5) == pytest.approx(gb.standard_normal(5))
    fresh = independent_streams(123, 4)
    first = fresh[0].standard_normal(5)
    second = fresh[1].standard_normal(5)
    assert not np.allclose(first, second)


# ---------------------------------------------------------------------------
# scalar distributions


class TestParseDist:
    @pytest.mark.parametrize("text,expected", [
        ("gaussian:-1,4", GaussianDist(mean=-1.0, var=4.0)),
        ("gaussian:0,1", GaussianDist(mean=0.0, var=1.0)),
        ("uniform:0,1", UniformDist(lo=0.0, hi=1.0)),
        ("exponential:2", ExponentialDist(rate=2.0)),
        ("pointmass:3", PointMassDist(c=3.0)),
    ])
    def test_valid(self, text, expected):
        assert parse_dist(text) == expected

    @pytest.mark.parametrize("text", [
        "gaussian", "gaussian:1", "gaussian:0,-1", "uniform:2,1",
        "exponential:0", "weibull:1", "", "pointmass:a",
    ])
    def test_invalid(self, text):
        with pytest.raises(ValueError):
            parse_dist(text)


class TestScalarDraws:
    def test_gaussian_chunking_stable(self):
        d = GaussianDist(mean=-1.0, var=4.0)
        r1 = np.random.default_rng(np.random.SeedSequence(6))
        r2 = np.random.default_rng(np.random.SeedSequence(6))
        chunked = np.concatenate([d.draw(r1, 3), d.draw(r1, 5)])
        np.testing.assert_array_equal(chunked, d.draw(r2, 8))

    def test_moments(self):
        rng = np.random.default_rng(np.random.SeedSequence(13))
        g = GaussianDist(mean=-1.0, var=4.0).draw(rng, 200_000)
        assert g.mean() == pytest.approx(-1.0, abs=0.02)
        assert g.var() == pytest.approx(4.0, rel=0.02)
        u = UniformDist(lo=2.0, hi=5.0).draw(rng, 100_000)
        assert u.min() >= 2.0 and u.max() <= 5.0
        assert u.mean() == pytest.approx(3.5, abs=0.02)
        e = ExponentialDist(rate=2.0).draw(rng, 200_000)
        assert e.mean() == pytest.approx(0.5, abs=0.01)
        p = PointMassDist(c=1.25).draw(rng, 10)
        assert (p == 1.25).all()


class TestClosedForms:
    def test_var_cvar_match_oracles(self):
        for alpha in (0.1, 0.5, 0.9, 0.975):
            g = GaussianDist(mean=-1.0, var=4.0)
            assert analytic_var(g, alpha) == pytest.approx(
                gaussian_var(-1.0, 4.0, alpha), abs=1e-12)
            assert analytic_cvar(g, alpha) == pytest.approx(
                gaussian_cvar(-1.0, 4.0, alpha), abs=1e-12)
            u = UniformDist(lo=0.0, hi=1.0)
            assert analytic_var(u, alpha) == pytest.approx(
                uniform_var(0.0, 1.0, alpha), abs=1e-12)
            assert analytic_cvar(u, alpha) == pytest.approx(
                uniform_cvar(0.0, 1.0, alpha), abs=1e-12)
            e = ExponentialDist(rate=2.0)
            assert analytic_var(e, alpha) == pytest.approx(
                exponential_var(2.0, alpha), abs=1e-12)
            assert analytic_cvar(e, alpha) == pytest.approx(
                exponential_cvar(2.0, alpha), abs=1e-12)
        p = PointMassDist(c=2.0)
        assert analytic_var(p, 0.3) == -2.0
        assert analytic_cvar(p, 0.3) == -2.0

    def test_entropic_closed_forms(self):
        assert analytic_entropic(GaussianDist(mean=-1.0, var=4.0), 0.5) == 2.0
        assert analytic_entropic(GaussianDist(mean=0.0, var=0.0), 1.0) == 0.0
        assert analytic_entropic(GaussianDist(mean=3.0, var=2.0), 1.0) == -2.0
        assert analytic_entropic(PointMassDist(c=1.5), 0.7) == -1.5

    @pytest.mark.parametrize("dist,beta", [
        (UniformDist(lo=-1.0, hi=2.0), 0.5),
        (ExponentialDist(rate=3.0), 1.0),
    ])
    def test_entropic_matches_monte_carlo(self, dist, beta):
        # (1/beta) log E[exp(-beta X)] against a big plain-average sample
        rng = np.random.default_rng(np.random.SeedSequence(14))
        x = dist.draw(rng, 2_000_000)
        mc = np.log(np.mean(np.exp(-beta * x))) / beta
        assert analytic_entropic(dist, beta) == pytest.approx(mc, abs=0.01)

    def test_entropic_objective_and_gradient(self):
        theta = np.full(4, 0.25)
        val = entropic_objective(theta, np.zeros(4), np.eye(4), 2.0)
        assert val == pytest.approx(0.25)
        np.testing.assert_allclose(
            entropic_gradient(np.zeros(3), np.array([1.0, 2.0, 3.0]),
                              np.eye(3), 1.0),
            [-1.0, -2.0, -3.0])
        # scalar case agrees with the distributional closed form
        mu, var, beta, t = 1.5, 2.0, 0.8, 0.6
        scalar = entropic_objective(np.array([t]), np.array([mu]),
                                    np.array([[var]]), beta)
        dist_value = analytic_entropic(GaussianDist(mean=t * mu,
                                                    var=t * t * var), beta)
        assert scalar == pytest.approx(dist_value)


# ---------------------------------------------------------------------------
# returns CSV


class TestReturnsIO:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "r.csv"
        data = ReturnsData(
            dates=["2024-01-02", "2024-01-03"],
            tickers=["AAA", "BBB"],
            values=np.array([[0.01, -0.02], [0.005, 0.03]]),
            dropped_rows=0,
        )
        write_returns(path, data)
        back = read_returns(path)
        assert back.dates == data.dates
        assert back.tickers == data.tickers
        np.testing.assert_allclose(back.values, data.values)
        assert back.dropped_rows == 0

    def test_incomplete_rows_dropped_and_counted(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text(
            "date,X,Y\n"
            "2024-01-01,0.01,0.02\n"
            "2024-01-02,,0.01\n"
            "2024-01-03,0.03,oops\n"
            "2024-01-04,-0.01,0.0\n"
        )
        data = read_returns(path)
        assert data.dropped_rows == 2
        assert data.dates == ["2024-01-01", "2024-01-04"]
        np.testing.assert_allclose(data.values,
                                   [[0.01, 0.02], [-0.01, 0.0]])

    def test_price_conversion(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text(
            "date,X,Y\n"
            "2024-01-01,1.0,2.0\n"
            "2024-01-02,2.0,1.0\n"
            "2024-01-03,1.0,1.5\n"
        )
        data = read_returns(path, prices=True)
        # first row is consumed as the base prices
        assert data.dates == ["2024-01-02", "2024-01-03"]
        np.testing.assert_allclose(data.values,
                                   [[1.0, -0.5], [-0.5, 0.5]])

    def test_zero_price_rejected(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("date,X\n2024-01-01,1.0\n2024-01-02,0.0\n")
        with pytest.raises(ValueError):
            read_returns(path, prices=True)

    def test_missing_date_header_rejected(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("day,X\n2024-01-01,0.01\n")
        with pytest.raises(ValueError) as info:
            read_returns(path)
        assert "date" in str(info.value)
