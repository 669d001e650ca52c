import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

import quasiboot.bootstrap as bs
from conftest import crossed_table, grouped_table
from quasiboot.bootstrap import (
    BootstrapConfig,
    BootstrapOutput,
    confidence_interval,
    empirical_cdf,
    p_value,
    quantile,
    run_bootstrap,
    summarize,
    t_statistics,
)
from quasiboot.exceptions import BootstrapAbortError, ContractError, FitError
from quasiboot.glmm import FitResult, fit
from quasiboot.model_core import ModelSpec, ObservationTable
from quasiboot.simulate import SimConfig, generate_dataset

samples = st.lists(st.floats(-50, 50, allow_nan=False), min_size=2, max_size=60)


def point(beta, se):
    return FitResult(np.array([beta]), np.array([se]), ("(Intercept)",))


class TestQuantile:
    def test_examples(self):
        assert quantile([1, 2, 3, 4], 0.5) == 2.5
        assert quantile([4, 1, 3, 2], 0.0) == 1
        assert quantile([4, 1, 3, 2], 1.0) == 4
        assert quantile([10.0], 0.3) == 10.0

    @given(samples, st.floats(0, 1))
    def test_matches_numpy_linear(self, v, q):
        assert quantile(v, q) == pytest.approx(np.quantile(v, q), rel=1e-12, abs=1e-12)

    @given(samples, st.floats(0, 1), st.floats(0, 1))
    def test_monotone(self, v, a, b):
        lo, hi = sorted((a, b))
        assert quantile(v, lo) <= quantile(v, hi)

    def test_bad_input(self):
        with pytest.raises(ContractError):
            quantile([], 0.5)
        with pytest.raises(ContractError):
            quantile([1, 2], 1.5)

    @given(st.lists(st.floats(-50, 50, allow_nan=False), min_size=2, max_size=60, unique=True),
           st.floats(0, 1))
    def test_cdf_inverts_quantile(self, v, q):
        assert empirical_cdf(v, quantile(v, q)) == pytest.approx(q, abs=1e-9)

    def test_cdf_ties_take_midpoint(self):
        assert empirical_cdf([0, 1, 1, 1, 2], 1.0) == pytest.approx(0.5)


class TestInterval:
    def test_skewed_example(self):
        ts = np.linspace(-1, 3, 401)
        lo, hi = confidence_interval(point(0.5, 2.0), ts, 0.05, 0)
        assert (lo, hi) == pytest.approx((0.5 - 2.9 * 2, 0.5 + 0.9 * 2), abs=1e-12)

    def test_normal_limit(self):
        ts = np.random.default_rng(0).standard_normal(100_000)
        lo, hi = confidence_interval(point(0.0, 1.0), ts, 0.05, 0)
        assert lo == pytest.approx(-1.959964, rel=0.01)
        assert hi == pytest.approx(1.959964, rel=0.01)

    @given(samples)
    def test_order_invariant(self, ts):
        rev = list(reversed(ts))
        assert confidence_interval(point(1, 1), ts, 0.1, 0) == \
            confidence_interval(point(1, 1), rev, 0.1, 0)


class TestPValue:
    def test_centre_and_clamp(self):
        ts = np.arange(100) - 49.5
        assert p_value(point(0.0, 1.0), ts, 0) == 1.0
        assert p_value(point(1000.0, 1.0), ts, 0) == pytest.approx(0.01)

    def test_normal_limit(self):
        ts = np.random.default_rng(1).standard_normal(100_000)
        assert p_value(point(1.959964, 1.0), ts, 0) == pytest.approx(0.05, rel=0.05)

    @given(samples, st.floats(-60, 60), st.sampled_from([0.2, 0.1, 0.05]))
    def test_duality(self, ts, beta, alpha):
        ts = np.asarray(ts)
        assume(np.unique(ts).size == ts.size)
        base = point(beta, 1.0)
        lo, hi = confidence_interval(base, ts, alpha, 0)
        p = p_value(base, ts, 0)
        excludes = lo > 0 or hi < 0
        # only disagreement allowed: p clamped at 1/m, or t0 sitting on a quantile
        if excludes != (p <= alpha):
            step = 1.0 / (ts.size - 1)
            F = empirical_cdf(ts, beta)
            edge = min(abs(F - alpha / 2), abs(F - 1 + alpha / 2))
            assert edge <= step or 1.0 / ts.size > alpha

    @given(samples, st.floats(-60, 60), st.floats(-60, 60))
    def test_bounds(self, ts, beta, other):
        p = p_value(point(beta, 1.0), ts, 0)
        assert 1.0 / len(ts) <= p <= 1.0


def toy_fit(table, spec):
    return fit(table, spec)


class TestRunBootstrap:
    def test_config_validation(self):
        with pytest.raises(ContractError):
            BootstrapConfig(R=50)
        with pytest.raises(ContractError):
            BootstrapConfig(alpha=1.5)
        with pytest.raises(ValueError):
            BootstrapConfig(mode="jackknife")

    def test_degenerate_resampling(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(40, 1))
        y = rng.uniform(0.1, 0.9, 40)
        table = ObservationTable.from_arrays(y, x, ["x1"], {"s": ["one"] * 40})
        spec = ModelSpec.build(["x1"])
        base = fit(table, spec)
        out = run_bootstrap(table, spec, BootstrapConfig(R=100), base=base)
        for j in range(2):
            assert np.all(t_statistics(out, base, j) == 0.0)
        report = summarize(base, out)
        assert report.rows[1].ci_lower == report.rows[1].ci_upper == base.beta_hat[1]

    def test_workers_do_not_change_results(self):
        table, spec = grouped_table(20, n=200, k=10)
        base = fit(table, spec)
        one = run_bootstrap(table, spec, BootstrapConfig(R=120, seed=5, workers=1), base=base)
        many = run_bootstrap(table, spec, BootstrapConfig(R=120, seed=5, workers=3), base=base)
        assert np.array_equal(one.beta_star, many.beta_star)
        assert np.array_equal(one.se_star, many.se_star)
        assert summarize(base, one) == summarize(base, many)

    def test_t_statistics_recompute(self):
        table, spec = grouped_table(21, n=200, k=10)
        base = fit(table, spec)
        out = run_bootstrap(table, spec, BootstrapConfig(R=100, seed=1), base=base)
        j = 1
        expect = (out.beta_star[:, j] - base.beta_hat[j]) / out.se_star[:, j]
        assert np.array_equal(t_statistics(out, base, j), expect)

    def test_zero_se_replicates_are_dropped(self):
        base = point(0.0, 1.0)
        out = BootstrapOutput(np.array([[1.0], [2.0], [3.0]]), np.array([[1.0], [0.0], [2.0]]),
                              np.arange(3), {}, BootstrapConfig(R=100))
        assert t_statistics(out, base, 0).tolist() == [1.0, 1.5]

    def test_abort_on_failures(self, monkeypatch):
        table, spec = grouped_table(22, n=150, k=8)
        base = fit(table, spec)
        calls = {"n": 0}

        def flaky(t, s, start=None):
            calls["n"] += 1
            if calls["n"] % 10 == 0:
                raise FitError("synthetic failure")
            return toy_fit(t, s)

        monkeypatch.setattr(bs, "fit", flaky)
        with pytest.raises(BootstrapAbortError) as info:
            run_bootstrap(table, spec, BootstrapConfig(R=100, max_failure_fraction=0.05),
                          base=base)
        assert len(info.value.failures) == 10
        calls["n"] = 0
        out = run_bootstrap(table, spec, BootstrapConfig(R=100, max_failure_fraction=0.2),
                            base=base)
        assert out.n_failed == 10 and out.n_success == 90
        assert summarize(base, out).R_effective == 90

    def test_pigeonhole_mode(self):
        table, spec = crossed_table(23, n=200, ka=6, kb=5)
        base = fit(table, spec)
        out = run_bootstrap(table, spec, BootstrapConfig(R=100, mode="pigeonhole"), base=base)
        assert out.factors == ("a", "b")
        assert out.n_success >= 99

    def test_output_round_trip(self):
        table, spec = grouped_table(24, n=150, k=8)
        base = fit(table, spec)
        out = run_bootstrap(table, spec, BootstrapConfig(R=100, seed=3), base=base)
        back = BootstrapOutput.from_dict(out.to_dict())
        assert summarize(base, back) == summarize(base, out)

    def test_null_t_centred(self):
        cfg = SimConfig(rows=1000, levels=(40,), rho=0.6, seed=77)
        table, _ = generate_dataset(cfg, 0)
        base = fit(table, cfg.spec)
        out = run_bootstrap(table, cfg.spec, BootstrapConfig(R=1000, seed=9), base=base)
        for j in range(1, 4):
            assert abs(np.median(t_statistics(out, base, j))) < 0.1

    def test_granularity_flag(self):
        table, spec = grouped_table(25, n=300, k=12, beta=[0.0, 2.0, 0.0])
        base = fit(table, spec)
        out = run_bootstrap(table, spec, BootstrapConfig(R=100, seed=2), base=base)
        row = summarize(base, out).rows[1]
        assert row.p_value == pytest.approx(0.01)
        assert row.granularity_limited
