import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quasiboot.exceptions import ContractError
from quasiboot.model_core import (
    INTERCEPT,
    GroupingFactor,
    ModelSpec,
    ObservationTable,
    logistic,
    quasi_gradient,
    quasi_log_likelihood,
    validate_response,
)

finite = st.floats(-30, 30, allow_nan=False)
unit = st.floats(0, 1, allow_nan=False)


def hand_qll(y, eta):
    return sum(yi * e - math.log1p(math.exp(e)) for yi, e in zip(y, eta))


class TestLogistic:
    def test_values(self):
        assert logistic(0.0) == 0.5
        assert logistic(math.log(3)) == pytest.approx(0.75, abs=1e-15)
        assert logistic(np.array([-1000.0, 1000.0])).tolist() == pytest.approx([0, 1], abs=1e-15)

    @given(finite)
    def test_symmetry(self, x):
        assert logistic(x) + logistic(-x) == pytest.approx(1.0, abs=1e-15)

    @given(finite, finite)
    def test_monotone(self, a, b):
        if a < b:
            assert logistic(a) <= logistic(b)


class TestQuasiLogLikelihood:
    def test_hand_value(self):
        # y = 0.25 at eta = log 3 (frozen: -1.111641288952863)
        assert quasi_log_likelihood([0.25], [math.log(3)]) == pytest.approx(-1.111641288952863,
                                                                           abs=1e-12)

    def test_zero_eta(self):
        assert quasi_log_likelihood([0.3, 0.9], [0.0, 0.0]) == pytest.approx(-2 * math.log(2))

    def test_binary_is_bernoulli(self):
        rng = np.random.default_rng(3)
        y = rng.integers(0, 2, 50).astype(float)
        eta = rng.normal(size=50)
        mu = logistic(eta)
        bern = np.sum(y * np.log(mu) + (1 - y) * np.log1p(-mu))
        assert quasi_log_likelihood(y, eta) == pytest.approx(bern, rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            quasi_log_likelihood([0.5, 0.5], [0.0])

    @given(st.lists(st.tuples(unit, finite), min_size=1, max_size=20))
    def test_matches_direct_sum(self, pairs):
        y, eta = map(list, zip(*pairs))
        assert quasi_log_likelihood(y, eta) == pytest.approx(hand_qll(y, eta), rel=1e-10,
                                                             abs=1e-10)

    @given(st.lists(st.tuples(unit, finite), min_size=1, max_size=20))
    def test_label_flip_symmetry(self, pairs):
        y, eta = map(np.array, zip(*pairs))
        assert quasi_log_likelihood(1 - y, -eta) == pytest.approx(
            quasi_log_likelihood(y, eta), rel=1e-10, abs=1e-10)

    @given(st.lists(st.tuples(unit, finite, finite), min_size=1, max_size=10))
    def test_concave_in_eta(self, triples):
        y, a, b = map(np.array, zip(*triples))
        mid = quasi_log_likelihood(y, (a + b) / 2)
        assert mid >= (quasi_log_likelihood(y, a) + quasi_log_likelihood(y, b)) / 2 - 1e-9


class TestGradient:
    def test_zero_at_fitted_intercept(self):
        y = np.array([0.8, 0.8])
        X = np.ones((2, 1))
        assert quasi_gradient(y, X, np.full(2, math.log(4)))[0] == pytest.approx(0, abs=1e-14)

    def test_against_central_differences(self):
        rng = np.random.default_rng(11)
        worst = 0.0
        for _ in range(100):
            n, p = rng.integers(3, 30), rng.integers(1, 5)
            X = rng.normal(size=(n, p))
            y = rng.random(n)
            beta = rng.normal(size=p)
            g = quasi_gradient(y, X, X @ beta)
            fd = np.empty(p)
            for j in range(p):
                h = 1e-5 * max(1.0, abs(beta[j]))
                e = np.zeros(p)
                e[j] = h
                fd[j] = (quasi_log_likelihood(y, X @ (beta + e))
                         - quasi_log_likelihood(y, X @ (beta - e))) / (2 * h)
            worst = max(worst, np.max(np.abs(g - fd) / np.maximum(1.0, np.abs(g))))
        assert worst < 1e-6


class TestResponseValidation:
    def test_snaps_rounding_noise(self):
        y = validate_response([1.0000000000005, -1e-13, 0.4])
        assert y.tolist() == [1.0, 0.0, 0.4]

    @pytest.mark.parametrize("bad", [1.1, -0.01, float("nan"), float("inf")])
    def test_rejects(self, bad):
        with pytest.raises(ContractError):
            validate_response([0.5, bad])


class TestStructures:
    def test_grouping_factor_codes(self):
        f = GroupingFactor.from_labels("s", ["b", "a", "b", "c"])
        assert f.n_levels == 3
        assert list(f.labels) == ["b", "a", "b", "c"]
        assert f.row_shares().sum() == pytest.approx(1.0)

    def test_grouping_factor_rejects_bad_codes(self):
        with pytest.raises(ContractError):
            GroupingFactor("s", ("a", "b"), np.array([0, 2]))

    def test_spec_rules(self):
        spec = ModelSpec.build(["x"], ("s", "i"))
        assert spec.fixed_columns == (INTERCEPT, "x")
        assert spec.is_mixed and spec.n_coef == 2
        assert not spec.fixed_only().is_mixed
        with pytest.raises(ContractError):
            ModelSpec(("x",))
        with pytest.raises(ContractError):
            ModelSpec((INTERCEPT, "x", "x"))
        with pytest.raises(ContractError):
            ModelSpec((INTERCEPT,), ("a", "b", "c"))

    def test_table(self):
        t = ObservationTable.from_arrays([0.1, 0.5, 1.0], [[1.0], [2.0], [3.0]], ["x"],
                                         {"s": ["a", "a", "b"]})
        assert t.n == 3
        assert t.columns == (INTERCEPT, "x")
        assert t.X[:, 0].tolist() == [1, 1, 1]
        assert not t.y.flags.writeable
        with pytest.raises(ContractError):
            ObservationTable.from_arrays([0.1, 0.5], [[1.0], [2.0], [3.0]], ["x"])
        with pytest.raises(ContractError):
            t.check_spec(ModelSpec.build(["z"]))
