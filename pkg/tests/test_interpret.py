import math
import warnings

import pytest
from hypothesis import given
from hypothesis import strategies as st

from quasiboot.exceptions import ContractError
from quasiboot.interpret import (
    ApproximationWarning,
    endpoint_high_approx,
    endpoint_low_approx,
    interpret_coefficients,
    marginal_derivative,
    ratio_update,
)

props = st.floats(0.001, 0.999)
betas = st.floats(-5, 5)


class TestWorkedExamples:
    def test_midrange(self):
        assert ratio_update(0.30, 0.4) == pytest.approx(0.390, abs=0.001)

    def test_low_end(self):
        res = endpoint_low_approx(0.05, 0.4)
        assert res.exact == pytest.approx(0.073, abs=0.001)
        assert res.approx == pytest.approx(0.075, abs=0.001)
        assert res.in_band

    def test_high_end(self):
        res = endpoint_high_approx(0.90, 0.4)
        assert 1 - res.exact == pytest.approx(0.070, abs=0.001)
        assert 1 - res.approx == pytest.approx(0.067, abs=0.001)

    def test_midpoint_slope(self):
        assert marginal_derivative(0.2, 0.0) == 0.05

    def test_ratio_of_ratios_vs_ratio_of_proportions(self):
        # two groups at 3/4 and 1/5: proportions differ 3.75-fold, ratios 12-fold
        a, b = 0.75, 0.2
        assert a / b == pytest.approx(3.75)
        assert (a / (1 - a)) / (b / (1 - b)) == pytest.approx(12.0)
        beta = math.log(12.0)
        assert ratio_update(b, beta) == pytest.approx(a)


class TestProperties:
    @given(props)
    def test_zero_effect(self, p):
        assert ratio_update(p, 0.0) == pytest.approx(p, rel=1e-12)

    @given(props, betas)
    def test_ratio_scales_by_exp_beta(self, p, b):
        new = ratio_update(p, b)
        assert (new / (1 - new)) / (p / (1 - p)) == pytest.approx(math.exp(b), rel=1e-9)

    @given(props, betas, betas)
    def test_composition(self, p, a, b):
        assert ratio_update(ratio_update(p, a), b) == pytest.approx(ratio_update(p, a + b),
                                                                    rel=1e-9, abs=1e-12)

    @given(betas, st.floats(-20, 20))
    def test_slope_peak_at_midpoint(self, b, eta):
        assert abs(marginal_derivative(b, eta)) <= abs(b) / 4 + 1e-15

    @given(betas, st.floats(-20, 20))
    def test_slope_matches_numerical_derivative(self, b, eta):
        def mean(x):
            return 1 / (1 + math.exp(-(eta + b * x)))
        fd = (mean(1e-6) - mean(-1e-6)) / 2e-6
        assert marginal_derivative(b, eta) == pytest.approx(fd, rel=1e-5, abs=1e-9)

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.2, 1.3])
    def test_boundaries_rejected(self, p):
        with pytest.raises(ContractError):
            ratio_update(p, 0.4)

    def test_out_of_band_warns(self):
        with pytest.warns(ApproximationWarning):
            res = endpoint_low_approx(0.5, 0.4)
        assert not res.in_band
        with pytest.warns(ApproximationWarning):
            endpoint_high_approx(0.5, 0.4)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            endpoint_low_approx(0.15, 0.4)
            endpoint_high_approx(0.85, 0.4)

    def test_interpret_rows(self):
        rows = interpret_coefficients(["x"], [0.4], example_old=0.3)
        assert rows[0].exp_beta == pytest.approx(1.4918247, abs=1e-7)
        assert rows[0].midpoint_slope == pytest.approx(0.1)
        assert rows[0].example_new == pytest.approx(0.39, abs=1e-3)
