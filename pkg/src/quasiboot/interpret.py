"""Turning logistic coefficients into statements about proportions.

A unit increase in covariate ``j`` multiplies the expected ratio
``prop / (1 - prop)`` by ``exp(beta_j)`` exactly. Near the midpoint the
expected proportion moves by about ``beta_j / 4``. Near zero the
proportion itself scales by roughly ``exp(beta_j)``, and near one the
complement scales by roughly ``exp(-beta_j)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

from .exceptions import ContractError

LOW_BAND = 0.15
HIGH_BAND = 0.85


class ApproximationWarning(UserWarning):
    """An endpoint approximation was used outside its applicability band."""


def proportion_to_ratio(prop):
    return prop / (1.0 - prop)


def ratio_to_proportion(ratio):
    return ratio / (1.0 + ratio)


def ratio_update(prop_old, beta_j):
    """Expected proportion after a unit increase in a covariate with coefficient ``beta_j``."""
    if not 0.0 < prop_old < 1.0:
        raise ContractError(f"proportion must lie strictly inside (0, 1), got {prop_old}")
    r = proportion_to_ratio(prop_old) * math.exp(beta_j)
    return ratio_to_proportion(r)


def marginal_derivative(beta_j, eta):
    """Slope ``dE[Y]/dx_j = beta_j e^eta / (1 + e^eta)^2``; peaks at ``beta_j/4`` for ``eta = 0``."""
    e = math.exp(-abs(eta))
    return beta_j * e / (1.0 + e) ** 2


@dataclass(frozen=True)
class EndpointApproximation:
    approx: float
    exact: float
    in_band: bool

    @property
    def error(self):
        return self.approx - self.exact


def endpoint_low_approx(prop_old, beta_j):
    """``prop_new ~ prop_old * exp(beta_j)``, intended for ``prop_old <= 0.15``."""
    exact = ratio_update(prop_old, beta_j)
    in_band = prop_old <= LOW_BAND
    if not in_band:
        warnings.warn(
            f"low-end approximation used at proportion {prop_old:.3g} > {LOW_BAND}",
            ApproximationWarning, stacklevel=2,
        )
    return EndpointApproximation(prop_old * math.exp(beta_j), exact, in_band)


def endpoint_high_approx(prop_old, beta_j):
    """``1 - prop_new ~ (1 - prop_old) * exp(-beta_j)``, intended for ``prop_old >= 0.85``."""
    exact = ratio_update(prop_old, beta_j)
    in_band = prop_old >= HIGH_BAND
    if not in_band:
        warnings.warn(
            f"high-end approximation used at proportion {prop_old:.3g} < {HIGH_BAND}",
            ApproximationWarning, stacklevel=2,
        )
    return EndpointApproximation(1.0 - (1.0 - prop_old) * math.exp(-beta_j), exact, in_band)


@dataclass(frozen=True)
class InterpretationRow:
    """Interpretable summaries of one coefficient.

    The worked example moves ``example_old`` through :func:`ratio_update`.
    """

    name: str
    beta: float
    exp_beta: float
    midpoint_slope: float
    example_old: float
    example_new: float


def interpret_coefficients(names, betas, example_old=0.5):
    return [
        InterpretationRow(n, float(b), math.exp(b), b / 4.0, example_old,
                          ratio_update(example_old, b))
        for n, b in zip(names, betas)
    ]
