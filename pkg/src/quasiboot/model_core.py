"""Data model, logistic link and the fractional quasi-log-likelihood.

The quasi-log-likelihood is the Bernoulli log-likelihood evaluated at
responses anywhere in ``[0, 1]``::

    l(y, eta) = sum_i y_i log G(eta_i) + (1 - y_i) log(1 - G(eta_i))
              = sum_i y_i eta_i - log(1 + exp(eta_i))

with ``G`` the logistic function. Its gradient with respect to the
coefficients of ``eta = X beta`` is ``X'(y - G(eta))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .exceptions import ContractError

INTERCEPT = "(Intercept)"

#: Linear predictors are clamped to this magnitude before evaluation.
ETA_CLAMP = 35.0

#: Responses this far outside [0, 1] are snapped to the boundary.
Y_SLACK = 1e-12


def _readonly(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def validate_response(y, slack=Y_SLACK):
    """Return ``y`` as a float array inside ``[0, 1]``.

    Values within ``slack`` of the unit interval are snapped onto it.
    Anything further out raises :class:`ContractError` naming the
    (0-based) offending indices.
    """
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        raise ContractError(f"response must be one-dimensional, got shape {y.shape}")
    bad = ~np.isfinite(y) | (y < -slack) | (y > 1.0 + slack)
    if bad.any():
        idx = np.flatnonzero(bad)
        raise ContractError(
            f"response values outside [0, 1] at rows {idx[:10].tolist()}"
        )
    return np.clip(y, 0.0, 1.0)


@dataclass(frozen=True)
class GroupingFactor:
    """A categorical grouping of rows.

    Parameters
    ----------
    name : str
        Factor identifier, e.g. ``"subject"``.
    levels : tuple of str
        Distinct level labels, ``K`` of them.
    codes : ndarray of int
        ``codes[i]`` is the index into ``levels`` of row ``i``.
    """

    name: str
    levels: tuple
    codes: np.ndarray = field(repr=False)

    def __post_init__(self):
        codes = np.asarray(self.codes)
        if codes.ndim != 1 or not np.issubdtype(codes.dtype, np.integer):
            raise ContractError(f"factor {self.name!r}: codes must be a 1-d integer array")
        k = len(self.levels)
        if k < 1:
            raise ContractError(f"factor {self.name!r} has no levels")
        if len(set(self.levels)) != k:
            raise ContractError(f"factor {self.name!r} has duplicate level labels")
        if codes.size and (codes.min() < 0 or codes.max() >= k):
            raise ContractError(f"factor {self.name!r}: codes out of range")
        if np.bincount(codes, minlength=k).min() == 0:
            raise ContractError(f"factor {self.name!r} has a level with no rows")
        object.__setattr__(self, "levels", tuple(self.levels))
        object.__setattr__(self, "codes", _readonly(codes.astype(np.intp)))

    @classmethod
    def from_labels(cls, name, labels):
        """Build a factor from per-row labels; levels keep first-seen order."""
        labels = [str(v) for v in labels]
        index = {}
        codes = np.empty(len(labels), dtype=np.intp)
        for i, lab in enumerate(labels):
            codes[i] = index.setdefault(lab, len(index))
        return cls(name, tuple(index), codes)

    @property
    def n_levels(self):
        return len(self.levels)

    @property
    def labels(self):
        """Per-row level labels."""
        lv = np.asarray(self.levels, dtype=object)
        return lv[self.codes]

    def row_shares(self):
        """Proportion of rows falling in each level."""
        counts = np.bincount(self.codes, minlength=self.n_levels)
        return counts / counts.sum()


@dataclass(frozen=True)
class ModelSpec:
    """Which columns enter as fixed effects and which factors get random intercepts.

    ``fixed_columns`` always starts with the intercept.
    """

    fixed_columns: tuple
    random_intercept_factors: tuple = ()
    response: str = "y"

    def __post_init__(self):
        fixed = tuple(self.fixed_columns)
        rand = tuple(self.random_intercept_factors)
        if not fixed:
            raise ContractError("a model needs at least the intercept")
        if fixed[0] != INTERCEPT:
            raise ContractError(f"first fixed column must be {INTERCEPT!r}")
        if len(set(fixed)) != len(fixed):
            raise ContractError("duplicate fixed-effect columns")
        if len(set(rand)) != len(rand):
            raise ContractError("duplicate random-intercept factors")
        if len(rand) > 2:
            raise ContractError("at most two random-intercept factors are supported")
        object.__setattr__(self, "fixed_columns", fixed)
        object.__setattr__(self, "random_intercept_factors", rand)

    @classmethod
    def build(cls, covariates=(), random=(), response="y"):
        return cls((INTERCEPT, *covariates), tuple(random), response)

    @property
    def n_coef(self):
        return len(self.fixed_columns)

    @property
    def is_mixed(self):
        return bool(self.random_intercept_factors)

    def fixed_only(self):
        return ModelSpec(self.fixed_columns, (), self.response)

    def to_formula(self):
        terms = list(self.fixed_columns[1:])
        terms += [f"(1|{f})" for f in self.random_intercept_factors]
        return f"{self.response} ~ " + (" + ".join(terms) if terms else "1")


@dataclass(frozen=True)
class ObservationTable:
    """Responses, covariates and grouping factors for ``n`` rows.

    ``X`` always carries the intercept column (named ``"(Intercept)"``)
    first. Arrays are stored read-only.
    """

    y: np.ndarray = field(repr=False)
    X: np.ndarray = field(repr=False)
    columns: tuple
    factors: tuple = ()

    def __post_init__(self):
        y = validate_response(self.y)
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2 or X.shape[1] < 1:
            raise ContractError(f"X must be 2-d with at least one column, got {X.shape}")
        if X.shape[0] != y.shape[0]:
            raise ContractError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
        if not np.isfinite(X).all():
            raise ContractError("X contains non-finite values")
        columns = tuple(self.columns)
        if len(columns) != X.shape[1] or len(set(columns)) != len(columns):
            raise ContractError("columns must name every column of X exactly once")
        factors = tuple(self.factors)
        names = [f.name for f in factors]
        if len(set(names)) != len(names):
            raise ContractError("duplicate factor names")
        for f in factors:
            if f.codes.shape[0] != y.shape[0]:
                raise ContractError(f"factor {f.name!r} does not cover every row")
        object.__setattr__(self, "y", _readonly(y))
        object.__setattr__(self, "X", _readonly(X))
        object.__setattr__(self, "columns", columns)
        object.__setattr__(self, "factors", factors)

    @classmethod
    def from_arrays(cls, y, covariates=None, names=None, factors=None):
        """Assemble a table, prepending the intercept column.

        Parameters
        ----------
        y : array-like of shape (n,)
        covariates : array-like of shape (n, p), optional
        names : sequence of str, optional
            Covariate names, default ``x1 .. xp``.
        factors : mapping of name -> per-row labels, optional
        """
        y = np.asarray(y, dtype=float)
        n = y.shape[0]
        if covariates is None:
            covariates = np.empty((n, 0))
        covariates = np.asarray(covariates, dtype=float)
        if covariates.ndim == 1:
            covariates = covariates[:, None]
        if covariates.ndim != 2 or covariates.shape[0] != n:
            raise ContractError(f"covariates must have shape ({n}, p), got {covariates.shape}")
        p = covariates.shape[1]
        if names is None:
            names = [f"x{j + 1}" for j in range(p)]
        X = np.column_stack([np.ones(n), covariates]) if n else np.empty((0, p + 1))
        facs = [GroupingFactor.from_labels(k, v) for k, v in (factors or {}).items()]
        return cls(y, X, (INTERCEPT, *names), tuple(facs))

    @property
    def n(self):
        return self.y.shape[0]

    def factor(self, name) -> GroupingFactor:
        for f in self.factors:
            if f.name == name:
                return f
        raise ContractError(f"unknown factor {name!r}")

    def column_index(self, names: Sequence[str]):
        idx = []
        for c in names:
            try:
                idx.append(self.columns.index(c))
            except ValueError:
                raise ContractError(f"unknown column {c!r}") from None
        return idx

    def design(self, spec: ModelSpec):
        """Fixed-effect design matrix selected by ``spec``."""
        return self.X[:, self.column_index(spec.fixed_columns)]

    def check_spec(self, spec: ModelSpec):
        self.column_index(spec.fixed_columns)
        for name in spec.random_intercept_factors:
            self.factor(name)


def logistic(x):
    """Logistic function ``exp(x) / (1 + exp(x))``, elementwise.

    Arguments are clamped to ``[-ETA_CLAMP, ETA_CLAMP]``.
    """
    out = expit(np.clip(x, -ETA_CLAMP, ETA_CLAMP))
    return float(out) if np.ndim(out) == 0 else out


def _check_pair(y, eta):
    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if y.shape != eta.shape or y.ndim != 1:
        raise ContractError(f"shape mismatch: y {y.shape} vs eta {eta.shape}")
    return y, eta


def softplus_and_mean(eta):
    """Return ``(log(1 + e^eta), G(eta))`` from a single exponential.

    ``eta`` is assumed already clamped.
    """
    t = np.exp(-np.abs(eta))
    denom = 1.0 + t
    sp = np.log1p(t) + np.maximum(eta, 0.0)
    mu = np.where(eta >= 0, 1.0, t) / denom
    return sp, mu


def quasi_log_likelihood(y, eta):
    """Fractional-response quasi-log-likelihood at linear predictor ``eta``."""
    y, eta = _check_pair(y, eta)
    eta = np.clip(eta, -ETA_CLAMP, ETA_CLAMP)
    # y log G + (1-y) log(1-G) = y*eta - log(1 + e^eta)
    return float(np.dot(y, eta) - softplus_and_mean(eta)[0].sum())


def quasi_gradient(y, X, eta):
    """Gradient ``X'(y - G(eta))`` of :func:`quasi_log_likelihood` in ``beta``."""
    y, eta = _check_pair(y, eta)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ContractError(f"X shape {X.shape} incompatible with {y.shape[0]} rows")
    return X.T @ (y - logistic(eta))
