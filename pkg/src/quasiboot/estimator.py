"""scikit-learn compatible estimator around the fitting and bootstrap code."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .bootstrap import BootstrapConfig, base_report, run_bootstrap, summarize
from .glmm import fit
from .model_core import ModelSpec, ObservationTable, logistic


class QuasiLogitRegressor(RegressorMixin, BaseEstimator):
    """Logistic quasi-likelihood regression for responses in [0, 1].

    Parameters
    ----------
    n_resamples : int, default=0
        Bootstrap resamples. 0 skips the bootstrap and leaves only the
        (conservative) base standard errors.
    alpha : float, default=0.05
        Interval level is ``1 - alpha``.
    random_state : int, default=0
        Seed for the resampling streams.
    n_jobs : int, default=1
        Worker processes for the bootstrap.
    resample_mode : {"block", "pigeonhole"}, default="block"
    bootstrap_group : int or None, default=None
        Column of ``groups`` to resample over. None picks the
        highest-entropy grouping.
    random_intercepts : bool, default=True
        Give every column of ``groups`` a random intercept. With False
        the groups are used only for resampling.
    feature_names : sequence of str, optional

    Attributes
    ----------
    intercept_ : float
    coef_ : ndarray of shape (n_features,)
    base_se_ : ndarray of shape (n_features + 1,)
        Intercept first.
    variance_components_ : ndarray
    conf_int_ : ndarray of shape (n_features + 1, 2)
        Bootstrap-t intervals (NaN without a bootstrap).
    pvalues_ : ndarray of shape (n_features + 1,)
    report_ : InferenceReport
    fit_result_ : FitResult
    """

    def __init__(self, n_resamples=0, alpha=0.05, random_state=0, n_jobs=1,
                 resample_mode="block", bootstrap_group=None, random_intercepts=True,
                 feature_names=None):
        self.n_resamples = n_resamples
        self.alpha = alpha
        self.random_state = random_state
        self.n_jobs = n_jobs
        self.resample_mode = resample_mode
        self.bootstrap_group = bootstrap_group
        self.random_intercepts = random_intercepts
        self.feature_names = feature_names

    def _table(self, X, y, groups):
        names = (list(self.feature_names) if self.feature_names is not None
                 else [f"x{j + 1}" for j in range(X.shape[1])])
        factors = {}
        if groups is not None:
            g = np.asarray(groups, dtype=object)
            if g.ndim == 1:
                g = g[:, None]
            if g.shape[0] != X.shape[0]:
                raise ValueError("groups must have one row per sample")
            factors = {f"g{k + 1}": g[:, k] for k in range(g.shape[1])}
        return ObservationTable.from_arrays(y, X, names, factors), names, list(factors)

    def fit(self, X, y, groups=None):
        """Fit the base model and, if ``n_resamples > 0``, the bootstrap.

        Parameters
        ----------
        X : array-like of shape (n_samples, n_features)
        y : array-like of shape (n_samples,)
            Proportions in [0, 1].
        groups : array-like of shape (n_samples,) or (n_samples, n_groups), optional
            Grouping labels, one column per factor (at most two).
        """
        X, y = check_X_y(X, y, y_numeric=True)
        table, names, factor_names = self._table(X, y, groups)
        random = tuple(factor_names) if self.random_intercepts else ()
        spec = ModelSpec.build(names, random)
        self.spec_ = spec
        self.fit_result_ = fit(table, spec)
        beta = self.fit_result_.beta_hat
        self.intercept_ = float(beta[0])
        self.coef_ = beta[1:].copy()
        self.base_se_ = self.fit_result_.base_se.copy()
        self.variance_components_ = self.fit_result_.variances
        self.n_features_in_ = X.shape[1]
        self._modes = {
            re.factor: dict(zip(re.levels, re.modes)) for re in self.fit_result_.random_effects
        }

        if self.n_resamples:
            factors = ()
            if self.bootstrap_group is not None:
                factors = (factor_names[self.bootstrap_group],)
            config = BootstrapConfig(
                R=self.n_resamples, alpha=self.alpha, seed=int(self.random_state),
                workers=self.n_jobs, mode=self.resample_mode, factors=factors,
            )
            self.bootstrap_output_ = run_bootstrap(table, spec, config, base=self.fit_result_)
            self.report_ = summarize(self.fit_result_, self.bootstrap_output_)
        else:
            self.bootstrap_output_ = None
            self.report_ = base_report(self.fit_result_, self.alpha)
        self.conf_int_ = np.array([[r.ci_lower, r.ci_upper] for r in self.report_.rows])
        self.pvalues_ = np.array([r.p_value for r in self.report_.rows])
        return self

    def decision_function(self, X, groups=None):
        """Linear predictor; known group levels add their conditional mode."""
        check_is_fitted(self, "fit_result_")
        X = check_array(X)
        eta = self.intercept_ + X @ self.coef_
        if groups is not None and self._modes:
            g = np.asarray(groups, dtype=object)
            if g.ndim == 1:
                g = g[:, None]
            for k, name in enumerate(self.spec_.random_intercept_factors):
                modes = self._modes[name]
                eta = eta + np.array([modes.get(str(v), 0.0) for v in g[:, k]])
        return eta

    def predict(self, X, groups=None):
        """Expected proportion ``G(eta)``; without ``groups`` the random effects are 0."""
        return logistic(self.decision_function(X, groups))
