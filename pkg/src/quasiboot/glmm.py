"""Quasi-likelihood logistic fits with optional random intercepts.

Fixed-effect models are fit by Newton-Raphson on the (concave)
quasi-log-likelihood. Random-intercept models maximise a Laplace
approximation to the marginal quasi-log-likelihood.

Random effects use the spherical parameterisation ``b = S u`` where
``S = diag(s)`` holds each level's random-effect standard deviation and
``u ~ N(0, I)``. For fixed ``(beta, theta)`` the conditional modes
solve::

    u_hat = argmax_u  l(y, X beta + Z S u) - |u|^2 / 2

and the approximate marginal objective is::

    L(beta, theta) = l(y, eta_hat) - |u_hat|^2 / 2 - log det(I + S Z'WZ S) / 2

with ``W = diag(mu (1 - mu))``. This form stays well defined when a
standard deviation is exactly zero, which is how a collapsed variance
component is represented. The outer problem is solved with L-BFGS-B on
``(beta, theta)`` with ``theta >= 0`` and an analytic gradient.

Standard errors come from the inverse observed information: the Hessian
of the binary-form quasi-likelihood for fixed fits and the (finite
differenced) Hessian of ``L`` for mixed fits. Both assume the binary
worst-case variance ``mu (1 - mu)`` and are therefore conservative for
fractional responses.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg, optimize
from scipy.special import expit

from .exceptions import (
    ContractError,
    NonConvergenceError,
    SeparationError,
    SingularDesignError,
)
from .model_core import ETA_CLAMP, ModelSpec, ObservationTable, softplus_and_mean

logger = logging.getLogger(__name__)

MAX_OUTER_ITER = 200
MAX_NEWTON_ITER = 100
REL_OBJ_TOL = 1e-8
GRAD_TOL = 1e-6
INNER_GRAD_TOL = 1e-9
RANK_TOL = 1e-10
START_VARIANCE = 0.25
# |eta| past this means the optimum sits at infinity
SEPARATION_ETA = ETA_CLAMP - 5.0
# standard deviations below this are reported as a collapsed component
BOUNDARY_SD = 1e-4


@dataclass(frozen=True)
class RandomEffectEstimate:
    """Estimated variance and conditional modes for one random intercept."""

    factor: str
    variance: float
    modes: np.ndarray = field(repr=False)
    levels: tuple = field(default=(), repr=False)
    at_boundary: bool = False

    @property
    def sd(self):
        return float(np.sqrt(self.variance))


@dataclass(frozen=True)
class FitResult:
    """Outcome of a single model fit.

    Attributes
    ----------
    beta_hat : ndarray of shape (p + 1,)
    base_se : ndarray of shape (p + 1,)
        Model-based standard errors under the binary variance function.
    coef_names : tuple of str
    random_effects : tuple of RandomEffectEstimate
    objective_value : float
        Quasi-log-likelihood (fixed) or its Laplace marginal (mixed) at
        the optimum.
    converged : bool
    iterations : int
    cov : ndarray of shape (p + 1, p + 1)
    """

    beta_hat: np.ndarray
    base_se: np.ndarray
    coef_names: tuple
    random_effects: tuple = ()
    objective_value: float = float("nan")
    converged: bool = True
    iterations: int = 0
    cov: np.ndarray = field(default=None, repr=False)

    @property
    def variances(self):
        return np.array([re.variance for re in self.random_effects])

    def coef(self, name):
        return float(self.beta_hat[self.coef_names.index(name)])

    def to_dict(self):
        return {
            "coef_names": list(self.coef_names),
            "beta_hat": self.beta_hat.tolist(),
            "base_se": self.base_se.tolist(),
            "random_effects": [
                {
                    "factor": re.factor,
                    "variance": re.variance,
                    "at_boundary": re.at_boundary,
                    "levels": list(re.levels),
                    "modes": re.modes.tolist(),
                }
                for re in self.random_effects
            ],
            "objective_value": self.objective_value,
            "converged": self.converged,
            "iterations": self.iterations,
        }

    @classmethod
    def from_dict(cls, d):
        res = tuple(
            RandomEffectEstimate(
                r["factor"], r["variance"], np.asarray(r["modes"], float),
                tuple(r["levels"]), r["at_boundary"],
            )
            for r in d.get("random_effects", [])
        )
        return cls(
            np.asarray(d["beta_hat"], float),
            np.asarray(d["base_se"], float),
            tuple(d["coef_names"]),
            res,
            d["objective_value"],
            d["converged"],
            d["iterations"],
        )


def check_rank(X, tol=RANK_TOL):
    """Raise :class:`SingularDesignError` if ``X`` is numerically rank deficient.

    Columns are scaled to unit norm first, so the check is invariant to
    covariate units.
    """
    norms = np.linalg.norm(X, axis=0)
    if X.shape[0] < X.shape[1] or np.any(norms == 0):
        raise SingularDesignError("design matrix has fewer rows than columns or a zero column")
    sv = np.linalg.svd(X / norms, compute_uv=False)
    if sv[-1] < tol * sv[0]:
        raise SingularDesignError(
            f"design matrix is rank deficient (singular value ratio {sv[-1] / sv[0]:.3g})"
        )


def _qll(y, eta):
    eta = np.clip(eta, -ETA_CLAMP, ETA_CLAMP)
    return float(y @ eta - softplus_and_mean(eta)[0].sum())


def _start_beta(y, p):
    beta = np.zeros(p)
    m = np.clip(y.mean(), 1e-3, 1 - 1e-3)
    beta[0] = np.log(m / (1 - m))
    return beta


def _newton_fixed(y, X, offset, beta, max_iter=MAX_NEWTON_ITER):
    """Maximise the quasi-log-likelihood in ``beta``; returns (beta, obj, iters, info)."""
    eta = X @ beta + offset
    obj = _qll(y, eta)
    for it in range(1, max_iter + 1):
        mu = expit(np.clip(eta, -ETA_CLAMP, ETA_CLAMP))
        grad = X.T @ (y - mu)
        info = (X * (mu * (1 - mu))[:, None]).T @ X
        try:
            step = linalg.solve(info, grad, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            step = np.linalg.lstsq(info, grad, rcond=None)[0]
        decrement = float(grad @ step)
        if decrement < 1e-20 * max(1.0, abs(obj)) or np.abs(grad).max() < 1e-10:
            return beta, obj, it, info
        t = 1.0
        while True:
            cand = beta + t * step
            eta_c = X @ cand + offset
            obj_c = _qll(y, eta_c)
            if obj_c >= obj - 1e-12 * abs(obj) or t < 1e-10:
                break
            t *= 0.5
        beta, eta, obj = cand, eta_c, obj_c
        if np.abs(eta).max() > SEPARATION_ETA:
            raise SeparationError(
                "coefficients diverge (linear predictor beyond "
                f"{SEPARATION_ETA:g}); the data are likely separated"
            )
        if decrement < 2e-16 * max(1.0, abs(obj)):
            mu = expit(np.clip(eta, -ETA_CLAMP, ETA_CLAMP))
            info = (X * (mu * (1 - mu))[:, None]).T @ X
            return beta, obj, it, info
    raise NonConvergenceError(
        f"Newton iterations did not converge in {max_iter} steps", last_iterate=beta
    )


def _se_from_information(info):
    try:
        cov = linalg.inv(info, check_finite=True)
    except linalg.LinAlgError as exc:
        raise SingularDesignError("information matrix is singular") from exc
    se = np.sqrt(np.diag(cov))
    if not np.all(np.isfinite(se)) or np.any(se <= 0):
        raise SingularDesignError("information matrix is not positive definite")
    return cov, se


def fit_fixed(table: ObservationTable, spec: ModelSpec, offset=None, start=None,
              max_iter=MAX_NEWTON_ITER) -> FitResult:
    """Fit the fixed-effect quasi-likelihood logistic model.

    Parameters
    ----------
    table : ObservationTable
    spec : ModelSpec
        Random-intercept factors, if any, are ignored.
    offset : array-like of shape (n,), optional
        Known term added to the linear predictor and not estimated.
    start : array-like, optional
        Starting coefficients; default is the logit of the mean response
        for the intercept and zero elsewhere.

    Raises
    ------
    SingularDesignError, SeparationError, NonConvergenceError
    """
    table.check_spec(spec)
    X = table.design(spec)
    y = table.y
    check_rank(X)
    off = np.zeros(table.n) if offset is None else np.asarray(offset, dtype=float)
    if off.shape != (table.n,):
        raise ContractError(f"offset must have shape ({table.n},)")
    beta0 = _start_beta(y, X.shape[1]) if start is None else np.asarray(start, float).copy()
    beta, obj, iters, info = _newton_fixed(y, X, off, beta0, max_iter)
    cov, se = _se_from_information(info)
    return FitResult(beta, se, spec.fixed_columns, (), obj, True, iters, cov)


class LaplaceObjective:
    """Laplace-approximated marginal quasi-log-likelihood and its gradient.

    Parameters are packed as ``(beta, theta)`` where ``theta[f]`` is the
    random-intercept standard deviation of factor ``f``. The instance
    caches the last conditional modes as a warm start, so it is not
    thread-safe; build one per fit.
    """

    def __init__(self, y, X, groups, offset=None):
        self.y = np.asarray(y, dtype=float)
        self.X = np.asarray(X, dtype=float)
        self.n, self.p = self.X.shape
        self.offset = np.zeros(self.n) if offset is None else np.asarray(offset, float)
        self.groups = [np.asarray(g, dtype=np.intp) for g in groups]
        if not 1 <= len(self.groups) <= 2:
            raise ContractError("between one and two random-intercept factors are supported")
        self.sizes = [int(g.max()) + 1 for g in self.groups]
        self.n_theta = len(self.groups)
        self.K = sum(self.sizes)
        self.level_factor = np.repeat(np.arange(self.n_theta), self.sizes)
        self.diagonal = self.n_theta == 1
        if not self.diagonal:
            k0, k1 = self.sizes
            self._pair = self.groups[0] * k1 + self.groups[1]
        self.u = np.zeros(self.K)
        self.n_inner = 0

    # Z' x and Z v for the indicator design
    def _zt(self, x):
        if self.diagonal:
            return np.bincount(self.groups[0], x, self.sizes[0])
        return np.concatenate(
            [np.bincount(g, x, k) for g, k in zip(self.groups, self.sizes)]
        )

    def _z(self, v):
        if self.diagonal:
            return v[self.groups[0]]
        return v[self.groups[0]] + v[self.sizes[0] + self.groups[1]]

    def _cross(self, w):
        """Z'WZ: per-level sums (diagonal case) or the full dense matrix."""
        h = self._zt(w)
        if self.diagonal:
            return h
        k0, k1 = self.sizes
        c = np.bincount(self._pair, w, k0 * k1).reshape(k0, k1)
        A = np.diag(h)
        A[:k0, k0:] = c
        A[k0:, :k0] = c.T
        return A

    def _split(self, params):
        params = np.asarray(params, dtype=float)
        return params[: self.p], params[self.p:]

    def solve_modes(self, beta, theta):
        """Newton iterations for the conditional modes at fixed ``(beta, theta)``."""
        s = np.asarray(theta, float)[self.level_factor]
        base = self.X @ beta + self.offset
        u = self.u.copy()
        y = self.y

        def evaluate(u):
            eta = np.minimum(np.maximum(base + self._z(s * u), -ETA_CLAMP), ETA_CLAMP)
            sp, mu = softplus_and_mean(eta)
            return eta, mu, float(y @ eta - sp.sum() - 0.5 * u @ u)

        eta, mu, psi = evaluate(u)
        for it in range(MAX_NEWTON_ITER):
            w = mu * (1.0 - mu)
            r = self._zt(y - mu)
            grad = s * r - u
            A = self._cross(w)
            if self.diagonal:
                H = 1.0 + s * s * A
            else:
                H = np.eye(self.K) + s[:, None] * A * s[None, :]
            if np.abs(grad).max() < INNER_GRAD_TOL * max(1.0, np.sqrt(self.n)):
                break
            step = grad / H if self.diagonal else linalg.solve(H, grad, assume_a="pos")
            t = 1.0
            while True:
                u_new = u + t * step
                eta_new, mu_new, psi_new = evaluate(u_new)
                if psi_new >= psi - 1e-13 * abs(psi) or t < 1e-10:
                    break
                t *= 0.5
            u, eta, mu, psi = u_new, eta_new, mu_new, psi_new
        else:
            raise NonConvergenceError("conditional mode iterations did not converge")
        self.n_inner += it + 1
        self.u = u
        return dict(s=s, u=u, eta=eta, mu=mu, w=w, r=r, A=A, H=H,
                    ll=psi + 0.5 * u @ u, psi=psi)

    def _logdet(self, st):
        if self.diagonal:
            return float(np.log(st["H"]).sum())
        c = linalg.cho_factor(st["H"], lower=True)
        st["chol"] = c
        return 2.0 * float(np.log(np.diag(c[0])).sum())

    def value(self, params):
        beta, theta = self._split(params)
        st = self.solve_modes(beta, theta)
        return st["psi"] - 0.5 * self._logdet(st)

    def value_and_grad(self, params):
        """Return ``(L, dL/dparams)``."""
        beta, theta = self._split(params)
        st = self.solve_modes(beta, theta)
        logdet = self._logdet(st)
        val = st["psi"] - 0.5 * logdet
        s, u, mu, w, r, A = st["s"], st["u"], st["mu"], st["w"], st["r"], st["A"]
        X = self.X
        res = self.y - mu
        dw = w * (1.0 - 2.0 * mu)

        if self.diagonal:
            h = A
            Hd = st["H"]
            M = s * s / Hd
            lev = M[self.groups[0]]
        else:
            Hinv = linalg.cho_solve(st["chol"], np.eye(self.K))
            M = s[:, None] * Hinv * s[None, :]
            g0 = self.groups[0]
            g1 = self.groups[1] + self.sizes[0]
            lev = M[g0, g0] + M[g1, g1] + 2.0 * M[g0, g1]

        v = dw * lev
        q = self._zt(v)
        Mq = M * q if self.diagonal else M @ q
        g_beta = X.T @ res - 0.5 * (X.T @ v - X.T @ (w * self._z(Mq)))

        g_theta = np.empty(self.n_theta)
        if self.diagonal:
            m2 = s * q / Hd
            trace = s * h / Hd
            sa_u = s * h * u
        else:
            m2 = Hinv @ (s * q)
            trace = np.einsum("ij,ji->i", Hinv, s[:, None] * A)
        for f in range(self.n_theta):
            mask = self.level_factor == f
            if self.diagonal:
                cross = float(m2 @ sa_u)
            else:
                cross = float(m2 @ (s * (A[:, mask] @ u[mask])))
            deta = float(q[mask] @ u[mask] + m2[mask] @ r[mask]) - cross
            g_theta[f] = float(u[mask] @ r[mask]) - 0.5 * (deta + 2.0 * trace[mask].sum())
        return val, np.concatenate([g_beta, g_theta])

    def hessian(self, params, free=None, rel_step=1e-4):
        """Central finite-difference Hessian of ``L`` from the analytic gradient."""
        params = np.asarray(params, dtype=float)
        idx = np.arange(params.size) if free is None else np.asarray(free)
        u0 = self.u.copy()
        Hs = np.empty((idx.size, idx.size))
        for a, j in enumerate(idx):
            h = rel_step * max(1.0, abs(params[j]))
            xp = params.copy()
            xp[j] += h
            xm = params.copy()
            xm[j] -= h
            self.u = u0.copy()
            gp = self.value_and_grad(xp)[1]
            self.u = u0.copy()
            gm = self.value_and_grad(xm)[1]
            Hs[a] = (gp[idx] - gm[idx]) / (2.0 * h)
        self.u = u0
        return 0.5 * (Hs + Hs.T)


def _groups(table, spec):
    return [table.factor(name).codes for name in spec.random_intercept_factors]


def laplace_objective(table: ObservationTable, spec: ModelSpec, beta, variances, offset=None):
    """Laplace marginal objective at given coefficients and variance components.

    With every variance equal to zero this is exactly the fixed-effect
    quasi-log-likelihood.
    """
    X = table.design(spec)
    obj = LaplaceObjective(table.y, X, _groups(table, spec), offset)
    theta = np.sqrt(np.asarray(variances, dtype=float))
    return obj.value(np.concatenate([np.asarray(beta, float), theta]))


def fit_mixed(table: ObservationTable, spec: ModelSpec, offset=None, start=None,
              max_iter=MAX_OUTER_ITER) -> FitResult:
    """Fit the random-intercept quasi-likelihood model by Laplace approximation.

    Parameters
    ----------
    table : ObservationTable
    spec : ModelSpec
        Must name one or two random-intercept factors.
    offset : array-like, optional
    start : tuple (beta, variances), optional
        Starting values. Default: the fixed-effect fit and variance 0.25
        for every factor.

    Returns
    -------
    FitResult
        Variance components that collapse to zero are reported as 0 with
        ``at_boundary=True``; their modes are all zero.

    Raises
    ------
    SingularDesignError, SeparationError, NonConvergenceError
    """
    if not spec.is_mixed:
        raise ContractError("fit_mixed needs at least one random-intercept factor")
    table.check_spec(spec)
    factors = [table.factor(name) for name in spec.random_intercept_factors]
    for f in factors:
        if f.n_levels < 2:
            raise ContractError(f"random factor {f.name!r} needs at least two levels")
    X = table.design(spec)
    check_rank(X)
    p = X.shape[1]
    if start is None:
        beta0 = fit_fixed(table, spec, offset=offset).beta_hat
        theta0 = np.full(len(factors), np.sqrt(START_VARIANCE))
    else:
        beta0 = np.asarray(start[0], float)
        theta0 = np.sqrt(np.maximum(np.asarray(start[1], float), START_VARIANCE / 100))
    obj = LaplaceObjective(table.y, X, [f.codes for f in factors], offset)

    def negative(x):
        v, g = obj.value_and_grad(x)
        return -v, -g

    x0 = np.concatenate([beta0, theta0])
    bounds = [(None, None)] * p + [(0.0, None)] * len(factors)
    opt = optimize.minimize(
        negative, x0, jac=True, method="L-BFGS-B", bounds=bounds,
        options=dict(maxiter=max_iter, ftol=1e-15, gtol=GRAD_TOL, maxcor=20),
    )
    x = opt.x
    value, grad = obj.value_and_grad(x)
    theta = x[p:]
    at_bound = theta < BOUNDARY_SD
    # projected gradient: a bound-active theta may have negative slope
    pg = grad.copy()
    pg[p:][at_bound & (grad[p:] <= 0)] = 0.0
    rel_change = abs(opt.fun + value) / max(1.0, abs(value))
    converged = bool(np.abs(pg).max() < GRAD_TOL * max(1.0, np.sqrt(table.n))
                     or (opt.success and rel_change < REL_OBJ_TOL))
    eta = X @ x[:p] + obj.offset
    if np.abs(eta).max() > SEPARATION_ETA or np.abs(x[:p]).max() > SEPARATION_ETA:
        raise SeparationError("coefficients diverge; the data are likely separated")

    free = np.r_[np.arange(p), p + np.flatnonzero(~at_bound)]
    Hs = -obj.hessian(x, free)
    try:
        cov_full = linalg.inv(Hs)
        cov = cov_full[:p, :p]
        se = np.sqrt(np.diag(cov))
    except linalg.LinAlgError:
        se = np.full(p, np.nan)
        cov = np.full((p, p), np.nan)
    if not np.all(np.isfinite(se)) or np.any(se <= 0):
        converged = False

    obj.solve_modes(x[:p], theta)
    res = []
    offset_k = 0
    for f, th, b in zip(factors, theta, at_bound):
        k = f.n_levels
        modes = 0.0 if b else th * obj.u[offset_k: offset_k + k]
        res.append(RandomEffectEstimate(
            f.name, 0.0 if b else float(th * th),
            np.zeros(k) + modes, f.levels, bool(b),
        ))
        offset_k += k
    result = FitResult(
        x[:p].copy(), se, spec.fixed_columns, tuple(res), float(value),
        converged, int(opt.nit), cov,
    )
    if not converged:
        raise NonConvergenceError(
            f"marginal optimisation did not converge ({opt.message})", last_iterate=result
        )
    return result


def fit(table: ObservationTable, spec: ModelSpec, offset=None, start=None) -> FitResult:
    """Dispatch to :func:`fit_fixed` or :func:`fit_mixed` according to ``spec``."""
    if spec.is_mixed:
        return fit_mixed(table, spec, offset=offset, start=start)
    if start is not None and isinstance(start, tuple):
        start = start[0]
    return fit_fixed(table, spec, offset=offset, start=start)


def refit_start(result: FitResult):
    """Starting values that warm-start a refit from ``result``."""
    return (result.beta_hat, result.variances)


def with_names(result: FitResult, names):
    return replace(result, coef_names=tuple(names))
