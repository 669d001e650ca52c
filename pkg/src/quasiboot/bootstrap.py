"""Bootstrap-t confidence intervals and p-values for quasi-likelihood fits.

Each replicate resamples whole blocks of one grouping factor (or runs a
two-way pigeonhole resample), refits the same model and stores the
coefficients and standard errors. For coefficient ``j`` the studentized
replicate statistics are::

    t*_r = (beta*_rj - beta_hat_j) / se*_rj

and with ``q_a`` the ``a`` quantile of the ``t*`` the interval is::

    (beta_hat_j - q_{1 - alpha/2} se_j,  beta_hat_j - q_{alpha/2} se_j)

The p-value is the largest ``alpha`` whose interval still contains zero.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
import multiprocessing

import numpy as np

from .exceptions import BootstrapAbortError, ContractError, FitError, QuasibootError
from .glmm import FitResult, fit, refit_start
from .model_core import ModelSpec, ObservationTable
from .resample import ResampleMode, ResamplePlan, resample, select_bootstrap_factor

logger = logging.getLogger(__name__)

DEFAULT_RESAMPLES = 15000
MIN_RESAMPLES = 100
GRANULARITY_THRESHOLD = 0.05


@dataclass(frozen=True)
class BootstrapConfig:
    """Settings for a bootstrap run.

    ``factors`` overrides the automatic choice of resampling factor(s):
    one name for block mode, two for pigeonhole mode.
    """

    R: int = DEFAULT_RESAMPLES
    alpha: float = 0.05
    seed: int = 0
    max_failure_fraction: float = 0.01
    workers: int = 1
    mode: str = ResampleMode.BLOCK.value
    factors: tuple = ()

    def __post_init__(self):
        if int(self.R) < MIN_RESAMPLES:
            raise ContractError(f"need at least {MIN_RESAMPLES} resamples, got {self.R}")
        if not 0.0 < self.alpha < 1.0:
            raise ContractError("alpha must lie strictly between 0 and 1")
        if not 0.0 <= self.max_failure_fraction <= 1.0:
            raise ContractError("max_failure_fraction must lie in [0, 1]")
        if self.workers < 1:
            raise ContractError("workers must be positive")
        object.__setattr__(self, "mode", ResampleMode(self.mode).value)
        object.__setattr__(self, "factors", tuple(self.factors))


@dataclass
class BootstrapOutput:
    """Replicate estimates from a bootstrap run.

    ``beta_star`` and ``se_star`` have one row per successful replicate,
    ordered by ``replicate_index``. ``failures`` maps the index of every
    failed replicate to the reason.
    """

    beta_star: np.ndarray
    se_star: np.ndarray
    replicate_index: np.ndarray
    failures: dict
    config: BootstrapConfig
    factors: tuple = ()

    @property
    def n_success(self):
        return self.beta_star.shape[0]

    @property
    def n_failed(self):
        return len(self.failures)

    @property
    def replicates(self):
        return list(zip(self.beta_star, self.se_star))

    def to_dict(self):
        return {
            "config": asdict(self.config),
            "factors": list(self.factors),
            "replicate_index": self.replicate_index.tolist(),
            "beta_star": self.beta_star.tolist(),
            "se_star": self.se_star.tolist(),
            "failures": {str(k): v for k, v in self.failures.items()},
        }

    @classmethod
    def from_dict(cls, d):
        cfg = dict(d["config"])
        cfg["factors"] = tuple(cfg.get("factors", ()))
        p = len(d["beta_star"][0]) if d["beta_star"] else 0
        return cls(
            np.asarray(d["beta_star"], float).reshape(-1, p),
            np.asarray(d["se_star"], float).reshape(-1, p),
            np.asarray(d["replicate_index"], dtype=np.int64),
            {int(k): v for k, v in d["failures"].items()},
            BootstrapConfig(**cfg),
            tuple(d.get("factors", ())),
        )


def resolve_factors(table: ObservationTable, spec: ModelSpec, config: BootstrapConfig):
    """Factors the resampler will use under ``config``."""
    if config.factors:
        for name in config.factors:
            table.factor(name)
        return config.factors
    candidates = spec.random_intercept_factors or tuple(f.name for f in table.factors)
    if config.mode == ResampleMode.PIGEONHOLE.value:
        if len(candidates) != 2:
            raise ContractError("pigeonhole resampling needs exactly two factors")
        return tuple(candidates)
    if not candidates:
        raise ContractError("no grouping factor available to resample over")
    return (select_bootstrap_factor(table, candidates),)


def _replicate(table, spec, start, mode, factors, seed, index):
    plan = ResamplePlan(mode, factors, seed, index)
    try:
        res = resample(table, plan)
        out = fit(res.table, spec, start=start)
    except (FitError, ContractError, QuasibootError, np.linalg.LinAlgError) as exc:
        return index, None, None, f"{type(exc).__name__}: {exc}"
    return index, out.beta_hat, out.base_se, None


def _run_chunk(args):
    table, spec, start, mode, factors, seed, indices = args
    return [_replicate(table, spec, start, mode, factors, seed, i) for i in indices]


def _chunks(n, parts):
    bounds = np.linspace(0, n, parts + 1).astype(int)
    return [range(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def run_bootstrap(table: ObservationTable, spec: ModelSpec, config: BootstrapConfig,
                  base: FitResult | None = None) -> BootstrapOutput:
    """Resample, refit and collect ``config.R`` bootstrap replicates.

    Raises
    ------
    FitError
        The base model fails on the original data.
    BootstrapAbortError
        More than ``config.max_failure_fraction`` of replicates failed.
    """
    if base is None:
        base = fit(table, spec)
    factors = resolve_factors(table, spec, config)
    start = refit_start(base)
    common = (table, spec, start, config.mode, factors, config.seed)

    if config.workers == 1:
        results = _run_chunk((*common, range(config.R)))
    else:
        tasks = [(*common, idx) for idx in _chunks(config.R, config.workers * 4)]
        ctx = multiprocessing.get_context("fork" if os.name == "posix" else "spawn")
        with ProcessPoolExecutor(config.workers, mp_context=ctx) as pool:
            results = [r for chunk in pool.map(_run_chunk, tasks) for r in chunk]
    results.sort(key=lambda r: r[0])

    p = base.beta_hat.size
    ok = [r for r in results if r[3] is None]
    failures = {r[0]: r[3] for r in results if r[3] is not None}
    output = BootstrapOutput(
        np.array([r[1] for r in ok]).reshape(-1, p),
        np.array([r[2] for r in ok]).reshape(-1, p),
        np.array([r[0] for r in ok], dtype=np.int64),
        failures,
        config,
        tuple(factors),
    )
    if len(failures) > config.max_failure_fraction * config.R:
        raise BootstrapAbortError(
            f"{len(failures)} of {config.R} replicates failed "
            f"(limit {config.max_failure_fraction:.1%}); first: "
            f"{next(iter(failures.values()))}",
            failures,
        )
    if failures:
        logger.warning("%d of %d bootstrap replicates failed", len(failures), config.R)
    return output


def t_statistics(output: BootstrapOutput, base: FitResult, j: int):
    """Studentized replicate statistics for coefficient ``j``.

    Replicates whose standard error is zero or non-finite are dropped.
    """
    if output.n_success == 0:
        raise ContractError("no successful bootstrap replicates")
    se = output.se_star[:, j]
    keep = np.isfinite(se) & (se > 0) & np.isfinite(output.beta_star[:, j])
    return (output.beta_star[keep, j] - base.beta_hat[j]) / se[keep]


def quantile(values, q):
    """Linearly interpolated order statistic.

    With sorted values ``v[1..m]`` and ``h = (m - 1) q + 1`` the result
    is ``v[floor(h)] + (h - floor(h)) (v[floor(h) + 1] - v[floor(h)])``.
    """
    v = np.sort(np.asarray(values, dtype=float))
    m = v.size
    if m == 0:
        raise ContractError("quantile of an empty vector")
    if not 0.0 <= q <= 1.0:
        raise ContractError("q must lie in [0, 1]")
    h = (m - 1) * q
    lo = int(np.floor(h))
    if lo >= m - 1:
        return float(v[-1])
    return float(v[lo] + (h - lo) * (v[lo + 1] - v[lo]))


def empirical_cdf(values, t):
    """Inverse of :func:`quantile`; tied values get the middle of their range."""
    v = np.sort(np.asarray(values, dtype=float))
    m = v.size
    if m == 0:
        raise ContractError("empirical CDF of an empty vector")
    lo = int(np.searchsorted(v, t, side="left"))
    hi = int(np.searchsorted(v, t, side="right"))
    if m == 1:
        return 0.5 if lo < hi else float(lo)
    if lo < hi:
        return 0.5 * (lo + hi - 1) / (m - 1)
    if lo == 0:
        return 0.0
    if lo == m:
        return 1.0
    frac = (t - v[lo - 1]) / (v[lo] - v[lo - 1])
    return float((lo - 1 + frac) / (m - 1))


def confidence_interval(base: FitResult, ts, alpha, j: int):
    """Bootstrap-t interval for coefficient ``j`` at level ``1 - alpha``."""
    b, se = base.beta_hat[j], base.base_se[j]
    lower = b - quantile(ts, 1.0 - alpha / 2.0) * se
    upper = b - quantile(ts, alpha / 2.0) * se
    return float(lower), float(upper)


def p_value(base: FitResult, ts, j: int):
    """Two-sided bootstrap-t p-value for ``beta_j = 0``, floored at ``1/m``."""
    ts = np.asarray(ts, dtype=float)
    t0 = base.beta_hat[j] / base.base_se[j]
    F = empirical_cdf(ts, t0)
    p = 2.0 * min(F, 1.0 - F)
    return float(min(1.0, max(p, 1.0 / ts.size)))


@dataclass(frozen=True)
class CoefficientInference:
    name: str
    estimate: float
    exp_estimate: float
    base_se: float
    ci_lower: float = float("nan")
    ci_upper: float = float("nan")
    p_value: float = float("nan")
    q_lower: float = float("nan")
    q_upper: float = float("nan")
    n_t: int = 0

    @property
    def granularity_limited(self):
        """p-values under 0.05 rest on few extreme replicates."""
        return bool(self.p_value < GRANULARITY_THRESHOLD)

    def to_dict(self):
        d = asdict(self)
        d["granularity_limited"] = self.granularity_limited
        return d


@dataclass(frozen=True)
class InferenceReport:
    """Per-coefficient estimates with bootstrap-t intervals and p-values."""

    rows: tuple
    alpha: float
    R: int = 0
    R_effective: int = 0
    n_failed: int = 0
    has_bootstrap: bool = True

    def row(self, name):
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_dict(self):
        return {
            "alpha": self.alpha,
            "R": self.R,
            "R_effective": self.R_effective,
            "n_failed": self.n_failed,
            "has_bootstrap": self.has_bootstrap,
            "coefficients": [r.to_dict() for r in self.rows],
        }


def base_report(base: FitResult, alpha=0.05) -> InferenceReport:
    """Report with base-model columns only."""
    rows = tuple(
        CoefficientInference(n, float(b), float(np.exp(b)), float(s))
        for n, b, s in zip(base.coef_names, base.beta_hat, base.base_se)
    )
    return InferenceReport(rows, alpha, has_bootstrap=False)


def summarize(base: FitResult, output: BootstrapOutput, alpha=None) -> InferenceReport:
    """Combine the base fit and bootstrap replicates into an :class:`InferenceReport`."""
    alpha = output.config.alpha if alpha is None else alpha
    rows = []
    invalid = 0
    for j, name in enumerate(base.coef_names):
        ts = t_statistics(output, base, j)
        invalid = max(invalid, output.n_success - ts.size)
        b, se = float(base.beta_hat[j]), float(base.base_se[j])
        lo, hi = confidence_interval(base, ts, alpha, j)
        rows.append(CoefficientInference(
            name, b, float(np.exp(b)), se, lo, hi, p_value(base, ts, j),
            quantile(ts, alpha / 2.0), quantile(ts, 1.0 - alpha / 2.0), int(ts.size),
        ))
    return InferenceReport(
        tuple(rows), alpha, output.config.R, output.n_success - invalid,
        output.n_failed + invalid,
    )
