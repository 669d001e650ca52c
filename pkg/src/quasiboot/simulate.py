"""Monte Carlo study of bootstrap-t coverage and interval width.

A simulation *cell* fixes the design (rows, covariates, random factors,
level counts, noise model). Each replicate draws a dataset, fits the
base model, runs the bootstrap, and fits an oracle model that receives
the true random intercepts as a known offset. :func:`evaluate_cell`
turns the replicates into rejection rates, binomial prediction bands
and bootstrap-to-base width ratios.

Generator choices that the method itself leaves open are recorded in
:data:`GENERATOR_ASSUMPTIONS` and copied into every cell summary.
"""

from __future__ import annotations

import csv
import logging
import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .bootstrap import BootstrapConfig, InferenceReport, run_bootstrap, summarize
from .exceptions import ContractError, QuasibootError
from .glmm import FitResult, fit, fit_fixed
from .model_core import ModelSpec, ObservationTable, logistic

logger = logging.getLogger(__name__)

GENERATOR_ASSUMPTIONS = {
    "design": "ceil(p/2) correlated normal columns, rest U(-sqrt3, sqrt3)",
    "correlation": "random orthogonal eigenvectors, eigenvalues U[0.2, 1.8]",
    "fixed_effects": "intercept and non-null slopes N(0, 0.5^2)",
    "random_effect_variance": 1.0,
    "uniform_noise": "mu + U(-w, w), w = min(mu, 1 - mu, 0.25)",
    "crossed_assignment": "independent balanced level assignment per factor",
    "nested_assignment": "larger factor balanced, smaller = larger mod K",
}


@dataclass(frozen=True)
class BetaNoiseParams:
    """Beta distribution with mean ``mu`` and variance ``rho^2 mu (1 - mu)``."""

    mu: np.ndarray
    rho: float

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        if not 0.0 < self.rho < 1.0:
            raise ContractError(f"rho must lie strictly inside (0, 1), got {self.rho}")
        if np.any((mu <= 0) | (mu >= 1)):
            raise ContractError("beta noise needs every mean strictly inside (0, 1)")
        object.__setattr__(self, "mu", mu)
        a, b = self.alpha, self.beta
        if not (np.all(a > 0) and np.all(b > 0) and np.all(np.isfinite(a + b))):
            raise ContractError("infeasible beta parameters for the requested mean and rho")

    @property
    def variance(self):
        return self.rho**2 * self.mu * (1.0 - self.mu)

    @property
    def alpha(self):
        mu = self.mu
        return mu**2 * (1.0 - mu) / self.variance - mu

    @property
    def beta(self):
        return self.alpha * (1.0 / self.mu - 1.0)

    def sample(self, rng):
        return rng.beta(self.alpha, self.beta)


@dataclass(frozen=True)
class SimConfig:
    """One cell of the factorial simulation design.

    ``levels`` gives the level count of each random factor. ``rho`` only
    applies to beta noise.
    """

    rows: int = 1000
    n_fixed: int = 3
    levels: tuple = (40,)
    crossed: bool = True
    effects_null: bool = True
    noise: str = "beta"
    rho: float = 0.6
    replicates: int = 200
    resamples: int = 1000
    alpha: float = 0.05
    seed: int = 0
    workers: int = 1
    re_variance: float = 1.0
    fixed_sd: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(int(k) for k in self.levels))
        if self.rows <= 0 or self.n_fixed < 0 or self.replicates <= 0:
            raise ContractError("rows and replicates must be positive")
        if not 1 <= len(self.levels) <= 2 or min(self.levels) < 2:
            raise ContractError("one or two random factors with at least two levels each")
        if self.noise not in ("beta", "uniform"):
            raise ContractError(f"unknown noise model {self.noise!r}")
        if self.noise == "beta" and not 0.0 < self.rho < 1.0:
            raise ContractError("rho must lie strictly inside (0, 1)")

    @property
    def n_random_factors(self):
        return len(self.levels)

    @property
    def factor_names(self):
        return tuple(f"g{i + 1}" for i in range(self.n_random_factors))

    @property
    def covariate_names(self):
        return tuple(f"x{j + 1}" for j in range(self.n_fixed))

    @property
    def spec(self):
        return ModelSpec.build(self.covariate_names, self.factor_names)

    @property
    def cell_id(self):
        lv = "x".join(str(k) for k in self.levels)
        layout = "" if len(self.levels) == 1 else ("-crossed" if self.crossed else "-nested")
        eff = "null" if self.effects_null else "effects"
        noise = f"beta{self.rho:g}" if self.noise == "beta" else "uniform"
        return f"n{self.rows}-p{self.n_fixed}-k{lv}{layout}-{eff}-{noise}"

    def seed_for(self, replicate, stream):
        """Independent 63-bit seed for ``stream`` of replicate ``replicate``."""
        ss = np.random.SeedSequence([self.seed, replicate, stream])
        return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True)
class SimTruth:
    beta: np.ndarray
    random_effects: dict
    offset: np.ndarray = field(repr=False)
    rho: float = float("nan")


def random_correlation(dim, rng):
    """Correlation matrix from random orthogonal eigenvectors and U[0.2, 1.8] eigenvalues."""
    if dim == 0:
        return np.empty((0, 0))
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    q = q * np.sign(np.diag(r))
    cov = (q * rng.uniform(0.2, 1.8, dim)) @ q.T
    d = np.sqrt(np.diag(cov))
    return cov / np.outer(d, d)


def _balanced(n, k, rng):
    return rng.permutation(np.arange(n) % k)


def _assign_levels(config, rng):
    n, lv = config.rows, config.levels
    if len(lv) == 1:
        return [_balanced(n, lv[0], rng)]
    if config.crossed:
        return [_balanced(n, k, rng) for k in lv]
    big = int(np.argmax(lv))
    codes = [None, None]
    codes[big] = _balanced(n, lv[big], rng)
    codes[1 - big] = codes[big] % lv[1 - big]
    return codes


def generate_dataset(config: SimConfig, replicate: int):
    """Draw one simulated dataset and the truth that generated it."""
    rng = np.random.default_rng(config.seed_for(replicate, 0))
    n, p = config.rows, config.n_fixed
    n_mvn = (p + 1) // 2
    corr = random_correlation(n_mvn, rng)
    mvn = rng.multivariate_normal(np.zeros(n_mvn), corr, size=n, method="cholesky")
    unif = rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), size=(n, p - n_mvn))
    covariates = np.column_stack([mvn, unif])

    codes = _assign_levels(config, rng)
    re = {}
    offset = np.zeros(n)
    for name, k, c in zip(config.factor_names, config.levels, codes):
        b = rng.normal(0.0, np.sqrt(config.re_variance), size=k)
        re[name] = b
        offset += b[c]

    beta = np.zeros(p + 1)
    beta[0] = rng.normal(0.0, config.fixed_sd)
    if not config.effects_null:
        beta[1:] = rng.normal(0.0, config.fixed_sd, size=p)
    mu = logistic(np.column_stack([np.ones(n), covariates]) @ beta + offset)

    if config.noise == "beta":
        y = BetaNoiseParams(mu, config.rho).sample(rng)
    else:
        w = np.minimum(np.minimum(mu, 1.0 - mu), 0.25)
        y = mu + rng.uniform(-1.0, 1.0, size=n) * w
    table = ObservationTable.from_arrays(
        y, covariates, config.covariate_names,
        {name: [f"{name}_{c}" for c in cc] for name, cc in zip(config.factor_names, codes)},
    )
    rho = config.rho if config.noise == "beta" else float("nan")
    return table, SimTruth(beta, re, offset, rho)


def run_oracle(table: ObservationTable, truth: SimTruth, spec: ModelSpec) -> FitResult:
    """Fixed-effect fit with the true random intercepts entered as a known offset."""
    return fit_fixed(table, spec.fixed_only(), offset=truth.offset)


@dataclass
class ReplicateResult:
    replicate: int
    truth: SimTruth
    base: FitResult | None = None
    report: InferenceReport | None = None
    oracle: FitResult | None = None
    error: str | None = None


def run_replicate(config: SimConfig, replicate: int) -> ReplicateResult:
    table, truth = generate_dataset(config, replicate)
    out = ReplicateResult(replicate, truth)
    spec = config.spec
    try:
        out.base = fit(table, spec)
        bcfg = BootstrapConfig(
            R=config.resamples, alpha=config.alpha, seed=config.seed_for(replicate, 1),
        )
        boot = run_bootstrap(table, spec, bcfg, base=out.base)
        out.report = summarize(out.base, boot)
        out.oracle = run_oracle(table, truth, spec)
    except QuasibootError as exc:
        out.error = f"{type(exc).__name__}: {exc}"
        logger.warning("replicate %d failed: %s", replicate, out.error)
    return out


def _run_many(args):
    config, indices = args
    return [run_replicate(config, r) for r in indices]


def run_cell(config: SimConfig, replicates=None):
    """Run every replicate of one cell; results are ordered by replicate index."""
    indices = list(range(config.replicates) if replicates is None else replicates)
    if config.workers == 1:
        results = _run_many((config, indices))
    else:
        ctx = multiprocessing.get_context("fork" if os.name == "posix" else "spawn")
        tasks = [(config, indices[i::config.workers * 2]) for i in range(config.workers * 2)]
        with ProcessPoolExecutor(config.workers, mp_context=ctx) as pool:
            results = [r for chunk in pool.map(_run_many, tasks) for r in chunk]
    results.sort(key=lambda r: r.replicate)
    return results


def binomial_band(n, p=0.05, level=0.95):
    """Central ``level`` prediction band for an observed rate out of ``n`` trials."""
    tail = (1.0 - level) / 2.0
    return (float(stats.binom.ppf(tail, n, p) / n), float(stats.binom.ppf(1.0 - tail, n, p) / n))


@dataclass
class CellSummary:
    """Rejection, coverage and width summaries for one simulation cell.

    Rates are over non-intercept coefficients. ``band`` is the binomial
    95% prediction band for a rejection rate under the nominal level,
    at ``n_replicates`` trials. For two random factors ``tab_levels`` is
    the smaller level count.
    """

    cell_id: str
    n_replicates: int
    n_failed: int
    tab_levels: int
    rho: float
    boot_rejection: np.ndarray
    base_rejection: np.ndarray
    boot_coverage: np.ndarray
    base_coverage: np.ndarray
    pooled_boot_rejection: float
    pooled_base_rejection: float
    band: tuple
    width_ratios: np.ndarray = field(repr=False)
    assumptions: dict = field(default_factory=lambda: dict(GENERATOR_ASSUMPTIONS), repr=False)

    @property
    def mean_width_ratio(self):
        return float(np.mean(self.width_ratios)) if self.width_ratios.size else float("nan")

    def row(self):
        return {
            "cell_id": self.cell_id,
            "n_replicates": self.n_replicates,
            "n_failed": self.n_failed,
            "tab_levels": self.tab_levels,
            "rho": self.rho,
            "pooled_boot_rejection": self.pooled_boot_rejection,
            "pooled_base_rejection": self.pooled_base_rejection,
            "band_lower": self.band[0],
            "band_upper": self.band[1],
            "mean_width_ratio": self.mean_width_ratio,
        }


def evaluate_cell(results, config: SimConfig) -> CellSummary:
    """Summarise replicate results for one cell."""
    good = [r for r in results if r.error is None]
    if not results:
        raise ContractError("evaluate_cell needs at least one replicate")
    z = stats.norm.ppf(1.0 - config.alpha / 2.0)
    p = config.n_fixed
    boot_rej, base_rej, boot_cov, base_cov, ratios = [], [], [], [], []
    for r in good:
        est = r.base.beta_hat[1:]
        se = r.base.base_se[1:]
        truth = r.truth.beta[1:]
        lo = np.array([row.ci_lower for row in r.report.rows[1:]])
        hi = np.array([row.ci_upper for row in r.report.rows[1:]])
        base_lo, base_hi = est - z * se, est + z * se
        boot_rej.append((lo > 0) | (hi < 0))
        base_rej.append((base_lo > 0) | (base_hi < 0))
        boot_cov.append((lo <= truth) & (truth <= hi))
        base_cov.append((base_lo <= truth) & (truth <= base_hi))
        ratios.append((hi - lo) / (base_hi - base_lo))
    shape = (len(good), p)
    boot_rej = np.array(boot_rej, dtype=float).reshape(shape)
    base_rej = np.array(base_rej, dtype=float).reshape(shape)
    boot_cov = np.array(boot_cov, dtype=float).reshape(shape)
    base_cov = np.array(base_cov, dtype=float).reshape(shape)
    ratios = np.array(ratios, dtype=float).reshape(shape)
    n = len(good)

    def mean0(a):
        return a.mean(axis=0) if n else np.full(p, np.nan)

    return CellSummary(
        config.cell_id, n, len(results) - n, min(config.levels),
        config.rho if config.noise == "beta" else float("nan"),
        mean0(boot_rej), mean0(base_rej), mean0(boot_cov), mean0(base_cov),
        float(boot_rej.mean()) if n else float("nan"),
        float(base_rej.mean()) if n else float("nan"),
        binomial_band(max(n, 1), config.alpha),
        ratios.ravel(),
    )


def write_cell_summaries(summaries, path):
    """CSV with one row per cell."""
    rows = [s.row() for s in summaries]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["cell_id"])
        w.writeheader()
        w.writerows(rows)


def write_width_ratios(summaries, path):
    """CSV of ``rho, ratio, cell_id`` records for plotting width against rho."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rho", "ratio", "cell_id"])
        for s in summaries:
            for ratio in s.width_ratios:
                w.writerow([s.rho, float(ratio), s.cell_id])


def config_dict(config: SimConfig):
    d = asdict(config)
    d["levels"] = list(config.levels)
    return d
