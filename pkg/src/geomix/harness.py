"""Monte Carlo experiment runner and statistical verdicts.

Experiments draw steady-state replicas with per-chunk substreams of a
master seed, so re-runs are bit-identical for any worker count, and
report effect sizes with standard errors rather than bare pass/fails.
Central-limit runs are centered at the exact mixture mean assembled from
closed-form moments (empirical centering would inflate the distributional
distance at practical replica counts).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from geomix.asymptotics import CltVariances, QuadratureSpec, clt_variances, lln_limit
from geomix.core import (
    BoundaryParams,
    LocalFunction,
    RandomSeed,
    configuration_batch,
    profile_batch,
)
from geomix.duality import le_deviation
from geomix.fields import TestFunction, field_values_batch
from geomix.moments import (
    geometric_raw_moment_coefficients,
    theta_product_moment,
)

__all__ = [
    "ExperimentConfig",
    "SlopeFit",
    "LlnResult",
    "CltResult",
    "BridgeResult",
    "LeScalingResult",
    "ConcentrationResult",
    "MarginalCheckResult",
    "run_lln",
    "run_clt",
    "run_bridge",
    "run_le_scaling",
    "run_concentration",
    "check_profile_marginals",
    "exact_field_mean",
    "ks_statistic",
    "ks_critical_value",
    "fit_log_slope",
    "normal_cdf",
    "annealed_mc_estimate",
    "homogeneous_mc_free_energy",
]

_CHUNK_BUDGET = 2**22  # doubles per sampling chunk; fixed so chunking is
# independent of worker count and results stay replica-reproducible
_MAX_POLY_DEGREE = 6
_MAX_POLY_WINDOW = 3


@dataclass(frozen=True)
class ExperimentConfig:
    """Shared experiment settings; ``n_ladder`` must be increasing."""

    n_ladder: tuple[int, ...]
    replicas: int
    bounds: BoundaryParams
    g: LocalFunction
    phi: TestFunction
    seed: RandomSeed
    workers: int = 1

    def __post_init__(self) -> None:
        ladder = tuple(int(n) for n in self.n_ladder)
        object.__setattr__(self, "n_ladder", ladder)
        if not ladder or any(b <= a for a, b in zip(ladder, ladder[1:])):
            raise ValueError("n_ladder must be a non-empty increasing sequence")
        if self.replicas < 1:
            raise ValueError("replicas must be positive")
        if self.workers < 1:
            raise ValueError("workers must be positive")


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r_squared: float

    def __post_init__(self) -> None:
        if not -1e-12 <= self.r_squared <= 1.0 + 1e-12:
            raise ValueError("r_squared must lie in [0, 1]")


def _chunk_size(n_sites: int) -> int:
    return max(1, _CHUNK_BUDGET // max(n_sites, 1))


def _map_chunks(
    fn: Callable[[np.random.Generator, int], np.ndarray],
    replicas: int,
    n_sites: int,
    seed: RandomSeed,
    workers: int,
):
    """Evaluate ``fn(rng, count)`` over fixed-size replica chunks.

    Chunk c uses substream c of ``seed``; results are assembled in chunk
    order, so the output is identical for any worker count.
    """
    chunk = _chunk_size(n_sites)
    tasks = [(c, min(chunk, replicas - c * chunk)) for c in range((replicas + chunk - 1) // chunk)]

    def run(task):
        c, count = task
        return fn(seed.substream(c).generator(), count)

    if workers == 1 or len(tasks) == 1:
        parts = [run(t) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, tasks))
    return parts


def _ness_batch(
    rng: np.random.Generator, count: int, n_sites: int, bounds: BoundaryParams
) -> tuple[np.ndarray, np.ndarray]:
    thetas = profile_batch(n_sites, bounds, rng, count)
    return thetas, configuration_batch(thetas, rng)


def ks_statistic(samples: Sequence[float], cdf: Callable[[np.ndarray], np.ndarray]) -> float:
    """Sup-norm distance between the empirical CDF of ``samples`` and ``cdf``.

    Both one-sided gaps are taken at the sorted sample points.  The
    target CDF is treated as continuous; for the degenerate case of a
    single repeated value against its own point-mass CDF the statistic
    evaluates to the full left gap, i.e. 1.0.
    """
    x = np.sort(np.asarray(samples, dtype=float))
    if x.size < 1:
        raise ValueError("ks_statistic needs at least one sample")
    n = x.size
    f = np.asarray(cdf(x), dtype=float)
    upper = np.max(np.arange(1, n + 1) / n - f)
    lower = np.max(f - np.arange(0, n) / n)
    return float(max(upper, lower))


def ks_critical_value(n_samples: int, level: float = 0.01) -> float:
    """Asymptotic Kolmogorov critical value c(level)/sqrt(n)."""
    # c solves 2 * sum_k (-1)^{k-1} exp(-2 k^2 c^2) = level
    c_table = {0.10: 1.2238, 0.05: 1.3581, 0.01: 1.6276}
    if level not in c_table:
        raise ValueError(f"unsupported level {level}; use one of {sorted(c_table)}")
    return c_table[level] / math.sqrt(n_samples)


def normal_cdf(mean: float, variance: float) -> Callable[[np.ndarray], np.ndarray]:
    """CDF of the normal law with the given mean and variance."""
    if variance <= 0:
        raise ValueError("variance must be positive")
    scale = math.sqrt(2.0 * variance)
    erf = np.vectorize(math.erf, otypes=[float])

    def cdf(x):
        return 0.5 * (1.0 + erf((np.asarray(x, dtype=float) - mean) / scale))

    return cdf


def fit_log_slope(points: Sequence[tuple[float, float]]) -> SlopeFit:
    """Ordinary least squares of log(value) on log(N)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 3:
        raise ValueError("need at least 3 (N, value) points")
    if np.any(pts <= 0):
        raise ValueError("log-log fits need positive N and values")
    x = np.log(pts[:, 0])
    y = np.log(pts[:, 1])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float(np.sum(resid**2)) / ss_tot
    return SlopeFit(slope=float(slope), intercept=float(intercept), r_squared=max(min(r2, 1.0), 0.0))


def _poly_mean_terms(g: LocalFunction) -> list[tuple[float, list[np.ndarray]]]:
    if g.monomials is None:
        raise ValueError("exact mixture means require a polynomial local function")
    if (g.degree or 0) > _MAX_POLY_DEGREE or g.k > _MAX_POLY_WINDOW:
        raise ValueError(
            f"exact mixture means support degree <= {_MAX_POLY_DEGREE} "
            f"and window <= {_MAX_POLY_WINDOW}"
        )
    return [
        (coef, [geometric_raw_moment_coefficients(e) for e in exps])
        for exps, coef in g.monomials.items()
    ]


def exact_window_mean(
    g: LocalFunction, start: int, n_sites: int, bounds: BoundaryParams
) -> float:
    """Exact steady-state mean of g on the window starting at ``start``
    (1-based), assembled from order-statistic product moments."""
    terms = _poly_mean_terms(g)
    total = 0.0
    for coef, per_site in terms:
        grids = [np.arange(c.size) for c in per_site]
        mesh = np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1).reshape(-1, g.k)
        for qs in mesh:
            weight = coef
            for c, q in zip(per_site, qs):
                weight *= c[q]
            if weight == 0.0:
                continue
            total += weight * theta_product_moment(start, qs, n_sites, bounds)
    return total


def exact_field_mean(
    g: LocalFunction, phi: TestFunction, n_sites: int, bounds: BoundaryParams
) -> float:
    """Exact mean of the field of g: (1/N) sum_i E[g(window i)] phi(i/(N+1))."""
    weights = phi(np.arange(n_sites - g.k + 1) / (n_sites + 1))
    means = np.array(
        [exact_window_mean(g, i + 1, n_sites, bounds) for i in range(n_sites - g.k + 1)]
    )
    return float(weights @ means / n_sites)


@dataclass(frozen=True)
class LlnResult:
    rows: tuple[tuple[int, float, float], ...]  # (N, mean |X - limit|, se)
    limit: float
    sigma_total: float

    def final_threshold(self, n_se: float = 5.0) -> float:
        n = self.rows[-1][0]
        return n_se * math.sqrt(self.sigma_total / n)

    @property
    def decreasing(self) -> bool:
        devs = [r[1] for r in self.rows]
        return all(b < a for a, b in zip(devs, devs[1:]))


def run_lln(cfg: ExperimentConfig, quad: QuadratureSpec | None = None) -> LlnResult:
    """Mean absolute deviation of the field from its limit, per ladder N."""
    if cfg.g.monomials is not None and (cfg.g.degree or 0) > _MAX_POLY_DEGREE:
        raise ValueError("polynomial degree cap exceeded for the moment hypotheses")
    if quad is None:
        quad = QuadratureSpec.for_bounds(cfg.bounds, degree=2 * (cfg.g.degree or 1))
    limit = lln_limit(cfg.g, cfg.phi, cfg.bounds, quad)
    sigma = clt_variances(cfg.g, cfg.phi, cfg.bounds, quad).total
    rows = []
    for n in cfg.n_ladder:

        def fn(rng, count, n=n):
            _, occ = _ness_batch(rng, count, n, cfg.bounds)
            return np.abs(field_values_batch(cfg.g, cfg.phi, occ) - limit)

        devs = np.concatenate(_map_chunks(fn, cfg.replicas, n, cfg.seed, cfg.workers))
        rows.append(
            (n, float(devs.mean()), float(devs.std(ddof=1) / math.sqrt(devs.size)))
        )
    return LlnResult(rows=tuple(rows), limit=limit, sigma_total=sigma)


@dataclass(frozen=True, eq=False)
class CltResult:
    n_sites: int
    samples: np.ndarray
    ks_distance: float
    ks_threshold: float
    exact_mean: float
    sample_variance: float
    variance_se: float
    target: CltVariances

    @property
    def ks_pass(self) -> bool:
        return self.ks_distance < self.ks_threshold

    @property
    def variance_pass(self) -> bool:
        return abs(self.sample_variance - self.target.total) <= 5.0 * self.variance_se


def run_clt(cfg: ExperimentConfig, quad: QuadratureSpec | None = None) -> CltResult:
    """Distribution of the rescaled fluctuation field at the largest N.

    Samples sqrt(N) * (X_N - exact mean) and compares them against the
    centered normal law with the analytic limit variance: KS distance
    (threshold 1.4x the asymptotic 1% critical value, the slack covering
    the finite-N distance of the law itself) plus a variance check within
    five standard errors of the variance estimator.
    """
    if cfg.replicas < 2000:
        raise ValueError("distributional tests need at least 2000 replicas")
    n = cfg.n_ladder[-1]
    if quad is None:
        quad = QuadratureSpec.for_bounds(cfg.bounds, degree=2 * (cfg.g.degree or 1))
    target = clt_variances(cfg.g, cfg.phi, cfg.bounds, quad)
    mean = exact_field_mean(cfg.g, cfg.phi, n, cfg.bounds)

    def fn(rng, count):
        _, occ = _ness_batch(rng, count, n, cfg.bounds)
        return math.sqrt(n) * (field_values_batch(cfg.g, cfg.phi, occ) - mean)

    samples = np.concatenate(_map_chunks(fn, cfg.replicas, n, cfg.seed, cfg.workers))
    ks = ks_statistic(samples, normal_cdf(0.0, target.total))
    centered_sq = samples**2
    var = float(np.mean(centered_sq))  # exact centering: no mean subtraction
    var_se = float(np.std(centered_sq, ddof=1) / math.sqrt(samples.size))
    return CltResult(
        n_sites=n,
        samples=samples,
        ks_distance=ks,
        ks_threshold=1.4 * ks_critical_value(samples.size, 0.01),
        exact_mean=mean,
        sample_variance=var,
        variance_se=var_se,
        target=target,
    )


@dataclass(frozen=True, eq=False)
class BridgeResult:
    n_sites: int
    grid: tuple[float, ...]
    empirical: np.ndarray
    analytic: np.ndarray
    standard_errors: np.ndarray

    def max_deviation_in_se(self) -> float:
        return float(np.max(np.abs(self.empirical - self.analytic) / self.standard_errors))


def run_bridge(
    cfg: ExperimentConfig, grid: Sequence[float] | None = None
) -> BridgeResult:
    """Empirical covariance of the rescaled parameter fluctuations.

    For grid points s, t the covariance of sqrt(N)(Theta_{floor(sN)} - mean)
    is compared against the kernel width^2 * (min(s,t) - s*t).  Centering
    uses the exact order-statistic means; standard errors come from the
    empirical fourth moments.
    """
    if cfg.replicas < 2000:
        raise ValueError("covariance estimation needs at least 2000 replicas")
    grid = tuple(float(s) for s in (grid if grid is not None else (0.25, 0.5, 0.75)))
    n = cfg.n_ladder[-1]
    idx = np.array([int(math.floor(s * n)) for s in grid])
    if np.any(idx < 1) or np.any(idx > n):
        raise ValueError("grid points map outside the chain")
    exact_means = cfg.bounds.theta_left + cfg.bounds.width * idx / (n + 1)

    def fn(rng, count):
        thetas = profile_batch(n, cfg.bounds, rng, count)
        v = math.sqrt(n) * (thetas[:, idx - 1] - exact_means)
        return _bridge_moments(v)

    parts = _map_chunks(fn, cfg.replicas, n, cfg.seed, cfg.workers)
    s1 = sum(p[0] for p in parts)
    s2 = sum(p[1] for p in parts)
    s4 = sum(p[2] for p in parts)
    r = cfg.replicas
    mean_v = s1 / r
    cov = s2 / r - np.outer(mean_v, mean_v)
    cov *= r / (r - 1)
    var_of_cov = s4 / r - (s2 / r) ** 2
    se = np.sqrt(np.maximum(var_of_cov, 0.0) / r)
    analytic = np.array(
        [
            [
                cfg.bounds.width**2 * (min(s, t) - s * t)
                for t in grid
            ]
            for s in grid
        ]
    )
    return BridgeResult(
        n_sites=n,
        grid=grid,
        empirical=cov,
        analytic=analytic,
        standard_errors=se,
    )


def _bridge_moments(v: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    prods = v[:, :, None] * v[:, None, :]
    return v.sum(axis=0), prods.sum(axis=0), (prods**2).sum(axis=0)


@dataclass(frozen=True)
class LeScalingResult:
    rows: tuple[tuple[int, float], ...]  # (N, deviation)
    fit: SlopeFit | None

    @property
    def degenerate(self) -> bool:
        return self.fit is None


def run_le_scaling(
    x: float, powers: Sequence[int], n_ladder: Sequence[int], bounds: BoundaryParams
) -> LeScalingResult:
    """Log-log slope of the exact local-equilibrium deviation along a
    ladder of system sizes.  Deterministic: no Monte Carlo is involved.
    An all-zero deviation ladder (equilibrium) yields a degenerate report
    with fit = None."""
    rows = tuple((int(n), le_deviation(x, powers, int(n), bounds)) for n in n_ladder)
    if any(dev == 0.0 for _, dev in rows):
        return LeScalingResult(rows=rows, fit=None)
    fit = fit_log_slope([(n, abs(dev)) for n, dev in rows])
    return LeScalingResult(rows=rows, fit=fit)


@dataclass(frozen=True)
class ConcentrationResult:
    rows: tuple[tuple[int, float, float, float, float], ...]
    # (N, eps, empirical tail, se, union bound)

    @property
    def tail_nonincreasing(self) -> bool:
        tails = [r[2] for r in self.rows]
        return all(b <= a for a, b in zip(tails, tails[1:]))


def run_concentration(
    n_ladder: Sequence[int],
    bounds: BoundaryParams,
    replicas: int,
    seed: RandomSeed,
    eps_schedule: Callable[[int], float] | Sequence[float] | None = None,
    workers: int = 1,
) -> ConcentrationResult:
    """Empirical tail of the maximal parameter deviation, per ladder N.

    Reports P(max_i |Theta_i - E Theta_i| >= eps(N)) next to the
    Chebyshev union bound computed from the verified order-statistic
    variance i(N+1-i) width^2 / ((N+1)^2 (N+2)).  With the default
    schedule eps(N) = N^(-1/4) the empirical tail vanishes along the
    ladder even though that union bound does not (it is O(1) and clipped
    at 1), so the bound column is diagnostic only.
    """
    if replicas < 10**4:
        raise ValueError("tail estimation needs at least 10^4 replicas")
    ladder = [int(n) for n in n_ladder]
    if eps_schedule is None:
        eps_list = [n ** (-0.25) for n in ladder]
    elif callable(eps_schedule):
        eps_list = [float(eps_schedule(n)) for n in ladder]
    else:
        eps_list = [float(e) for e in eps_schedule]
        if len(eps_list) != len(ladder):
            raise ValueError("eps schedule length must match the ladder")
    rows = []
    for n, eps in zip(ladder, eps_list):
        i = np.arange(1, n + 1)
        exact_mean = bounds.theta_left + bounds.width * i / (n + 1)
        variances = i * (n + 1 - i) * bounds.width**2 / ((n + 1) ** 2 * (n + 2))
        union = min(1.0, float(variances.sum()) / eps**2) if eps > 0 else 1.0

        def fn(rng, count, n=n, eps=eps, exact_mean=exact_mean):
            thetas = profile_batch(n, bounds, rng, count)
            sup_dev = np.max(np.abs(thetas - exact_mean), axis=1)
            return (sup_dev >= eps).astype(float)

        hits = np.concatenate(_map_chunks(fn, replicas, n, seed.substream(n), workers))
        p = float(hits.mean())
        se = math.sqrt(max(p * (1.0 - p), 0.0) / replicas)
        rows.append((n, eps, p, se, union))
    return ConcentrationResult(rows=tuple(rows))


@dataclass(frozen=True, eq=False)
class MarginalCheckResult:
    n_sites: int
    site_index: np.ndarray
    empirical_mean: np.ndarray
    mean_se: np.ndarray
    exact_mean: np.ndarray
    empirical_var: np.ndarray
    var_se: np.ndarray
    exact_var: np.ndarray
    competing_var: np.ndarray

    def mean_deviations_in_se(self) -> np.ndarray:
        return np.abs(self.empirical_mean - self.exact_mean) / self.mean_se

    def var_deviations_in_se(self) -> np.ndarray:
        return np.abs(self.empirical_var - self.exact_var) / self.var_se

    def competing_var_deviations_in_se(self) -> np.ndarray:
        return np.abs(self.empirical_var - self.competing_var) / self.var_se


def check_profile_marginals(
    n_sites: int,
    bounds: BoundaryParams,
    replicas: int,
    seed: RandomSeed,
    workers: int = 1,
) -> MarginalCheckResult:
    """Empirical mean and variance of each ordered parameter vs the
    rescaled Beta(i, N+1-i) formulas.

    ``competing_var`` is the variant formula with an extra factor N+2 in
    the denominator; the check quantifies how decisively the data rule it
    out (its deviation should be far outside the error band whenever the
    two formulas differ measurably).
    """

    def fn(rng, count):
        thetas = profile_batch(n_sites, bounds, rng, count)
        return np.stack(
            [
                thetas.sum(axis=0),
                (thetas**2).sum(axis=0),
                (thetas**3).sum(axis=0),
                (thetas**4).sum(axis=0),
            ]
        )

    parts = _map_chunks(fn, replicas, n_sites, seed, workers)
    sums = sum(parts)
    r = replicas
    m1 = sums[0] / r
    m2 = sums[1] / r
    m3 = sums[2] / r
    m4 = sums[3] / r
    var = (m2 - m1**2) * r / (r - 1)
    mean_se = np.sqrt(np.maximum(var, 0.0) / r)
    # se of the variance estimator from central fourth moments
    mu4 = m4 - 4 * m3 * m1 + 6 * m2 * m1**2 - 3 * m1**4
    var_se = np.sqrt(np.maximum(mu4 - var**2, 0.0) / r)
    i = np.arange(1, n_sites + 1)
    exact_mean = bounds.theta_left + bounds.width * i / (n_sites + 1)
    exact_var = i * (n_sites + 1 - i) * bounds.width**2 / (
        (n_sites + 1) ** 2 * (n_sites + 2)
    )
    return MarginalCheckResult(
        n_sites=n_sites,
        site_index=i,
        empirical_mean=m1,
        mean_se=mean_se,
        exact_mean=exact_mean,
        empirical_var=var,
        var_se=var_se,
        exact_var=exact_var,
        competing_var=exact_var / (n_sites + 2),
    )


def annealed_mc_estimate(
    g: LocalFunction,
    lam: float,
    n_sites: int,
    bounds: BoundaryParams,
    replicas: int,
    seed: RandomSeed,
    workers: int = 1,
) -> tuple[float, float]:
    """(1/N) log E[exp(lam * N * field with phi = 1)] over steady-state
    replicas, with a delta-method standard error for the (1/N) log."""

    def fn(rng, count):
        _, occ = _ness_batch(rng, count, n_sites, bounds)
        return lam * n_sites * field_values_batch(
            g, TestFunction(lambda x: np.ones_like(x)), occ
        )

    exponents = np.concatenate(_map_chunks(fn, replicas, n_sites, seed, workers))
    return _log_mean_exp_with_se(exponents, n_sites)


def homogeneous_mc_free_energy(
    g: LocalFunction,
    lam: float,
    theta: float,
    n_sites: int,
    replicas: int,
    seed: RandomSeed,
    workers: int = 1,
) -> tuple[float, float]:
    """Monte Carlo (1/N) log E[exp(lam * sum of shifted g)] under the
    homogeneous geometric product at theta (windows i = 0..N-k)."""

    def fn(rng, count):
        thetas = np.full((count, n_sites), float(theta))
        occ = configuration_batch(thetas, rng)
        return lam * n_sites * field_values_batch(
            g, TestFunction(lambda x: np.ones_like(x)), occ
        )

    exponents = np.concatenate(_map_chunks(fn, replicas, n_sites, seed, workers))
    return _log_mean_exp_with_se(exponents, n_sites)


def _log_mean_exp_with_se(exponents: np.ndarray, n_sites: int) -> tuple[float, float]:
    shift = float(exponents.max())
    scaled = np.exp(exponents - shift)
    mean = float(scaled.mean())
    se_log = float(scaled.std(ddof=1) / (mean * math.sqrt(scaled.size)))
    return (shift + math.log(mean)) / n_sites, se_log / n_sites
