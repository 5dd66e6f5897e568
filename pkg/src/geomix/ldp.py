"""Large-deviation machinery: free energies, rate functions, and the two
variational problems for the mixture measure.

For a bounded local function g, the homogeneous free energy
F(theta, lambda) is the exponential growth rate per site of
E[exp(lambda * sum of shifted g)] under the geometric product at theta.
For k = 1 it is a single truncated sum; for k >= 2 it is the log of the
leading eigenvalue of a transfer kernel on (k-1)-site windows, computed
by power iteration.  Level-1 rates follow by Legendre transform, the
parameter-path rate J penalizes the log-slope of monotone profiles, and
the two variational problems (annealed free energy, rate of a target
profile) are solved by projected-gradient ascent/descent over discretized
monotone profiles in the increment parametrization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss

from geomix.core import BoundaryParams, LocalFunction
from geomix.asymptotics import (
    QuadratureError,
    QuadratureSpec,
    _composite_nodes,
    _refine,
    geometric_tail_bound,
)
from geomix.fields import TestFunction

__all__ = [
    "NumericError",
    "OptimizationError",
    "FreeEnergySpec",
    "SolverConfig",
    "MonotoneProfile",
    "free_energy_site",
    "free_energy_transfer",
    "free_energy_finite_chain",
    "rate_function",
    "path_rate",
    "inhom_free_energy",
    "annealed_free_energy",
    "profile_rate",
    "AnnealedResult",
    "ProfileRateResult",
]

_POWER_ITERATION_CAP = 20_000
_BISECTION_STEPS = 60


class NumericError(RuntimeError):
    """Power iteration or root finding failed to converge."""


class OptimizationError(RuntimeError):
    """Every solver start failed to make line-search progress."""


_TAIL_TOL = 1e-9


@dataclass(frozen=True)
class FreeEnergySpec:
    """Free-energy evaluation settings for one bounded local function."""

    g: LocalFunction
    lambda_domain: tuple[float, float] = (-8.0, 8.0)
    m_state: int = 128
    eigen_tol: float = 1e-12

    def __post_init__(self) -> None:
        if not self.g.bounded:
            raise ValueError("free energies require a bounded local function")
        if self.lambda_domain[0] >= self.lambda_domain[1]:
            raise ValueError("lambda domain must be a non-trivial interval")
        if self.m_state < 1:
            raise ValueError("state truncation must be positive")

    def check_truncation(self, theta: float, lam: float) -> None:
        err = math.exp(abs(lam) * float(self.g.bound)) * geometric_tail_bound(
            theta, self.m_state
        )
        if err > _TAIL_TOL:
            raise QuadratureError(
                f"state truncation {self.m_state} leaves tail {err:.2e} at "
                f"theta={theta}, lambda={lam}"
            )

    @property
    def lambda_cap(self) -> float:
        # keep exp(lam * bound) finite
        return min(600.0 / max(float(self.g.bound), 1e-9), 1e6)

    def certified_lambda_caps(self, thetas: np.ndarray) -> np.ndarray:
        """Largest |lambda| per theta whose truncated tail stays certified:
        exp(|lam| * bound) * (theta/(1+theta))**(m_state+1) <= tolerance."""
        thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
        p = thetas / (1.0 + thetas)
        bound = max(float(self.g.bound), 1e-9)
        with np.errstate(divide="ignore"):
            caps = (math.log(_TAIL_TOL) - (self.m_state + 1) * np.log(p)) / bound
        caps = np.where(p == 0.0, self.lambda_cap, caps)
        # shave a rounding margin so evaluation at the cap stays certified
        return np.clip(caps * (1.0 - 1e-9), 1.0, self.lambda_cap)


@dataclass(frozen=True)
class SolverConfig:
    """Projected-gradient solver settings (exposed through the CLI)."""

    max_iterations: int = 4000
    step_size: float = 0.25
    shrink_factor: float = 0.5
    tolerance: float = 1e-9
    multistart: int = 4
    seed: int = 0
    grid_size: int = 200

    def __post_init__(self) -> None:
        if not 0.0 < self.shrink_factor < 1.0:
            raise ValueError("shrink factor must lie in (0, 1)")
        if self.grid_size < 2:
            raise ValueError("grid size must be >= 2")


def _default_delta_min(bounds: BoundaryParams) -> float:
    return 1e-8 * bounds.width


@dataclass(frozen=True, eq=False)
class MonotoneProfile:
    """Non-decreasing parameter path on the uniform grid j/M, ending at
    theta_right.  Strict increase (increments >= delta_min) is required
    only where a finite path rate is needed."""

    values: np.ndarray
    bounds: BoundaryParams

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        if self.bounds.width <= 0.0:
            raise ValueError("monotone profiles require theta_left < theta_right")
        if vals.ndim != 1 or vals.size < 2:
            raise ValueError("profile grid needs at least two values")
        if np.any(np.diff(vals) < -1e-12 * self.bounds.width):
            raise ValueError("profile values must be non-decreasing")
        if vals[0] < self.bounds.theta_left - 1e-9 * max(1.0, self.bounds.width):
            raise ValueError("profile values must be >= theta_left")
        if abs(vals[-1] - self.bounds.theta_right) > 1e-9 * max(1.0, self.bounds.width):
            raise ValueError("profile must end at theta_right")

    @property
    def m_cells(self) -> int:
        return self.values.size - 1

    @property
    def abscissae(self) -> np.ndarray:
        return np.arange(self.values.size) / self.m_cells

    def interpolate(self, x) -> np.ndarray:
        return np.interp(np.asarray(x, dtype=float), self.abscissae, self.values)

    @classmethod
    def linear(cls, bounds: BoundaryParams, m_cells: int) -> "MonotoneProfile":
        vals = bounds.theta_left + bounds.width * (np.arange(m_cells + 1) / m_cells)
        vals[-1] = bounds.theta_right
        return cls(values=vals, bounds=bounds)


def _site_values(g: LocalFunction, m_state: int) -> np.ndarray:
    return np.asarray(g(np.arange(m_state + 1)), dtype=float)


def _weights(thetas: np.ndarray, m_state: int) -> np.ndarray:
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    p = thetas / (1.0 + thetas)
    return (1.0 - p)[:, None] * p[:, None] ** np.arange(m_state + 1)[None, :]


def _free_energy_site_nodes(
    thetas: np.ndarray, lams: np.ndarray, spec: FreeEnergySpec
) -> np.ndarray:
    """Vectorized k=1 free energy over paired (theta, lambda) nodes."""
    gvals = _site_values(spec.g, spec.m_state)
    w = _weights(thetas, spec.m_state)
    lams = np.atleast_1d(np.asarray(lams, dtype=float))
    tilt = np.exp(lams[:, None] * gvals[None, :])
    return np.log(np.sum(w * tilt, axis=1))


def free_energy_site(theta: float, lam: float, g: LocalFunction, m_state: int = 128) -> float:
    """log sum_n exp(lam * g(n)) nu_theta(n) for a bounded single-site g.

    The truncated-sum tail is certified against the geometric tail scaled
    by exp(|lam| * bound).
    """
    if g.k != 1:
        raise ValueError("free_energy_site requires a single-site local function")
    spec = FreeEnergySpec(g=g, m_state=m_state)
    spec.check_truncation(theta, lam)
    return float(_free_energy_site_nodes(np.array([theta]), np.array([lam]), spec)[0])


def _transfer_tensor(theta: float, lam: float, spec: FreeEnergySpec) -> np.ndarray:
    """exp(lam * g) * nu_theta(n_k) on the k-site state grid, with k=1
    lifted to a two-site kernel."""
    g = spec.g
    k = max(g.k, 2)
    if k > 4:
        raise ValueError("transfer kernels are limited to k <= 4")
    m = spec.m_state
    axes = np.meshgrid(*([np.arange(m + 1)] * k), indexing="ij")
    gvals = np.broadcast_to(
        np.asarray(g(*axes[: g.k]), dtype=float), (m + 1,) * k
    )
    nu = _weights(np.array([theta]), m)[0]
    return np.exp(lam * gvals) * nu.reshape((1,) * (k - 1) + (m + 1,))


def free_energy_transfer(theta: float, lam: float, spec: FreeEnergySpec) -> float:
    """Free energy of g via the leading transfer-kernel eigenvalue.

    The kernel acts on (k-1)-site windows,
    K(w, w') = nu_theta(n_k) * exp(lam * g(n_1, ..., n_k)) for
    w = (n_1..n_{k-1}), w' = (n_2..n_k); the result is the log of its
    leading eigenvalue from power iteration.  Single-site functions are
    lifted to a two-site kernel, which reproduces :func:`free_energy_site`.
    """
    spec.check_truncation(theta, lam)
    t = _transfer_tensor(theta, lam, spec)
    k = t.ndim
    letters = "abcd"[:k]
    sub = f"{letters},{letters[1:]}->{letters[:-1]}"
    v = np.ones((spec.m_state + 1,) * (k - 1))
    v /= v.sum()
    eigen = np.nan
    for _ in range(_POWER_ITERATION_CAP):
        kv = np.einsum(sub, t, v)
        new_eigen = float(kv.sum())
        if new_eigen <= 0.0 or not math.isfinite(new_eigen):
            raise NumericError(f"degenerate transfer iterate at theta={theta}, lam={lam}")
        v = kv / new_eigen
        if math.isfinite(eigen) and abs(new_eigen - eigen) <= spec.eigen_tol * max(
            1.0, abs(new_eigen)
        ):
            return math.log(new_eigen)
        eigen = new_eigen
    raise NumericError(
        f"power iteration did not converge within {_POWER_ITERATION_CAP} steps"
    )


def free_energy_finite_chain(
    theta: float, lam: float, spec: FreeEnergySpec, n_sites: int
) -> float:
    """Exact (1/N) log E[exp(lam * sum of shifted g)] on a finite chain.

    Repeated application of the transfer kernel (with running
    renormalization) against the window marginal; the large-N limit of
    this quantity is :func:`free_energy_transfer`.
    """
    g = spec.g
    if g.k == 1:
        # all N windows tilt independently, so the per-site value is exact
        return _free_energy(theta, lam, spec)
    k = g.k
    if n_sites < k:
        raise ValueError(f"chain of {n_sites} sites is shorter than the window {k}")
    spec.check_truncation(theta, lam)
    t = _transfer_tensor(theta, lam, spec)
    letters = "abcd"[: t.ndim]
    sub = f"{letters},{letters[1:]}->{letters[:-1]}"
    v = np.ones((spec.m_state + 1,) * (k - 1))
    log_total = 0.0
    for _ in range(n_sites - k + 1):
        v = np.einsum(sub, t, v)
        norm = float(v.sum())
        log_total += math.log(norm)
        v /= norm
    w = _weights(np.array([theta]), spec.m_state)[0]
    marginal = w
    for _ in range(k - 2):
        marginal = np.multiply.outer(marginal, w)
    return (log_total + math.log(float(np.sum(marginal * v)))) / n_sites


def _free_energy(theta: float, lam: float, spec: FreeEnergySpec) -> float:
    if spec.g.k == 1:
        spec.check_truncation(theta, lam)
        return float(_free_energy_site_nodes(np.array([theta]), np.array([lam]), spec)[0])
    return free_energy_transfer(theta, lam, spec)


def _free_energy_nodes(thetas: np.ndarray, lams: np.ndarray, spec: FreeEnergySpec) -> np.ndarray:
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    lams = np.broadcast_to(np.asarray(lams, dtype=float), thetas.shape)
    # pairwise tail certification: each node has its own admissible range
    p = thetas / (1.0 + thetas)
    errs = np.exp(np.abs(lams) * float(spec.g.bound)) * p ** (spec.m_state + 1)
    if np.any(errs > _TAIL_TOL):
        worst = int(np.argmax(errs))
        raise QuadratureError(
            f"state truncation {spec.m_state} leaves tail {errs[worst]:.2e} at "
            f"theta={thetas[worst]}, lambda={lams[worst]}"
        )
    if spec.g.k == 1:
        return _free_energy_site_nodes(thetas, lams, spec)
    return np.array(
        [free_energy_transfer(float(t), float(l), spec) for t, l in zip(thetas, lams)]
    )


def _free_energy_lambda_deriv_nodes(
    thetas: np.ndarray, lams: np.ndarray, spec: FreeEnergySpec
) -> np.ndarray:
    step = 1e-6 * (1.0 + np.abs(lams))
    hi = _free_energy_nodes(thetas, lams + step, spec)
    lo = _free_energy_nodes(thetas, lams - step, spec)
    return (hi - lo) / (2.0 * step)


def _g_value_range(spec: FreeEnergySpec) -> tuple[float, float]:
    g = spec.g
    axes = np.meshgrid(*([np.arange(spec.m_state + 1)] * g.k), indexing="ij")
    vals = np.asarray(g(*axes), dtype=float)
    return float(vals.min()), float(vals.max())


def _rate_nodes(
    thetas: np.ndarray, xs: np.ndarray, spec: FreeEnergySpec
) -> tuple[np.ndarray, np.ndarray]:
    """Legendre transform sup_lam(lam*x - F) at many (theta, x) nodes.

    Returns (rate values, maximizing lambdas); nodes whose x falls outside
    the closure of the range of dF/dlambda get +inf.  The maximizer is
    found by bisection on the increasing derivative dF/dlambda.
    """
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    g_lo, g_hi = _g_value_range(spec)
    out = np.full(thetas.shape, math.inf)
    lam_star = np.zeros(thetas.shape)
    caps = spec.certified_lambda_caps(thetas)
    interior = (xs > g_lo + 1e-12) & (xs < g_hi - 1e-12)
    boundary = ~interior & (np.isclose(xs, g_lo) | np.isclose(xs, g_hi))
    if np.any(boundary):
        # sup approached along lambda -> +-inf: evaluate at the certified
        # cap (a tight lower bound; the tilt there concentrates the law)
        cap = np.where(np.isclose(xs[boundary], g_hi), 1.0, -1.0) * caps[boundary]
        vals = cap * xs[boundary] - _free_energy_nodes(thetas[boundary], cap, spec)
        out[boundary] = vals
        lam_star[boundary] = cap
    if not np.any(interior):
        return out, lam_star

    th = thetas[interior]
    x = xs[interior]
    cap = caps[interior]
    # margin keeps the derivative stencil of the expansion loop certified
    step_margin = 1e-6 * (1.0 + cap)
    lo = np.maximum(np.full(th.shape, spec.lambda_domain[0]), -cap + step_margin)
    hi = np.minimum(np.full(th.shape, spec.lambda_domain[1]), cap - step_margin)
    for bound_arr, expand in ((lo, -1.0), (hi, 1.0)):
        for _ in range(60):
            deriv = _free_energy_lambda_deriv_nodes(th, bound_arr, spec)
            bad = (deriv > x) if expand < 0 else (deriv < x)
            bad &= np.abs(bound_arr) < cap - step_margin
            if not np.any(bad):
                break
            bound_arr[bad] = np.clip(
                2.0 * bound_arr[bad] + expand,
                (-cap + step_margin)[bad],
                (cap - step_margin)[bad],
            )
    for _ in range(_BISECTION_STEPS):
        mid = (lo + hi) / 2.0
        deriv = _free_energy_lambda_deriv_nodes(th, mid, spec)
        below = deriv < x
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    mid = (lo + hi) / 2.0
    out[interior] = mid * x - _free_energy_nodes(th, mid, spec)
    lam_star[interior] = mid
    return out, lam_star


def rate_function(theta: float, x: float, spec: FreeEnergySpec) -> float:
    """Level-1 rate sup_lambda (lambda * x - F(theta, lambda)).

    Returns +inf when x lies outside the closure of the range of
    dF/dlambda (equivalently outside the value range of g).
    """
    vals, _ = _rate_nodes(np.array([theta]), np.array([x]), spec)
    return float(vals[0])


def path_rate(u: MonotoneProfile, delta_min: float | None = None) -> float:
    """Log-slope rate of a monotone profile:
    -(1/M) * sum_j log(M * (u_{j+1} - u_j) / width).

    Exactly zero for the linear profile from theta_left; +inf when any
    increment falls below delta_min (default 1e-8 * width), in particular
    for any non-strictly-increasing discretization.
    """
    width = u.bounds.width
    if delta_min is None:
        delta_min = _default_delta_min(u.bounds)
    incs = np.diff(u.values)
    if np.any(incs < 0):
        raise ValueError("profile increments must be non-negative")
    # rounding slack so solver output sitting exactly at delta_min passes
    if np.any(incs < delta_min * (1.0 - 1e-9)):
        return math.inf
    m = u.m_cells
    return float(-np.sum(np.log(m * incs / width)) / m)


def inhom_free_energy(
    u: MonotoneProfile,
    phi: TestFunction,
    spec: FreeEnergySpec,
    quad: QuadratureSpec,
) -> float:
    """Integral of x -> F(u(x), phi(x); g) with u piecewise linear.

    phi supplies the pointwise tilt strength."""

    def evaluate(panels: int) -> float:
        x, w = _composite_nodes(panels, quad.nodes_per_panel)
        return float(w @ _free_energy_nodes(u.interpolate(x), phi(x), spec))

    return _refine(evaluate, quad, "inhomogeneous free energy")


def _project_capped_simplex(v: np.ndarray, total: float) -> np.ndarray:
    """Euclidean projection onto {x >= 0, sum x = total}."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - total
    idx = np.arange(1, v.size + 1)
    pos = u - css / idx > 0
    rho = idx[pos][-1]
    tau = css[rho - 1] / rho
    return np.maximum(v - tau, 0.0)


@dataclass(frozen=True)
class _ProfileParam:
    """Increment parametrization u_0 = theta_left + e[0],
    d_j = delta_min + e[1+j], with e >= 0 and sum(e) = budget."""

    bounds: BoundaryParams
    m_cells: int
    delta_min: float

    @property
    def budget(self) -> float:
        return self.bounds.width - self.m_cells * self.delta_min

    def to_values(self, e: np.ndarray) -> np.ndarray:
        u0 = self.bounds.theta_left + e[0]
        incs = self.delta_min + e[1:]
        vals = np.concatenate(([u0], u0 + np.cumsum(incs)))
        vals[-1] = self.bounds.theta_right
        return vals

    def linear_start(self) -> np.ndarray:
        e = np.full(self.m_cells + 1, self.budget / self.m_cells)
        e[0] = 0.0
        return e

    def random_starts(self, count: int, seed: int) -> list[np.ndarray]:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
        starts = []
        for _ in range(count):
            raw = rng.exponential(size=self.m_cells + 1)
            raw[0] *= rng.random()  # keep the left endpoint low on average
            starts.append(raw / raw.sum() * self.budget)
        return starts


def _cell_nodes(m_cells: int, nodes: int = 2) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gauss nodes per profile cell: (x, weights, in-cell coordinates)."""
    xg, wg = leggauss(nodes)
    tau = (xg + 1.0) / 2.0
    cells = np.arange(m_cells)[:, None]
    x = ((cells + tau[None, :]) / m_cells).ravel()
    w = np.tile(wg / (2.0 * m_cells), m_cells)
    return x, w, np.tile(tau, m_cells)


def _grid_gradient_from_nodes(
    node_grad: np.ndarray, tau: np.ndarray, m_cells: int, nodes: int
) -> np.ndarray:
    """Chain node-wise dObjective/du(x) through the hat basis to du_j."""
    per_cell = node_grad.reshape(m_cells, nodes)
    tau_c = tau.reshape(m_cells, nodes)
    grad = np.zeros(m_cells + 1)
    np.add.at(grad, np.arange(m_cells), np.sum(per_cell * (1.0 - tau_c), axis=1))
    np.add.at(grad, np.arange(1, m_cells + 1), np.sum(per_cell * tau_c, axis=1))
    return grad


def _pgd(
    objective: Callable[[np.ndarray], tuple[float, np.ndarray]],
    start: np.ndarray,
    param: _ProfileParam,
    solver: SolverConfig,
    maximize: bool,
) -> tuple[float, np.ndarray, bool]:
    """Projected gradient with backtracking; returns (value, e, progressed)."""
    sign = 1.0 if maximize else -1.0
    e = _project_capped_simplex(start, param.budget)
    value, grad = objective(e)
    step = solver.step_size
    progressed = False
    scale = max(param.budget, 1e-12)
    for _ in range(solver.max_iterations):
        moved = False
        while step > 1e-16 * scale:
            cand = _project_capped_simplex(e + sign * step * grad, param.budget)
            if not np.any(cand != e):
                break
            cand_value, cand_grad = objective(cand)
            improvement = sign * (cand_value - value)
            if improvement > 0.0:
                shift = float(np.max(np.abs(cand - e)))
                e, value, grad = cand, cand_value, cand_grad
                moved = True
                progressed = True
                step /= solver.shrink_factor
                # converged: the step or the gain has hit numerical noise
                if shift < solver.tolerance * scale or improvement <= 1e-13 * max(
                    1.0, abs(value)
                ):
                    return value, e, progressed
                break
            step *= solver.shrink_factor
        if not moved:
            return value, e, progressed
    return value, e, progressed


@dataclass(frozen=True)
class AnnealedResult:
    value: float
    argmax: MonotoneProfile
    start_values: tuple[float, ...]


@dataclass(frozen=True)
class ProfileRateResult:
    value: float
    argmin: MonotoneProfile
    start_values: tuple[float, ...]


def _theta_step(thetas: np.ndarray) -> np.ndarray:
    return 1e-6 * (1.0 + np.abs(thetas))


def annealed_free_energy(
    phi: TestFunction,
    spec: FreeEnergySpec,
    bounds: BoundaryParams,
    solver: SolverConfig,
    cell_nodes: int = 2,
) -> AnnealedResult:
    """sup over monotone profiles of [integral of F(u(x), phi(x)) - J(u)].

    Projected-gradient ascent in the increment parametrization with a
    linear-profile start plus random multistarts; gradients of the free
    energy use central finite differences in theta, the path-rate
    gradient is analytic.  The reported value is never below the
    linear-profile benchmark.
    """
    if bounds.width <= 0.0:
        raise ValueError("the annealed problem requires theta_left < theta_right")
    param = _ProfileParam(bounds, solver.grid_size, _default_delta_min(bounds))
    x, w, tau = _cell_nodes(param.m_cells, cell_nodes)
    phix = phi(x)

    def objective(e: np.ndarray) -> tuple[float, np.ndarray]:
        vals = param.to_values(e)
        thetas = np.interp(x, np.arange(param.m_cells + 1) / param.m_cells, vals)
        f_nodes = _free_energy_nodes(thetas, phix, spec)
        delta = _theta_step(thetas)
        f_theta = (
            _free_energy_nodes(thetas + delta, phix, spec)
            - _free_energy_nodes(thetas - delta, phix, spec)
        ) / (2.0 * delta)
        grad_u = _grid_gradient_from_nodes(w * f_theta, tau, param.m_cells, cell_nodes)
        incs = np.diff(vals)
        j_val = float(-np.sum(np.log(param.m_cells * incs / bounds.width)) / param.m_cells)
        dj_dinc = -1.0 / (param.m_cells * incs)
        # map d/du_j to the (e_u, e_increments) coordinates
        suffix = np.cumsum(grad_u[::-1])[::-1]
        grad_e = np.empty(param.m_cells + 1)
        grad_e[0] = suffix[0]
        grad_e[1:] = suffix[1:] - dj_dinc
        return float(w @ f_nodes) - j_val, grad_e

    starts = [param.linear_start()] + param.random_starts(
        max(solver.multistart - 1, 0), solver.seed
    )
    results = []
    any_progress = False
    for s in starts:
        val, e, progressed = _pgd(objective, s, param, solver, maximize=True)
        any_progress = any_progress or progressed
        results.append((val, e))
    benchmark_value = objective(param.linear_start())[0]
    best_value, best_e = max(results, key=lambda r: r[0])
    if not any_progress and best_value < benchmark_value - 1e-12:
        raise OptimizationError(
            f"no solver start progressed; start values {[r[0] for r in results]}"
        )
    if best_value < benchmark_value:
        best_value, best_e = benchmark_value, param.linear_start()
    return AnnealedResult(
        value=best_value,
        argmax=MonotoneProfile(values=param.to_values(best_e), bounds=bounds),
        start_values=tuple(r[0] for r in results),
    )


def profile_rate(
    mu_density: TestFunction,
    spec: FreeEnergySpec,
    bounds: BoundaryParams,
    solver: SolverConfig,
    cell_nodes: int = 2,
) -> ProfileRateResult:
    """inf over monotone profiles of [integral of I(u(x), mu(x)) + J(u)].

    The gradient of the rate integral uses the envelope identity
    dI/dtheta = -dF/dtheta evaluated at the maximizing lambda.
    """
    if bounds.width <= 0.0:
        raise ValueError("the profile-rate problem requires theta_left < theta_right")
    param = _ProfileParam(bounds, solver.grid_size, _default_delta_min(bounds))
    x, w, tau = _cell_nodes(param.m_cells, cell_nodes)
    mux = np.asarray(mu_density(x), dtype=float)

    def objective(e: np.ndarray) -> tuple[float, np.ndarray]:
        vals = param.to_values(e)
        thetas = np.interp(x, np.arange(param.m_cells + 1) / param.m_cells, vals)
        rates, lam_star = _rate_nodes(thetas, mux, spec)
        if not np.all(np.isfinite(rates)):
            # infeasible target at some node: push the start away via inf
            return math.inf, np.zeros(param.m_cells + 1)
        delta = _theta_step(thetas)
        f_theta = (
            _free_energy_nodes(thetas + delta, lam_star, spec)
            - _free_energy_nodes(thetas - delta, lam_star, spec)
        ) / (2.0 * delta)
        grad_u = _grid_gradient_from_nodes(-w * f_theta, tau, param.m_cells, cell_nodes)
        incs = np.diff(vals)
        j_val = float(-np.sum(np.log(param.m_cells * incs / bounds.width)) / param.m_cells)
        dj_dinc = -1.0 / (param.m_cells * incs)
        suffix = np.cumsum(grad_u[::-1])[::-1]
        grad_e = np.empty(param.m_cells + 1)
        grad_e[0] = suffix[0]
        grad_e[1:] = suffix[1:] + dj_dinc
        return float(w @ rates) + j_val, grad_e

    starts = [param.linear_start()] + param.random_starts(
        max(solver.multistart - 1, 0), solver.seed
    )
    results = []
    for s in starts:
        val, e, _ = _pgd(objective, s, param, solver, maximize=False)
        results.append((val, e))
    finite = [r for r in results if math.isfinite(r[0])]
    if not finite:
        raise OptimizationError("every solver start hit an infeasible target density")
    best_value, best_e = min(finite, key=lambda r: r[0])
    return ProfileRateResult(
        value=best_value,
        argmin=MonotoneProfile(values=param.to_values(best_e), bounds=bounds),
        start_values=tuple(r[0] for r in results),
    )
