import math

import numpy as np
import pytest

from geomix.asymptotics import QuadratureSpec
from geomix.core import (
    BoundaryParams,
    LocalFunction,
    RandomSeed,
    indicator_vacuum_function,
)
from geomix.fields import TestFunction
from geomix.harness import annealed_mc_estimate, homogeneous_mc_free_energy
from geomix.ldp import (
    AnnealedResult,
    FreeEnergySpec,
    MonotoneProfile,
    SolverConfig,
    annealed_free_energy,
    free_energy_finite_chain,
    free_energy_site,
    free_energy_transfer,
    inhom_free_energy,
    path_rate,
    profile_rate,
    rate_function,
    _rate_nodes,
)


def make_pair_vacuum():
    def evaluator(a, b):
        return ((np.asarray(a) == 0) & (np.asarray(b) == 0)).astype(float)

    return LocalFunction(k=2, evaluator=evaluator, bounded=True, bound=1.0, name="pair-vacuum")


def const_phi(value, name="const"):
    return TestFunction(lambda x, v=value: np.full_like(x, v), name=name)


@pytest.fixture
def ind_spec():
    return FreeEnergySpec(g=indicator_vacuum_function())


def test_site_free_energy_closed_form(ind_spec):
    g = indicator_vacuum_function()
    for theta, lam in ((0.5, 0.3), (1.0, 0.7), (2.0, -1.1)):
        expected = math.log((math.exp(lam) + theta) / (1 + theta))
        assert free_energy_site(theta, lam, g) == pytest.approx(expected, abs=1e-12)


def test_site_free_energy_vanishes_at_zero_tilt(ind_spec):
    for theta in (0.0, 0.5, 2.0):
        assert abs(free_energy_site(theta, 0.0, indicator_vacuum_function())) < 1e-8


def test_site_free_energy_of_constant_is_linear():
    g = LocalFunction(
        k=1,
        evaluator=lambda n: np.full_like(np.asarray(n, dtype=float), 0.7),
        bounded=True,
        bound=0.7,
        name="const",
    )
    for lam in (-2.0, 0.4, 3.0):
        assert free_energy_site(1.2, lam, g) == pytest.approx(0.7 * lam, abs=1e-10)


def test_free_energy_requires_bounded_g():
    from geomix.core import density_function

    with pytest.raises(ValueError):
        FreeEnergySpec(g=density_function())


def test_transfer_stochastic_kernel_at_zero_tilt(ind_spec):
    assert abs(free_energy_transfer(1.0, 0.0, ind_spec)) < 1e-10
    spec2 = FreeEnergySpec(g=make_pair_vacuum())
    assert abs(free_energy_transfer(1.3, 0.0, spec2)) < 1e-10


def test_transfer_reduces_to_site_form(ind_spec):
    g = indicator_vacuum_function()
    for theta, lam in ((0.7, 0.5), (1.0, -0.8), (1.9, 1.2)):
        assert abs(
            free_energy_transfer(theta, lam, ind_spec) - free_energy_site(theta, lam, g)
        ) < 1e-8


def test_transfer_against_direct_simulation():
    # the finite-chain kernel value sits inside the Monte Carlo band;
    # the power-iteration limit differs from it by O(1/N)
    g = make_pair_vacuum()
    spec = FreeEnergySpec(g=g)
    theta, lam, n = 1.0, 0.3, 200
    limit = free_energy_transfer(theta, lam, spec)
    finite = free_energy_finite_chain(theta, lam, spec, n)
    est, se = homogeneous_mc_free_energy(g, lam, theta, n, 20000, RandomSeed(11, 5))
    assert abs(est - finite) <= 4 * se
    assert abs(limit - finite) <= 5.0 / n


def test_lambda_convexity(ind_spec):
    lams = np.linspace(-3.0, 3.0, 41)
    for theta in (0.4, 1.0, 2.0):
        vals = np.array(
            [free_energy_site(theta, l, indicator_vacuum_function()) for l in lams]
        )
        second = vals[2:] - 2 * vals[1:-1] + vals[:-2]
        assert second.min() >= -1e-9


def test_rate_vanishes_at_the_mean(ind_spec):
    for theta in (0.5, 1.0, 2.0):
        mean = 1 / (1 + theta)
        assert abs(rate_function(theta, mean, ind_spec)) < 1e-8


def test_rate_nonnegative(ind_spec):
    for x in np.linspace(0.05, 0.95, 10):
        assert rate_function(1.0, float(x), ind_spec) >= -1e-12


def test_rate_bernoulli_closed_form(ind_spec):
    # sup_lam(3 lam / 4 - log((e^lam + 1)/2)) is the Bernoulli(1/2)
    # relative entropy of 3/4
    expected = 0.75 * math.log(1.5) + 0.25 * math.log(0.5)
    assert rate_function(1.0, 0.75, ind_spec) == pytest.approx(expected, abs=1e-8)


def test_rate_outside_range_is_infinite(ind_spec):
    assert rate_function(1.0, 1.5, ind_spec) == math.inf
    assert rate_function(1.0, -0.2, ind_spec) == math.inf


def test_rate_at_range_edge_is_log_inverse_mass(ind_spec):
    # x = 1 forces every site empty: rate -log nu_theta(0) = log(1+theta)
    assert rate_function(1.0, 1.0, ind_spec) == pytest.approx(math.log(2.0), abs=1e-6)


def test_legendre_consistency(ind_spec):
    # I(theta, F'(lambda)) + F(lambda) = lambda F'(lambda)
    g = indicator_vacuum_function()
    theta = 1.2
    for lam in (-1.5, -0.4, 0.3, 1.1, 2.0):
        h = 1e-6
        deriv = (
            free_energy_site(theta, lam + h, g) - free_energy_site(theta, lam - h, g)
        ) / (2 * h)
        lhs = rate_function(theta, deriv, ind_spec) + free_energy_site(theta, lam, g)
        assert lhs == pytest.approx(lam * deriv, abs=1e-6)


def test_path_rate_linear_is_exactly_zero(bounds):
    assert path_rate(MonotoneProfile.linear(bounds, 256)) == 0.0


def test_path_rate_quadratic_profile(bounds):
    m = 10**4
    t = np.arange(m + 1) / m
    prof = MonotoneProfile(values=bounds.theta_left + bounds.width * t**2, bounds=bounds)
    assert path_rate(prof) == pytest.approx(1 - math.log(2), abs=1e-3)


def test_path_rate_nonnegative_from_left_reservoir(bounds):
    # when the path starts at theta_left the mean slope equals the full
    # width, so the log-slope average is <= 0 and J >= 0
    rng = np.random.default_rng(13)
    for _ in range(25):
        incs = rng.exponential(size=50)
        incs = incs / incs.sum() * bounds.width
        vals = np.concatenate(([bounds.theta_left], bounds.theta_left + np.cumsum(incs)))
        vals[-1] = bounds.theta_right
        assert path_rate(MonotoneProfile(values=vals, bounds=bounds)) >= -1e-12


def test_path_rate_flat_step_is_infinite(bounds):
    vals = np.concatenate(([0.0, 0.0], np.linspace(0.0, 2.0, 9)[1:]))
    assert path_rate(MonotoneProfile(values=vals, bounds=bounds)) == math.inf


def test_monotone_profile_validation(bounds):
    with pytest.raises(ValueError):
        MonotoneProfile(values=np.array([0.0, 1.5, 1.0, 2.0]), bounds=bounds)
    with pytest.raises(ValueError):
        MonotoneProfile(values=np.array([0.0, 1.0]), bounds=BoundaryParams(1.0, 1.0))
    with pytest.raises(ValueError):
        MonotoneProfile(values=np.array([0.0, 1.0, 1.9]), bounds=bounds)


def test_inhom_free_energy_zero_weight(bounds, ind_spec):
    quad = QuadratureSpec.for_bounds(bounds)
    prof = MonotoneProfile.linear(bounds, 128)
    assert abs(inhom_free_energy(prof, const_phi(0.0), ind_spec, quad)) < 1e-10


def test_inhom_free_energy_constant_profile_reduction(ind_spec):
    b = BoundaryParams(0.5, 1.5)
    quad = QuadratureSpec.for_bounds(b)
    # constant-value profile built directly on the grid (endpoint pinned)
    vals = np.full(129, b.theta_right)
    prof = MonotoneProfile(values=vals, bounds=b)
    lam = 0.4
    assert inhom_free_energy(prof, const_phi(lam), ind_spec, quad) == pytest.approx(
        free_energy_site(b.theta_right, lam, indicator_vacuum_function()), abs=1e-9
    )


def test_inhom_free_energy_linear_profile_closed_form(bounds, ind_spec):
    lam = 0.6
    quad = QuadratureSpec.for_bounds(bounds)
    prof = MonotoneProfile.linear(bounds, 2048)
    # high-resolution quadrature of the two-term closed-form integrand
    x, w = np.polynomial.legendre.leggauss(200)
    x = (x + 1) / 2
    w = w / 2
    rho = bounds.density(x)
    oracle = float(np.sum(w * np.log((math.exp(lam) + rho) / (1 + rho))))
    assert inhom_free_energy(prof, const_phi(lam), ind_spec, quad) == pytest.approx(
        oracle, abs=1e-6
    )


def test_annealed_zero_weight_returns_linear(bounds, ind_spec):
    solver = SolverConfig(multistart=2, seed=3, grid_size=256, max_iterations=500)
    res = annealed_free_energy(const_phi(0.0), ind_spec, bounds, solver)
    assert isinstance(res, AnnealedResult)
    assert abs(res.value) < 1e-12
    assert np.allclose(res.argmax.values, MonotoneProfile.linear(bounds, 256).values, atol=1e-7)


def test_annealed_never_below_linear_benchmark(bounds, ind_spec):
    solver = SolverConfig(multistart=3, seed=5, grid_size=100, max_iterations=800)
    phi = TestFunction(lambda x: 0.3 * x, name="ramp")
    res = annealed_free_energy(phi, ind_spec, bounds, solver)
    quad = QuadratureSpec.for_bounds(bounds)
    linear = MonotoneProfile.linear(bounds, 100)
    benchmark = inhom_free_energy(linear, phi, ind_spec, quad) - path_rate(linear)
    assert res.value >= benchmark - 1e-8
    assert res.value >= max(res.start_values) - 1e-12


def test_annealed_small_tilt_matches_oracles(bounds, ind_spec):
    # quantile reparametrization collapses the variational problem in the
    # single-site case: sup = log( (1/w) integral of exp(F(theta)) dtheta ),
    # and the finite-chain expectation is exactly N-independent, so the
    # Monte Carlo estimate is unbiased for the limit
    lam = 0.2
    solver = SolverConfig(multistart=3, seed=9, max_iterations=3000)
    res = annealed_free_energy(const_phi(lam), ind_spec, bounds, solver)
    closed = math.log(
        (bounds.width + (math.exp(lam) - 1) * math.log((1 + bounds.theta_right) / (1 + bounds.theta_left)))
        / bounds.width
    )
    assert res.value == pytest.approx(closed, abs=5e-7)
    est, se = annealed_mc_estimate(
        indicator_vacuum_function(), lam, 200, bounds, 10**5, RandomSeed(21, 0)
    )
    assert abs(res.value - est) <= 5 * se


def test_annealed_rejects_equilibrium():
    with pytest.raises(ValueError):
        annealed_free_energy(
            const_phi(0.1),
            FreeEnergySpec(g=indicator_vacuum_function()),
            BoundaryParams(1.0, 1.0),
            SolverConfig(),
        )


def test_profile_rate_vanishes_at_lln_profile(bounds, ind_spec):
    quad = QuadratureSpec.for_bounds(bounds)

    def mu(x):
        return 1.0 / (1.0 + bounds.density(x))

    solver = SolverConfig(multistart=2, seed=4, max_iterations=200)
    res = profile_rate(TestFunction(mu, name="lln"), ind_spec, bounds, solver)
    assert 0.0 <= res.value <= 1e-4
    assert np.max(np.abs(res.argmin.values - MonotoneProfile.linear(bounds, solver.grid_size).values)) < 0.05


def test_profile_rate_perturbed_target_strictly_positive():
    # keep the shifted target inside the value range of g
    b = BoundaryParams(1.0, 3.0)
    spec = FreeEnergySpec(g=indicator_vacuum_function())
    solver = SolverConfig(multistart=2, seed=8, grid_size=60, max_iterations=400)

    def mu(x):
        return 1.0 / (1.0 + b.density(x)) + 0.1

    mu_tf = TestFunction(mu, name="shifted")
    res = profile_rate(mu_tf, spec, b, solver)
    assert res.value > 1e-3

    # weak oracle: dense grid over the two-parameter power-profile family
    m = solver.grid_size
    from geomix.ldp import _cell_nodes

    x, w, _ = _cell_nodes(m, 2)
    mux = mu_tf(x)
    grid_best = math.inf
    for u0 in np.linspace(b.theta_left, b.theta_right - 0.05, 10):
        for a in np.exp(np.linspace(-0.8, 0.8, 9)):
            t = np.arange(m + 1) / m
            vals = u0 + (b.theta_right - u0) * t**a
            prof = MonotoneProfile(values=vals, bounds=b)
            thetas = np.interp(x, t, vals)
            rates, _ = _rate_nodes(thetas, mux, spec)
            obj = float(w @ rates) + path_rate(prof)
            grid_best = min(grid_best, obj)
    assert res.value <= grid_best + 1e-6


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(shrink_factor=1.5)
    with pytest.raises(ValueError):
        SolverConfig(grid_size=1)
