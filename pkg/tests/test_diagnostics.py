import json

import numpy as np
import pytest

from oracles import discounted_integral, golden_ratio_root, random_softabs_config
from wassval.classical import closed_form_linear, closed_form_power, grad_u_fd, value_function
from wassval.diagnostics import (
    Check,
    DiagnosticsReport,
    TestField,
    bounds_check,
    dpp_residual,
    euler_poisson_residual,
    gradient_conjecture_check,
    hje_residual_measure,
    modulus_check,
    observed_order,
    random_fields,
    subdifferential_check,
    terminal_limit_check,
)
from wassval.measure_control import ValueSolver, pushforward_path, solve_direct, solve_simple_potential
from wassval.measures import dirac, make_particle_measure
from wassval.paths import MeasurePath
from wassval.potentials import (
    GrowthCertificate,
    ProblemSpec,
    linear_potential,
    lorentzian_potential,
    potential_from_config,
    power_potential,
    simple_potential_lift,
    squared_mean_potential,
    young_certificate,
    zero_potential,
)

SPEC = ProblemSpec(p=2.0, delta=1.0, horizon=40.0, steps=400)
SPEC_POW = ProblemSpec(p=2.0, delta=1.0, horizon=20.0, steps=400)
W_LIN = np.array([1.0, 0.0])
V_LIN = linear_potential(W_LIN, 0.0, delta=1.0, p=2.0)
A = golden_ratio_root()


@pytest.fixture(scope="module")
def lin_report():
    return solve_simple_potential(dirac([0.0, 0.0]), V_LIN, SPEC)


@pytest.fixture(scope="module")
def pow_report():
    mu = make_particle_measure([[1.0], [-1.0]])
    return solve_simple_potential(mu, power_potential(2.0, 1, delta=1.0), SPEC_POW)


# -- test fields ---------------------------------------------------------------------


def test_field_jacobian_matches_finite_differences():
    f = TestField([0.1, 0.2], 1.3, [0.6, -0.8])
    x = np.array([0.4, -0.3])
    h = 1e-6
    fd = np.stack([(f.eta(x + h * e) - f.eta(x - h * e)) / (2 * h) for e in np.eye(2)], axis=-1)
    np.testing.assert_allclose(f.eta_jacobian(x), fd, atol=1e-8)


def test_field_support_and_profile():
    f = TestField([0.0], 1.0, [1.0], time_center=5.0, time_radius=1.0)
    assert f(np.array([[2.0]]), 5.0)[0, 0] == 0.0
    assert f(np.array([[0.0]]), 7.0)[0, 0] == 0.0
    assert f(np.array([[0.0]]), 5.0)[0, 0] == 1.0
    h = 1e-6
    assert f.profile_dt(5.3) == pytest.approx((f.profile(5.3 + h) - f.profile(5.3 - h)) / (2 * h), abs=1e-7)


def test_random_fields_reproducible():
    a = random_fields(3, 2, 10.0, seed=4)
    b = random_fields(3, 2, 10.0, seed=4)
    assert all(np.array_equal(x.center, y.center) and x.time_center == y.time_center for x, y in zip(a, b))
    assert all(0 < f.time_center - f.time_radius and f.time_center + f.time_radius < 10.0 for f in a)


@pytest.mark.parametrize("kw", [{"radius": 0.0}, {"direction": [1.0]}, {"time_center": 1.0}])
def test_field_validation(kw):
    args = {"center": [0.0, 0.0], "radius": 1.0, "direction": [1.0, 0.0], **kw}
    with pytest.raises(ValueError):
        TestField(**args)


# -- dynamic programming ---------------------------------------------------------------


@pytest.mark.parametrize("T", [0.5, 1.0, 2.0])
def test_dpp_linear_example(lin_report, T):
    out = dpp_residual(dirac([0.0, 0.0]), lin_report.path, T, ValueSolver(V_LIN), SPEC)
    assert abs(out["residual"]) <= 2e-3
    # the split identity in closed form
    head = discounted_integral(lambda t: 0.5 - t, 1.0, T)
    assert head + np.exp(-T) * (-(0.5 + T)) == pytest.approx(-0.5, abs=1e-12)
    assert out["head"] == pytest.approx(head, abs=1e-4)


@pytest.mark.parametrize("T", [0.5, 1.0, 2.0])
def test_dpp_power_example(pow_report, T):
    solver = ValueSolver(power_potential(2.0, 1, delta=1.0))
    out = dpp_residual(pow_report.path.measure_at(0), pow_report.path, T, solver, SPEC_POW)
    assert abs(out["residual"]) <= 1e-3 * (1 + abs(out["value"]))
    assert out["residual"] >= -2 * SPEC_POW.gtol


def test_dpp_constant_path_zero_potential():
    mu = make_particle_measure([[0.0], [1.0]])
    rep = solve_simple_potential(mu, zero_potential(1), SPEC)
    out = dpp_residual(mu, rep.path, 1.0, ValueSolver(zero_potential(1)), SPEC)
    assert out["residual"] == 0.0


def test_dpp_rejects_split_outside_horizon(lin_report):
    with pytest.raises(ValueError):
        dpp_residual(dirac([0.0, 0.0]), lin_report.path, 50.0, ValueSolver(V_LIN), SPEC)


# -- Euler-Poisson -----------------------------------------------------------------------


def test_euler_poisson_linear_pushforward():
    _, Psi = closed_form_linear(W_LIN, 0.0, 1.0, 2.0)
    mu = make_particle_measure([[0.0, 0.0], [0.5, -0.5]])
    path = pushforward_path(mu, Psi, SPEC.grid())
    fields = random_fields(5, 2, 10.0, seed=1, box=1.0)
    assert euler_poisson_residual(path, V_LIN, fields, SPEC)["max"] < 1e-3


def test_euler_poisson_power_path_converges_at_second_order():
    _, _, Psi = closed_form_power(2.0, 1.0)
    mu = make_particle_measure([[1.0], [-1.0]])
    V = power_potential(2.0, 1)
    fields = random_fields(3, 1, 20.0, seed=2, box=0.8)
    res = []
    for M in (100, 200, 400):
        spec = SPEC_POW.with_(steps=M)
        res.append(euler_poisson_residual(pushforward_path(mu, Psi, spec.grid()), V, fields, spec)["max"])
    assert res[-1] <= 1e-2
    assert np.all(observed_order(res, [100, 200, 400]) >= 1.8)


def test_euler_poisson_vanishes_on_solver_output(pow_report):
    fields = random_fields(5, 1, 20.0, seed=3, box=0.8)
    out = euler_poisson_residual(pow_report.path, power_potential(2.0, 1), fields, SPEC_POW)
    assert out["max"] < 1e-10
    assert "exact" in out["continuity"]


def test_euler_poisson_non_simple_solver_output():
    pot = squared_mean_potential(lorentzian_potential([0.0, 0.0]), 1.0)
    mu = make_particle_measure([[0.3, 0.1], [-0.5, 0.4]])
    spec = ProblemSpec(horizon=30.0, steps=300)
    rep = solve_direct(mu, pot, spec)
    out = euler_poisson_residual(rep.path, pot, random_fields(4, 2, 10.0, seed=5, box=0.7), spec)
    assert out["max"] < 1e-8


def test_observed_order():
    np.testing.assert_allclose(observed_order([4.0, 1.0, 0.25], [10, 20, 40]), [2.0, 2.0])


# -- terminal limit -----------------------------------------------------------------------


def test_terminal_limit_constant_path():
    mu = make_particle_measure([[0.0], [1.0]])
    rep = solve_simple_potential(mu, zero_potential(1), SPEC)
    out = terminal_limit_check(rep.path, TestField([0.0], 2.0, [1.0]), SPEC)
    assert out["pass"] and np.all(out["values"] == 0.0)


def test_terminal_limit_escaping_particle(lin_report):
    out = terminal_limit_check(lin_report.path, TestField([0.0, 0.0], 3.0, [1.0, 0.0]), SPEC)
    assert out["pass"]
    assert out["values"][-1] == 0.0  # the particle has left the support


def test_terminal_limit_contracting_path(pow_report):
    out = terminal_limit_check(pow_report.path, TestField([0.0], 2.0, [1.0]), SPEC_POW)
    assert out["pass"]
    # |s(t)| <= C e^{-delta t} with moderate C
    assert out["C"] < 1.0


# -- superdifferential -----------------------------------------------------------------------


def test_subdifferential_zero_field(lin_report):
    eta = TestField([0.0, 0.0], 1.0, [0.0, 0.0])
    out = subdifferential_check(lin_report.path, 1.0, eta, ValueSolver(V_LIN), SPEC)
    assert out["rhs"] == 0.0 and np.all(out["quotients"] == 0.0) and out["pass"]


def test_subdifferential_linear_example(lin_report):
    # the bump is centred on the particle at t = 1, so eta = e_1 there and rhs = -w.e_1 = -1
    eta = TestField([1.0, 0.0], 1.0, [1.0, 0.0])
    out = subdifferential_check(lin_report.path, 1.0, eta, ValueSolver(V_LIN), SPEC)
    assert out["rhs"] == pytest.approx(-1.0, abs=1e-9)
    assert out["pass"]
    assert out["equality_gap"] < 1e-3


def test_subdifferential_equality_for_simple_potential():
    rng = np.random.default_rng(8)
    V = potential_from_config(random_softabs_config(rng, 2), 2)
    mu = make_particle_measure([[0.2, 0.1], [-0.4, 0.3]])
    spec = ProblemSpec(horizon=30.0, steps=300)
    rep = solve_simple_potential(mu, V, spec)
    eta = TestField([0.0, 0.0], 2.0, [0.6, 0.8])
    out = subdifferential_check(rep.path, 1.0, eta, ValueSolver(V), spec)
    assert out["pass"]
    assert out["equality_gap"] <= 1e-2 * (1 + abs(out["rhs"]))


# -- gradient condition and HJE ------------------------------------------------------------


def test_gradient_conjecture_linear_example(lin_report):
    out = gradient_conjecture_check(lin_report.path, lambda x: -W_LIN, SPEC)
    assert out["max"] < 1e-3


def test_gradient_conjecture_zero_potential():
    mu = make_particle_measure([[0.0], [1.0]])
    rep = solve_simple_potential(mu, zero_potential(1), SPEC)
    assert gradient_conjecture_check(rep.path, lambda x: np.zeros(1), SPEC)["max"] == 0.0


def test_gradient_conjecture_random_fd():
    rng = np.random.default_rng(12)
    V = potential_from_config(random_softabs_config(rng, 2), 2)
    mu = make_particle_measure(rng.uniform(-1, 1, (4, 2)))
    spec = ProblemSpec(horizon=30.0, steps=300)
    rep = solve_simple_potential(mu, V, spec)
    u = value_function(V, spec)
    out = gradient_conjecture_check(rep.path, lambda x: grad_u_fd(x, u), spec, stride=60)
    assert out["max"] <= 1e-2


def test_hje_measure_closed_forms():
    assert hje_residual_measure(dirac([0.0, 0.0]), -0.5, [[-1.0, 0.0]], V_LIN, SPEC) == 0.0
    mu = make_particle_measure([[1.0], [-1.0]])
    grads = [[A], [-A]]
    assert hje_residual_measure(mu, A / 2, grads, power_potential(2.0, 1), SPEC) == pytest.approx(0.0, abs=1e-15)
    assert hje_residual_measure(mu, 0.0, np.zeros((2, 1)), zero_potential(1), SPEC) == 0.0


# -- bounds and modulus -----------------------------------------------------------------------


def test_bounds_zero_potential():
    mu = make_particle_measure([[0.0], [2.0]])
    out = bounds_check(0.0, mu, zero_potential(1), SPEC, GrowthCertificate(0.0, 0.0))
    assert (out["lower"], out["value"], out["upper"]) == (0.0, 0.0, 0.0) and out["pass"]


def test_bounds_linear_example(lin_report):
    cert = young_certificate(W_LIN, 0.0, 2.0, alpha=1 / 64)
    out = bounds_check(lin_report.value, dirac([0.0, 0.0]), V_LIN, SPEC, cert)
    assert out["pass"]
    assert out["upper"] == 0.0 and out["lower"] == pytest.approx(-16.0)


def test_bounds_need_certificate():
    with pytest.raises(ValueError, match="certificate"):
        bounds_check(0.0, dirac([0.0]), zero_potential(1), SPEC)


def test_modulus_identical_measures():
    mu = dirac([0.0, 0.0])
    out = modulus_check(mu, mu, ValueSolver(V_LIN), 1.0, SPEC)
    assert out["gap"] == 0.0 and out["bound"] == 0.0 and out["pass"]


def test_modulus_linear_example_is_tight():
    out = modulus_check(dirac([0.0, 0.0]), dirac([1.0, 0.0]), ValueSolver(V_LIN), 1.0, SPEC)
    assert out["pass"]
    assert out["gap"] == pytest.approx(out["bound"], abs=1e-3)


def test_modulus_rejects_non_simple():
    pot = squared_mean_potential(lorentzian_potential([0.0]), 1.0)
    with pytest.raises(ValueError):
        modulus_check(dirac([0.0]), dirac([1.0]), ValueSolver(pot), 1.0, SPEC)


# -- report -----------------------------------------------------------------------------


def test_report_serializes():
    rep = DiagnosticsReport()
    rep.add("a", Check(np.float64(1.0), 2.0, 0.1, np.bool_(True), "test", {"arr": np.arange(3), "flag": np.bool_(False)}))
    rep.add("b", Check(3.0, 2.0, 0.1, False, "test"))
    assert not rep.passed
    text = json.dumps(rep.to_dict())
    assert json.loads(text)["a"]["detail"]["arr"] == [0, 1, 2]
    assert rep.rows()[0] == ("a", 1.0, 2.0, 1.0, True)
