import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import discounted_integral
from wassval.measures import make_particle_measure, wasserstein_p
from wassval.paths import (
    MeasurePath,
    TimeGrid,
    Trajectory,
    ac_norm,
    discounted_action,
    measure_ac_norm,
    metric_derivative,
    partial_action,
    pi_distance,
    poincare_check,
)
from wassval.potentials import ProblemSpec, linear_potential, zero_potential


def line_traj(grid, fn, d=1):
    return Trajectory(grid, np.stack([fn(t) for t in grid.nodes]).reshape(-1, d))


# -- grid weights ------------------------------------------------------------------


@pytest.mark.parametrize("delta", [1e-4, 0.3, 1.0, 7.0])
def test_interval_weights_exact(delta):
    grid = TimeGrid.from_nodes([0.0, 0.01, 0.5, 1.7, 4.0], delta)
    for k, (a, b) in enumerate(zip(grid.nodes[:-1], grid.nodes[1:])):
        whole = discounted_integral(lambda t: 1.0 if a <= t <= b else 0.0, delta, 4.0)
        hat = discounted_integral(lambda t: (t - a) / (b - a) if a <= t <= b else 0.0, delta, 4.0)
        assert grid.interval_weights[k] == pytest.approx(whole, rel=1e-9)
        assert grid.right_weights[k] == pytest.approx(hat, rel=1e-9)
        assert grid.left_weights[k] == pytest.approx(whole - hat, rel=1e-9)


def test_node_weights_sum_to_full_integral():
    grid = TimeGrid.uniform(40.0, 400, 1.0)
    assert grid.node_weights(tail=True).sum() == pytest.approx(1.0, abs=1e-14)
    assert grid.node_weights(tail=False).sum() == pytest.approx(1.0 - np.exp(-40.0), abs=1e-14)


def test_shifted_grid_starts_at_zero():
    grid = TimeGrid.uniform(10.0, 100, 0.5)
    s = grid.shifted(30)
    assert s.nodes[0] == 0.0 and s.steps == 70
    np.testing.assert_allclose(s.interval_weights * np.exp(-0.5 * grid.nodes[30]), grid.interval_weights[30:], rtol=1e-12)


@pytest.mark.parametrize("nodes, delta", [([0.0], 1.0), ([0.1, 1.0], 1.0), ([0.0, 1.0, 1.0], 1.0), ([0.0, 1.0], 0.0)])
def test_bad_grids(nodes, delta):
    with pytest.raises(ValueError):
        TimeGrid.from_nodes(nodes, delta)


def test_index_of_requires_node():
    grid = TimeGrid.uniform(1.0, 10, 1.0)
    assert grid.index_of(0.3) == 3
    with pytest.raises(ValueError):
        grid.index_of(0.35)


# -- action quadrature ---------------------------------------------------------------


def test_action_of_straight_line_against_quadrature():
    # gamma(t) = t w with V = w.x: integrand (1/2)|w|^2 - t|w|^2, V linear in t so the quadrature is exact
    spec = ProblemSpec(p=2, delta=1.0, horizon=40.0, steps=400)
    w = np.array([1.0, 0.0])
    traj = line_traj(spec.grid(), lambda t: t * w, d=2)
    got = discounted_action(traj, linear_potential(w), spec)
    ref = discounted_integral(lambda t: 0.5 - t, 1.0, 40.0) - np.exp(-40.0) * 40.0
    assert got == pytest.approx(ref, abs=1e-12)
    assert got == pytest.approx(-0.5, abs=1e-12)


def test_action_of_curved_path_converges_quadratically():
    def exact(M):
        spec = ProblemSpec(p=2, delta=1.0, horizon=10.0, steps=M)
        traj = line_traj(spec.grid(), lambda t: np.sin(t))
        return discounted_action(traj, linear_potential([1.0]), spec)

    ref = discounted_integral(lambda t: 0.5 * np.cos(t) ** 2 - np.sin(t), 1.0, 10.0) - np.exp(-10.0) * np.sin(10.0)
    errs = [abs(exact(M) - ref) for M in (50, 100, 200)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 1.8)


def test_partial_actions_add_up():
    spec = ProblemSpec(p=3, delta=0.7, horizon=8.0, steps=80)
    rng = np.random.default_rng(0)
    X = np.cumsum(rng.normal(scale=0.1, size=(81, 3, 2)), axis=0)
    path = MeasurePath(make_particle_measure(X[0], [0.2, 0.3, 0.5]), spec.grid(), X)
    V = linear_potential([0.3, -0.2], 0.1)
    total = discounted_action(path, V, spec)
    pieces = partial_action(path, V, 3, 0, 25) + partial_action(path, V, 3, 25, 80, tail=True)
    assert total == pytest.approx(pieces, abs=1e-13)


def test_discounted_action_checks_horizon():
    spec = ProblemSpec(p=2, delta=1.0, horizon=5.0, steps=50)
    traj = line_traj(TimeGrid.uniform(4.0, 40, 1.0), lambda t: 0.0 * t)
    with pytest.raises(ValueError, match="horizon"):
        discounted_action(traj, zero_potential(1), spec)


def test_constant_path_has_zero_kinetic_cost():
    spec = ProblemSpec(p=2, delta=1.0)
    traj = line_traj(spec.grid(), lambda t: np.array([2.0, -1.0]), d=2)
    assert ac_norm(traj, 2) == 0.0
    # staying put at x yields -V(x)/delta
    assert discounted_action(traj, linear_potential([1.0, 1.0], 0.5), spec) == pytest.approx(-1.5, abs=1e-14)


# -- metric derivative and AC norm ---------------------------------------------------


def test_metric_derivative_matches_w_p_for_translation():
    grid = TimeGrid.uniform(2.0, 20, 1.0)
    base = make_particle_measure([[0.0, 0.0], [1.0, 2.0], [-1.0, 0.5]])
    v = np.array([0.3, -0.4])
    X = base.points[None] + grid.nodes[:, None, None] * v
    path = MeasurePath(base, grid, X)
    speed = metric_derivative(path, 2.0)
    np.testing.assert_allclose(speed, 0.5, rtol=1e-12)
    w = wasserstein_p(path.measure_at(0), path.measure_at(1), 2.0) / grid.dt[0]
    assert w == pytest.approx(speed[0], rel=1e-9)
    assert measure_ac_norm(path, 2.0) == pytest.approx(0.25 * (1 - np.exp(-2.0)), rel=1e-12)


def test_crossing_intervals_detected():
    grid = TimeGrid.uniform(2.0, 2, 1.0)
    X = np.array([[[0.0], [1.0]], [[1.0], [0.0]], [[2.0], [-1.0]]])
    path = MeasurePath(make_particle_measure([[0.0], [1.0]]), grid, X)
    assert path.crossing_intervals() != []


# -- weighted Poincare ------------------------------------------------------------------


def test_poincare_p1_linear_is_equality():
    grid = TimeGrid.uniform(40.0, 400, 1.0)
    out = poincare_check(line_traj(grid, lambda t: t), p=1.0)
    assert out["pass"]
    assert out["lhs"] == pytest.approx(out["rhs"], abs=1e-6)


@settings(max_examples=50, deadline=None)
@given(
    st.integers(0, 10**6),
    st.sampled_from([1.0, 1.5, 2.0, 3.0]),
    st.floats(0.2, 3.0),
)
def test_poincare_random_trajectories(seed, p, delta):
    rng = np.random.default_rng(seed)
    grid = TimeGrid.uniform(30.0 / delta, 200, delta)
    X = np.cumsum(rng.normal(scale=rng.uniform(0.01, 1.0), size=(201, 2)), axis=0)
    assert poincare_check(Trajectory(grid, X), p)["pass"]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([1.0, 2.0]))
def test_poincare_random_measure_paths(seed, p):
    rng = np.random.default_rng(seed)
    grid = TimeGrid.uniform(20.0, 40, 1.0)
    X = np.cumsum(rng.normal(scale=0.3, size=(41, 3, 2)), axis=0)
    path = MeasurePath(make_particle_measure(X[0], rng.uniform(0.2, 1, 3)), grid, X)
    assert poincare_check(path, p)["pass"]


# -- Pi metric -------------------------------------------------------------------------


def test_pi_distance_basic():
    grid = TimeGrid.uniform(10.0, 100, 1.0)
    a = line_traj(grid, lambda t: t)
    b = line_traj(grid, lambda t: t + 1.0)
    assert pi_distance(a, a) == 0.0
    # constant gap 1 contributes (1/2) 2^{-k} for k = 0..10
    assert pi_distance(a, b) == pytest.approx(sum(0.5 * 2.0**-k for k in range(11)), rel=1e-12)
    assert pi_distance(a, b) <= 2.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_pi_distance_metric_axioms(seed):
    rng = np.random.default_rng(seed)
    grid = TimeGrid.uniform(6.0, 60, 1.0)
    a, b, c = (Trajectory(grid, np.cumsum(rng.normal(size=(61, 2)), axis=0)) for _ in range(3))
    assert pi_distance(a, b) == pytest.approx(pi_distance(b, a))
    assert pi_distance(a, c) <= pi_distance(a, b) + pi_distance(b, c) + 1e-12


def test_pi_distance_sees_between_nodes():
    # coarse grid: the gap at t = 1 lies inside an interval and is still counted
    grid = TimeGrid.from_nodes([0.0, 2.0], 1.0)
    a = Trajectory(grid, np.array([[0.0], [0.0]]))
    b = Trajectory(grid, np.array([[0.0], [2.0]]))
    assert pi_distance(a, b, K=1) == pytest.approx(0.0 + 0.5 * 1.0 / 2.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([1.5, 2.0, 3.0]))
def test_metric_derivative_dominates_wasserstein_quotient(seed, p):
    rng = np.random.default_rng(seed)
    grid = TimeGrid.uniform(2.0, 8, 1.0)
    X = np.cumsum(rng.normal(size=(9, 4, 2)), axis=0)
    path = MeasurePath(make_particle_measure(X[0], rng.uniform(0.1, 1, 4)), grid, X)
    speed = metric_derivative(path, p)
    for k in range(grid.steps):
        w = wasserstein_p(path.measure_at(k), path.measure_at(k + 1), p) / grid.dt[k]
        assert speed[k] >= w - 1e-9
