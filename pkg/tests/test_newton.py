import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import random_softabs_config
from wassval._newton import _Action, minimize_action, solve_from_starts
from wassval.paths import MeasurePath, TimeGrid, partial_action
from wassval.measures import make_particle_measure
from wassval.potentials import (
    linear_potential,
    lorentzian_potential,
    potential_from_config,
    simple_potential_lift,
    squared_mean_potential,
)

GRID = TimeGrid.uniform(5.0, 20, 1.0)


def objective(X, w, p, pot):
    path = MeasurePath(make_particle_measure(X[0], w), GRID, X)
    return partial_action(path, pot, p, 0, GRID.steps, tail=True)


@pytest.mark.parametrize("p", [2.0, 3.0])
@pytest.mark.parametrize("simple", [True, False])
def test_gradient_matches_finite_differences(p, simple):
    rng = np.random.default_rng(1)
    inner = lorentzian_potential([0.2, 0.1], 1.0, 0.8)
    pot = simple_potential_lift(inner) if simple else squared_mean_potential(inner, 1.0)
    w = np.array([0.3, 0.7])
    X = rng.normal(size=(21, 2, 2))
    act = _Action(GRID, w, p, pot)
    f, G = act.evaluate(X)
    assert f == pytest.approx(objective(X, w, p, pot), abs=1e-13)
    h = 1e-6
    for idx in [(1, 0, 0), (7, 1, 1), (20, 0, 1)]:
        Xp, Xm = X.copy(), X.copy()
        Xp[idx] += h
        Xm[idx] -= h
        fd = (objective(Xp, w, p, pot) - objective(Xm, w, p, pot)) / (2 * h)
        assert G[idx[0] - 1][idx[1:]] == pytest.approx(fd, abs=1e-7)


def test_p_continuation_from_constant_start():
    # from a constant path the p > 2 kinetic term has zero curvature; continuation from p = 2 fixes it
    pot = simple_potential_lift(linear_potential([1.0]))
    grid = TimeGrid.uniform(40.0, 400, 1.0)
    res = solve_from_starts(np.zeros((1, 1)), np.ones(1), grid, 3.0, pot, [None])
    assert res.converged
    assert res.objective == pytest.approx(-2.0 / 3.0, abs=1e-3)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6))
def test_random_concave_instances_converge(seed):
    rng = np.random.default_rng(seed)
    pot = simple_potential_lift(potential_from_config(random_softabs_config(rng, 2), 2))
    grid = TimeGrid.uniform(30.0, 150, 1.0)
    x0 = rng.uniform(-1.5, 1.5, (2, 2))
    res = minimize_action(x0, np.array([0.4, 0.6]), grid, 2.0, pot)
    assert res.converged
    assert res.gradient_norm <= 1e-9
