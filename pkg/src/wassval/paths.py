"""Time grids, piecewise-linear particle paths and discounted integrals.

Every integral against ``exp(-delta t)`` uses exact exponential weights on
each interval: quantities constant on an interval (speeds) are weighted by
``int exp(-delta t) dt`` and quantities known at nodes are linearly
interpolated and integrated exactly against the exponential.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from wassval.measures import ParticleMeasure, make_particle_measure, wasserstein_p
from wassval.potentials import MeasurePotential, Potential, ProblemSpec, simple_potential_lift

__all__ = [
    "TimeGrid",
    "Trajectory",
    "MeasurePath",
    "metric_derivative",
    "discounted_action",
    "partial_action",
    "poincare_check",
    "pi_distance",
    "ac_norm",
    "measure_ac_norm",
    "as_measure_path",
    "regularized_momentum",
]


def _beta(z):
    """``(1 - (1 + z) e^{-z}) / z^2``, accurate for small z."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = z < 0.05
    zs = z[small]
    # sum_{k>=2} (-1)^k (k-1)/k! z^{k-2}
    acc = np.zeros_like(zs)
    fact = 2.0
    for k in range(2, 14):
        acc += (-1) ** k * (k - 1) / fact * zs ** (k - 2)
        fact *= k + 1
    out[small] = acc
    zl = z[~small]
    out[~small] = (1.0 - (1.0 + zl) * np.exp(-zl)) / zl**2
    return out


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Nodes ``0 = t_0 < ... < t_M = T`` with discount rate ``delta``.

    Attributes
    ----------
    interval_weights : ndarray, shape (M,)
        ``int_{t_k}^{t_{k+1}} exp(-delta t) dt``.
    left_weights, right_weights : ndarray, shape (M,)
        Exact integrals of ``exp(-delta t)`` against the two linear hat
        functions of each interval; they sum to ``interval_weights``.
    """

    nodes: np.ndarray
    delta: float
    interval_weights: np.ndarray
    left_weights: np.ndarray
    right_weights: np.ndarray

    @classmethod
    def from_nodes(cls, nodes, delta: float) -> "TimeGrid":
        t = np.asarray(nodes, dtype=float).reshape(-1)
        if t.size < 2:
            raise ValueError("a time grid needs at least two nodes")
        if abs(t[0]) > 0:
            raise ValueError("time grids start at t = 0")
        h = np.diff(t)
        if np.any(h <= 0):
            raise ValueError("grid nodes must be strictly increasing")
        if not delta > 0:
            raise ValueError("delta must be positive")
        z = delta * h
        e0 = np.exp(-delta * t[:-1])
        whole = e0 * (-np.expm1(-z)) / delta
        right = e0 * h * _beta(z)
        left = whole - right
        for arr in (t, whole, left, right):
            arr.setflags(write=False)
        return cls(t, float(delta), whole, left, right)

    @classmethod
    def uniform(cls, horizon: float, steps: int, delta: float) -> "TimeGrid":
        return cls.from_nodes(np.linspace(0.0, horizon, int(steps) + 1), delta)

    @property
    def steps(self) -> int:
        return self.nodes.size - 1

    @property
    def horizon(self) -> float:
        return float(self.nodes[-1])

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def tail_weight(self) -> float:
        """``int_T^inf exp(-delta t) dt``."""
        return float(np.exp(-self.delta * self.horizon) / self.delta)

    def node_weights(self, tail: bool = True) -> np.ndarray:
        """Quadrature weights for node values linearly interpolated in time."""
        c = np.zeros(self.nodes.size)
        c[:-1] += self.left_weights
        c[1:] += self.right_weights
        if tail:
            c[-1] += self.tail_weight
        return c

    def index_of(self, t: float, tol: float = 1e-9) -> int:
        k = int(np.argmin(np.abs(self.nodes - t)))
        if abs(self.nodes[k] - t) > tol * max(1.0, abs(t)):
            raise ValueError(f"t = {t} is not a grid node")
        return k

    def shifted(self, k: int) -> "TimeGrid":
        """Grid of nodes ``t_k..t_M`` translated to start at 0."""
        return TimeGrid.from_nodes(self.nodes[k:] - self.nodes[k], self.delta)

    def compatible(self, other: "TimeGrid") -> bool:
        return self.nodes.shape == other.nodes.shape and np.allclose(self.nodes, other.nodes, rtol=0, atol=1e-12)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Piecewise-linear path with ``positions[k] = gamma(t_k)``."""

    grid: TimeGrid
    positions: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos[:, None]
        if pos.shape[0] != self.grid.nodes.size:
            raise ValueError(f"{pos.shape[0]} positions for {self.grid.nodes.size} nodes")
        if not np.all(np.isfinite(pos)):
            raise ValueError("trajectory positions must be finite")
        object.__setattr__(self, "positions", pos)

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def velocities(self) -> np.ndarray:
        """Constant velocity on each interval, shape ``(M, d)``."""
        return np.diff(self.positions, axis=0) / self.grid.dt[:, None]

    def node_velocities(self) -> np.ndarray:
        """Average of adjacent interval velocities at interior nodes, ``(M-1, d)``."""
        v = self.velocities()
        return 0.5 * (v[:-1] + v[1:])

    def at(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.stack([np.interp(t, self.grid.nodes, self.positions[:, a]) for a in range(self.dim)], axis=-1)


@dataclass(frozen=True, eq=False)
class MeasurePath:
    """One trajectory per atom of ``base`` on a shared grid; weights fixed."""

    base: ParticleMeasure
    grid: TimeGrid
    positions: np.ndarray  # (M+1, N, d)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 3:
            raise ValueError("measure path positions must have shape (M+1, N, d)")
        if pos.shape[0] != self.grid.nodes.size:
            raise ValueError("positions do not match the grid")
        if pos.shape[1] != self.base.size:
            raise ValueError(f"{pos.shape[1]} trajectories for {self.base.size} atoms")
        if pos.shape[2] != self.base.dim:
            raise ValueError("trajectory dimension differs from the base measure")
        if not np.allclose(pos[0], self.base.points):
            raise ValueError("trajectories must start at the atoms of the base measure")
        if not np.all(np.isfinite(pos)):
            raise ValueError("measure path positions must be finite")
        object.__setattr__(self, "positions", pos)

    @classmethod
    def from_trajectories(cls, base: ParticleMeasure, trajectories) -> "MeasurePath":
        trajectories = list(trajectories)
        grid = trajectories[0].grid
        for tr in trajectories[1:]:
            if not grid.compatible(tr.grid):
                raise ValueError("trajectories live on different grids")
        pos = np.stack([tr.positions for tr in trajectories], axis=1)
        return cls(base, grid, pos)

    @property
    def weights(self) -> np.ndarray:
        return self.base.weights

    def trajectory(self, i: int) -> Trajectory:
        return Trajectory(self.grid, self.positions[:, i, :])

    def trajectories(self):
        return [self.trajectory(i) for i in range(self.base.size)]

    def measure_at(self, k: int) -> ParticleMeasure:
        """``sigma(t_k)``."""
        return make_particle_measure(self.positions[k], self.base.weights)

    def velocities(self) -> np.ndarray:
        """``(M, N, d)`` interval velocities."""
        return np.diff(self.positions, axis=0) / self.grid.dt[:, None, None]

    def node_velocities(self) -> np.ndarray:
        v = self.velocities()
        return 0.5 * (v[:-1] + v[1:])

    def crossing_intervals(self, tol: float = 1e-12) -> list:
        """``(k, i, j)`` for each interval k on which particles i and j meet.

        On such intervals the Lagrangian speed may exceed the metric derivative.
        """
        X = self.positions
        N = X.shape[1]
        if N < 2:
            return []
        I, J = np.triu_indices(N, 1)
        d0 = X[:-1, I] - X[:-1, J]  # (M, P, d)
        dd = (X[1:, I] - X[1:, J]) - d0
        denom = np.sum(dd * dd, axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(denom > 0, -np.sum(d0 * dd, axis=-1) / denom, 0.0)
        s = np.clip(s, 0.0, 1.0)
        gap = np.linalg.norm(d0 + s[..., None] * dd, axis=-1)
        k, pair = np.nonzero(gap <= tol)
        return [(int(a), int(I[b]), int(J[b])) for a, b in zip(k, pair)]

    def restricted(self, k: int) -> "MeasurePath":
        """Remainder from node ``k`` on a grid shifted to start at 0."""
        return MeasurePath(self.measure_at(k), self.grid.shifted(k), self.positions[k:])


def as_measure_path(path: Union[Trajectory, MeasurePath]) -> MeasurePath:
    if isinstance(path, MeasurePath):
        return path
    base = make_particle_measure(path.positions[:1], [1.0])
    return MeasurePath(base, path.grid, path.positions[:, None, :])


def _as_measure_potential(pot) -> MeasurePotential:
    if isinstance(pot, MeasurePotential):
        return pot
    if isinstance(pot, Potential):
        return simple_potential_lift(pot)
    raise TypeError(f"expected a Potential or MeasurePotential, got {type(pot).__name__}")


def regularized_momentum(v, p: float, eps: float = 1e-9):
    """``|v|^{p-2} v``; for ``p < 2`` the modulus is replaced by
    ``sqrt(|v|^2 + eps^2)``."""
    v = np.asarray(v, dtype=float)
    sq = np.sum(v * v, axis=-1, keepdims=True)
    if p == 2:
        return v
    if p < 2:
        return (sq + eps**2) ** ((p - 2) / 2) * v
    return sq ** ((p - 2) / 2) * v


def _speed_power(v, p, eps=1e-9):
    sq = np.sum(v * v, axis=-1)
    if p < 2:
        return (sq + eps**2) ** (p / 2)
    return sq ** (p / 2)


def metric_derivative(path: Union[Trajectory, MeasurePath], p: float) -> np.ndarray:
    """Lagrangian speed ``(sum_i w_i |v_i|^p)^{1/p}`` on each interval.

    This equals the metric derivative in ``W_p`` when particle paths do not
    cross and bounds it from above otherwise.
    """
    if not p > 1:
        raise ValueError("metric derivative needs p > 1")
    mp = as_measure_path(path)
    speeds = np.linalg.norm(mp.velocities(), axis=-1)  # (M, N)
    return (speeds**p @ mp.weights) ** (1.0 / p)


def partial_action(
    path: MeasurePath,
    pot,
    p: float,
    start: int = 0,
    stop: Optional[int] = None,
    tail: bool = False,
) -> float:
    """Discounted action restricted to intervals ``start..stop-1``.

    The times are absolute, so the pieces of a split add up to the action over
    the union.  With ``tail=True`` and ``stop = M`` the stay-put completion
    ``-exp(-delta T) V(sigma(T)) / delta`` is added.
    """
    mp = as_measure_path(path)
    mpot = _as_measure_potential(pot)
    grid = mp.grid
    M = grid.steps
    stop = M if stop is None else stop
    if not 0 <= start <= stop <= M:
        raise ValueError("invalid interval range")
    if tail and stop != M:
        raise ValueError("the tail term only applies when integrating to the horizon")
    if start == stop and not tail:
        return 0.0
    v = mp.velocities()[start:stop]
    kinetic = _speed_power(v, p) @ mp.weights / p  # (stop-start,)
    total = float(grid.interval_weights[start:stop] @ kinetic)
    vals = mpot.batch_value(mp.positions[start : stop + 1], mp.weights)
    node_w = np.zeros(stop - start + 1)
    node_w[:-1] += grid.left_weights[start:stop]
    node_w[1:] += grid.right_weights[start:stop]
    if tail:
        node_w[-1] += grid.tail_weight
    return total - float(node_w @ vals)


def discounted_action(path: Union[Trajectory, MeasurePath], pot, spec: ProblemSpec) -> float:
    """Truncated discounted action plus the stay-put tail.

    ``sum_k int e^{-delta t} [speed_k^p / p - V(sigma)] dt - e^{-delta T} V(sigma(T)) / delta``
    with ``V(sigma)`` linear between nodes.
    """
    mp = as_measure_path(path)
    if abs(mp.grid.horizon - spec.horizon) > 1e-9 * max(1.0, spec.horizon):
        raise ValueError(f"path horizon {mp.grid.horizon} differs from problem horizon {spec.horizon}")
    if abs(mp.grid.delta - spec.delta) > 1e-14 * spec.delta:
        raise ValueError("grid discount differs from the problem discount")
    return partial_action(mp, pot, spec.p, 0, mp.grid.steps, tail=True)


def ac_norm(traj: Trajectory, p: float, delta: Optional[float] = None) -> float:
    """``int_0^T exp(-delta t) |gamma'|^p dt`` for a piecewise-linear path."""
    if not p > 1:
        raise ValueError("ac_norm needs p > 1")
    grid = traj.grid
    if delta is not None and abs(delta - grid.delta) > 1e-14 * delta:
        grid = TimeGrid.from_nodes(grid.nodes, delta)
    speed = np.linalg.norm(traj.velocities(), axis=-1)
    return float(grid.interval_weights @ speed**p)


def measure_ac_norm(path: MeasurePath, p: float) -> float:
    """``int exp(-delta t) ||sigma'||^p dt`` with the Lagrangian speed."""
    return float(path.grid.interval_weights @ metric_derivative(path, p) ** p)


def poincare_check(path: Union[Trajectory, MeasurePath], p: float, delta: Optional[float] = None, tol: float = 1e-10) -> dict:
    """Weighted Poincare inequality on ``[0, T]``.

    ``lhs = (int e^{-delta t} |u(t) - u(0)|^p dt)^{1/p}`` with ``u(t)`` the
    distance to the starting point (``|gamma(t) - gamma(0)|`` or
    ``W_p(sigma(t), sigma(0))``) and ``rhs = (p/delta) (int e^{-delta t}
    speed^p dt)^{1/p}``.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    grid = path.grid
    if delta is not None and abs(delta - grid.delta) > 1e-14 * delta:
        grid = TimeGrid.from_nodes(grid.nodes, delta)
    delta = grid.delta
    if isinstance(path, MeasurePath):
        sigma0 = path.measure_at(0)
        u = np.array([wasserstein_p(path.measure_at(k), sigma0, p) for k in range(grid.nodes.size)])
        speeds = np.linalg.norm(path.velocities(), axis=-1) ** p @ path.weights  # speed^p per interval
    else:
        u = np.linalg.norm(path.positions - path.positions[0], axis=-1)
        speeds = np.linalg.norm(path.velocities(), axis=-1) ** p
    lhs = float(grid.node_weights(tail=False) @ np.abs(u - u[0]) ** p) ** (1.0 / p)
    rhs = (p / delta) * float(grid.interval_weights @ speeds) ** (1.0 / p)
    return {"lhs": lhs, "rhs": rhs, "slack": rhs - lhs, "pass": bool(lhs <= rhs + tol)}


def pi_distance(g1: Trajectory, g2: Trajectory, K: Optional[int] = None) -> float:
    """Truncated series ``sum_{k=0}^K 2^{-k} m_k / (1 + m_k)``.

    ``m_k`` is the maximum of ``|g1 - g2|`` over ``[0, k]``; for
    piecewise-linear paths it is attained at a node or at ``t = k``.  The
    omitted tail is at most ``2^{-K}``.
    """
    if not g1.grid.compatible(g2.grid):
        raise ValueError("trajectories live on different grids")
    T = g1.grid.horizon
    if K is None:
        K = int(np.floor(T + 1e-12))
    if K > T + 1e-12:
        raise ValueError(f"truncation K={K} exceeds the grid horizon {T}")
    t = g1.grid.nodes
    gap = np.linalg.norm(g1.positions - g2.positions, axis=-1)
    total = 0.0
    for k in range(K + 1):
        inside = gap[t <= k + 1e-12]
        end = np.linalg.norm(g1.at(k)[0] - g2.at(k)[0])
        m = max(float(inside.max()), float(end))
        total += 2.0**-k * m / (1.0 + m)
    return total
