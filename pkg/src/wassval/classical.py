"""Classical discounted value function ``u(x)`` by direct transcription.

``u(x) = inf int_0^inf e^{-delta t} (|g'|^p / p - V(g)) dt`` over paths with
``g(0) = x``.  The path is discretized on a uniform grid, held constant after
the horizon, and optimized by :func:`wassval._newton.solve_from_starts`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import bisect

from wassval._newton import solve_from_starts
from wassval.paths import Trajectory, discounted_action, regularized_momentum
from wassval.potentials import Potential, ProblemSpec, simple_potential_lift

__all__ = [
    "ClassicalSolution",
    "solve_classical",
    "euler_lagrange_residual",
    "grad_u_fd",
    "hje_residual_classical",
    "gradient_flow_residual",
    "closed_form_linear",
    "closed_form_power",
    "value_function",
]


@dataclass
class ClassicalSolution:
    """Result of :func:`solve_classical`; unpacks as ``value, trajectory``."""

    value: float
    trajectory: Trajectory
    converged: bool
    iterations: int
    gradient_norm: float
    history: list = field(default_factory=list)
    message: str = ""

    def __iter__(self):
        yield self.value
        yield self.trajectory


def _flow_start(flow, x0, grid):
    t = grid.nodes
    X = np.stack([flow(x0, tk) for tk in t])  # (M+1, N, d)
    if not np.all(np.isfinite(X)):
        return None
    return X


def solve_classical(x, V: Potential, spec: ProblemSpec, warm_start: str = "all") -> ClassicalSolution:
    """Discounted value and optimal trajectory from ``x``.

    Parameters
    ----------
    x : array_like, shape (d,)
    V : Potential
    spec : ProblemSpec
    warm_start : {"all", "constant", "flow"}
        Starting paths to try.  ``"all"`` runs the constant path and, when
        ``V`` registers a flow, the flow as well, keeping the better result.

    Raises
    ------
    CertificateError
        When ``spec`` carries a growth certificate that fails the discount
        condition ``p (2p/delta)^p alpha < 1``.
    """
    spec.require_valid()
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (V.dim,):
        raise ValueError(f"start point has shape {x.shape}, potential dimension is {V.dim}")
    if spec.certificate is None and not V.bounded_above and V.growth is not None and V.growth[2] >= spec.p:
        warnings.warn(
            f"{V.name} potential grows like |x|^{V.growth[2]:g} with p = {spec.p:g} and no certificate; "
            "the value may be unbounded below",
            stacklevel=2,
        )
    grid = spec.grid()
    x0 = x[None, :]
    starts = []
    if warm_start in ("all", "constant"):
        starts.append(None)
    if warm_start in ("all", "flow") and V.flow is not None:
        X = _flow_start(V.flow, x0, grid)
        if X is not None:
            starts.append(X)
    if not starts:
        starts.append(None)
    pot = simple_potential_lift(V)
    res = solve_from_starts(x0, np.ones(1), grid, spec.p, pot, starts, gtol=spec.gtol, max_iter=spec.max_iter)
    traj = Trajectory(grid, res.positions[:, 0, :])
    value = discounted_action(traj, pot, spec)
    return ClassicalSolution(value, traj, res.converged, res.iterations, res.gradient_norm, res.history, res.message)


def value_function(V: Potential, spec: ProblemSpec) -> Callable:
    """``x -> u(x)`` backed by :func:`solve_classical`."""

    def u(x):
        sol = solve_classical(x, V, spec)
        if not sol.converged:
            raise RuntimeError(f"classical solve did not converge at x = {np.asarray(x).tolist()}: {sol.message}")
        return sol.value

    return u


def euler_lagrange_residual(traj: Trajectory, V: Potential, spec: ProblemSpec) -> dict:
    """Discrete residual of ``d/dt(|g'|^{p-2} g') + grad V(g) - delta |g'|^{p-2} g' = 0``.

    At interior node k the time derivative is the centered difference of the
    two adjacent interval momenta and ``g'`` is the average of the adjacent
    interval velocities.

    Returns
    -------
    dict
        ``max`` and ``per_node`` (Euclidean norms at nodes ``1..M-1``).
    """
    if traj.grid.nodes.size < 3:
        raise ValueError("the Euler-Lagrange residual needs at least 3 nodes")
    p = spec.p
    v = traj.velocities()
    h = traj.grid.dt
    mom = regularized_momentum(v, p)
    dmom = (mom[1:] - mom[:-1]) / (0.5 * (h[1:] + h[:-1]))[:, None]
    vnode = 0.5 * (v[1:] + v[:-1])
    res = dmom + V.grad(traj.positions[1:-1]) - spec.delta * regularized_momentum(vnode, p)
    norms = np.linalg.norm(res, axis=-1)
    return {"max": float(norms.max()), "per_node": norms}


def grad_u_fd(x, solver: Callable, h: Optional[float] = None) -> np.ndarray:
    """Central-difference gradient of a value function handle.

    ``h`` defaults to ``1e-4 (1 + |x|)``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if h is None:
        h = 1e-4 * (1.0 + np.linalg.norm(x))
    if not h > 0:
        raise ValueError("h must be positive")
    g = np.empty_like(x)
    for a in range(x.size):
        e = np.zeros_like(x)
        e[a] = h
        g[a] = (solver(x + e) - solver(x - e)) / (2.0 * h)
    return g


def hje_residual_classical(x, u_val: float, grad_u, V: Potential, spec: ProblemSpec) -> float:
    """``delta u(x) + |grad u(x)|^q / q + V(x)``."""
    q = spec.q
    g = np.asarray(grad_u, dtype=float)
    return float(spec.delta * u_val + np.linalg.norm(g) ** q / q + V(np.asarray(x, dtype=float)))


def gradient_flow_residual(traj: Trajectory, grad_u: Callable, p: float = 2.0, stride: int = 1) -> dict:
    """``|g'|^{p-2} g' + grad u(g)`` at interior nodes.

    ``grad_u`` maps a point of shape ``(d,)`` to its gradient.  The node
    velocity is the average of the two adjacent interval velocities.  Set
    ``stride`` to sample every ``stride``-th interior node when ``grad_u`` is
    expensive.
    """
    v = traj.node_velocities()
    idx = np.arange(1, traj.grid.steps, stride)
    mom = regularized_momentum(v[idx - 1], p)
    g = np.stack([np.asarray(grad_u(traj.positions[k]), dtype=float) for k in idx])
    norms = np.linalg.norm(mom + g, axis=-1)
    return {"max": float(norms.max()) if norms.size else 0.0, "per_node": norms, "nodes": idx}


def closed_form_linear(w, c: float, delta: float, p: float):
    """Value function and optimal flow for ``V(x) = w.x + c``.

    ``u(x) = -(|w|^q / (q delta^q) + w.x + c) / delta`` and
    ``Psi(x, t) = x + t |w/delta|^{q-2} w / delta``.
    """
    if not delta > 0 or not p > 1:
        raise ValueError("need delta > 0 and p > 1")
    w = np.asarray(w, dtype=float).reshape(-1)
    q = p / (p - 1.0)
    s = w / delta
    ns = float(np.linalg.norm(s))
    vel = ns ** (q - 2) * s if ns > 0 else np.zeros_like(s)
    const = float(np.linalg.norm(w)) ** q / (q * delta**q) + c

    def u(x):
        x = np.asarray(x, dtype=float)
        return -(const + x @ w) / delta

    def Psi(x, t):
        return np.asarray(x, dtype=float) + t * vel

    return u, Psi


def closed_form_power(p: float, delta: float):
    """Value function and flow for ``V(x) = -|x|^p / p``.

    ``a`` is the root in ``(0, 1/delta]`` of ``delta a + (p-1) a^q - 1``;
    ``u(x) = a |x|^p / p`` and ``Psi(x, t) = x exp(-a^{q-1} t)``.

    Returns
    -------
    a : float
    u, Psi : callable
    """
    if not delta > 0 or not p > 1:
        raise ValueError("need delta > 0 and p > 1")
    q = p / (p - 1.0)

    def f(a):
        return delta * a + (p - 1.0) * a**q - 1.0

    hi = 1.0 / delta
    assert f(hi) > 0 > f(0.0)
    a = bisect(f, 0.0, hi, xtol=1e-12 * min(1.0, hi), maxiter=400)
    rate = a ** (q - 1.0)

    def u(x):
        return a * np.linalg.norm(np.asarray(x, dtype=float), axis=-1) ** p / p

    def Psi(x, t):
        return np.asarray(x, dtype=float) * np.exp(-rate * t)

    return a, u, Psi
