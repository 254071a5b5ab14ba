"""Numerical checks of the optimality conditions and bounds satisfied by ``U``.

Every check returns plain numbers and a verdict; :class:`DiagnosticsReport`
collects them under names for serialization.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from wassval.measures import ParticleMeasure, make_particle_measure, wasserstein_p
from wassval.paths import MeasurePath, as_measure_path, partial_action, regularized_momentum
from wassval.potentials import MeasurePotential, Potential, ProblemSpec, simple_potential_lift

__all__ = [
    "TestField",
    "random_fields",
    "Check",
    "DiagnosticsReport",
    "dpp_residual",
    "euler_poisson_residual",
    "observed_order",
    "terminal_limit_check",
    "subdifferential_check",
    "gradient_conjecture_check",
    "hje_residual_measure",
    "bounds_check",
    "modulus_check",
]


@dataclass(frozen=True)
class TestField:
    """``Psi(x, t) = eta(x) f(t)`` with polynomial bumps.

    ``eta(x) = direction (1 - |x - c|^2 / r^2)^3`` on the ball ``|x - c| < r``
    and ``f(t) = (1 - ((t - t_c) / t_r)^2)^3`` on ``|t - t_c| < t_r``; both
    vanish outside.  Without a time profile ``f = 1``.
    """

    __test__ = False  # not a pytest class

    center: np.ndarray
    radius: float
    direction: np.ndarray
    time_center: Optional[float] = None
    time_radius: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(-1))
        object.__setattr__(self, "direction", np.asarray(self.direction, dtype=float).reshape(-1))
        if self.center.shape != self.direction.shape:
            raise ValueError("center and direction must have the same dimension")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if (self.time_center is None) != (self.time_radius is None):
            raise ValueError("give both time_center and time_radius or neither")
        if self.time_radius is not None and not self.time_radius > 0:
            raise ValueError("time_radius must be positive")

    @property
    def timed(self) -> bool:
        return self.time_center is not None

    def _s(self, x):
        diff = np.asarray(x, dtype=float) - self.center
        s = np.sum(diff**2, axis=-1) / self.radius**2
        return diff, s

    def eta(self, x):
        _, s = self._s(x)
        b = np.where(s < 1, (1 - s) ** 3, 0.0)
        return b[..., None] * self.direction

    def eta_jacobian(self, x):
        """``d eta_a / d x_b``, shape ``(..., d, d)``."""
        diff, s = self._s(x)
        db = np.where(s < 1, -6.0 * (1 - s) ** 2 / self.radius**2, 0.0)
        return self.direction[:, None] * (db[..., None] * diff)[..., None, :]

    def profile(self, t):
        t = np.asarray(t, dtype=float)
        if not self.timed:
            return np.ones_like(t)
        tau = (t - self.time_center) / self.time_radius
        return np.where(np.abs(tau) < 1, (1 - tau**2) ** 3, 0.0)

    def profile_dt(self, t):
        t = np.asarray(t, dtype=float)
        if not self.timed:
            return np.zeros_like(t)
        tau = (t - self.time_center) / self.time_radius
        return np.where(np.abs(tau) < 1, -6.0 * tau * (1 - tau**2) ** 2 / self.time_radius, 0.0)

    def __call__(self, x, t):
        """``Psi`` at points ``x`` (..., d) and times ``t`` broadcast against ``x[..., 0]``."""
        return self.eta(x) * np.asarray(self.profile(t))[..., None]


def random_fields(
    n: int, dim: int, horizon: float, seed: int = 0, box: float = 1.5, timed: bool = True, center=None
) -> list:
    """``n`` reproducible bump fields with centers in ``center + [-box, box]^d``.

    Time profiles are supported inside ``(0, horizon)``.
    """
    rng = np.random.default_rng(seed)
    offset = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
    out = []
    for _ in range(n):
        c = offset + rng.uniform(-box, box, dim)
        radius = rng.uniform(0.5, 1.5)
        direction = rng.normal(size=dim)
        direction /= np.linalg.norm(direction)
        if timed:
            tr = rng.uniform(0.1, 0.25) * horizon
            tc = rng.uniform(tr, horizon - tr)
            out.append(TestField(c, radius, direction, tc, tr))
        else:
            out.append(TestField(c, radius, direction))
    return out


@dataclass
class Check:
    lhs: float
    rhs: float
    tolerance: float
    passed: bool
    provenance: str
    detail: dict = field(default_factory=dict)

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs


@dataclass
class DiagnosticsReport:
    """Named checks in insertion order."""

    checks: dict = field(default_factory=dict)

    def add(self, name: str, check: Check):
        self.checks[name] = check

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def rows(self):
        """``(name, lhs, rhs, slack, pass)`` tuples for tabular output."""
        return [(n, c.lhs, c.rhs, c.slack, c.passed) for n, c in self.checks.items()]

    def to_dict(self) -> dict:
        return _jsonable({
            n: {
                "lhs": c.lhs,
                "rhs": c.rhs,
                "tolerance": c.tolerance,
                "pass": c.passed,
                "provenance": c.provenance,
                "detail": c.detail,
            }
            for n, c in self.checks.items()
        })


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if callable(obj):
        return repr(obj)
    return obj


def _as_mp(pot) -> MeasurePotential:
    return simple_potential_lift(pot) if isinstance(pot, Potential) else pot


def _node_velocity(path: MeasurePath, k: int) -> np.ndarray:
    """Velocity at node k: average of adjacent intervals, one-sided at the ends."""
    v = path.velocities()
    if k == 0:
        return v[0]
    if k == path.grid.steps:
        return v[-1]
    return 0.5 * (v[k - 1] + v[k])


# -- dynamic programming -----------------------------------------------------


def dpp_residual(mu: ParticleMeasure, path: MeasurePath, T_split: float, solver: Callable, spec: ProblemSpec) -> dict:
    """Dynamic programming gap at ``T_split``.

    ``U(mu) - [action over [0, T_split] + exp(-delta T_split) U(sigma(T_split))]``
    where ``U(mu)`` is the action of ``path`` and ``U(sigma(T_split))`` is
    re-solved from scratch with ``solver`` (a :class:`ValueSolver`).
    """
    pot = solver.measure_potential
    grid = path.grid
    if not 0 < T_split < grid.horizon:
        raise ValueError("T_split must lie strictly inside the horizon")
    k = grid.index_of(T_split)
    total = partial_action(path, pot, spec.p, 0, grid.steps, tail=True)
    head = partial_action(path, pot, spec.p, 0, k)
    fresh = solver(path.measure_at(k), spec)
    rest = np.exp(-spec.delta * grid.nodes[k]) * fresh.value
    return {
        "residual": total - (head + rest),
        "value": total,
        "head": head,
        "tail_value": fresh.value,
        "split_node": k,
        "converged": fresh.converged,
    }


# -- Euler-Poisson weak form --------------------------------------------------


def euler_poisson_residual(path: MeasurePath, pot, fields, spec: ProblemSpec) -> dict:
    """Weak momentum balance tested against space-time fields.

    For each field ``Psi`` evaluates

        sum_i w_i sum_k W_k phi(v_ik) . [Psi(x_i,k+1, t_k+1) - Psi(x_ik, t_k)] / h_k
          - sum_k c_k sum_i w_i grad V(sigma_k)(x_ik) . Psi(x_ik, t_k),

    where the bracket is the mean over the interval of the derivative of
    ``Psi`` along the particle, ``W_k`` the exponential interval weights and
    ``c_k`` the node weights of the linear-in-time quadrature.  Mass
    conservation holds exactly because weights are carried by particles.
    """
    mp = as_measure_path(path)
    pot = _as_mp(pot)
    grid = mp.grid
    X = mp.positions
    w = mp.weights
    v = mp.velocities()
    mom = regularized_momentum(v, spec.p)
    grads = pot.batch_gradient(X, w)  # (M+1, N, d)
    c = grid.node_weights(tail=False)
    values = []
    for fld in fields:
        if not fld.timed:
            raise ValueError("Euler-Poisson test fields need a time profile")
        psi = fld(X, grid.nodes[:, None])  # (M+1, N, d)
        dpsi = np.diff(psi, axis=0) / grid.dt[:, None, None]
        kin = np.einsum("k,n,knd,knd->", grid.interval_weights, w, mom, dpsi)
        potl = np.einsum("k,n,knd,knd->", c, w, grads, psi)
        values.append(kin - potl)
    values = np.array(values)
    return {
        "max": float(np.max(np.abs(values))) if values.size else 0.0,
        "per_field": values,
        "continuity": "exact (Lagrangian particles with fixed weights)",
    }


def observed_order(residuals, steps) -> np.ndarray:
    """Convergence orders ``log(r_j / r_{j+1}) / log(M_{j+1} / M_j)``."""
    r = np.asarray(residuals, dtype=float)
    m = np.asarray(steps, dtype=float)
    return np.log(r[:-1] / r[1:]) / np.log(m[1:] / m[:-1])


# -- terminal behaviour -------------------------------------------------------


def terminal_limit_check(path: MeasurePath, eta: TestField, spec: ProblemSpec, decay: float = 1e-6) -> dict:
    """Decay of ``exp(-delta t) sum_i w_i phi(v_i) . eta(x_i)`` as ``t`` grows.

    Sampled at nodes ``M, M/2, M/4, ...`` (reported in increasing time).  Passes
    when the last sample is at most ``decay`` times the largest one, or all
    samples vanish.  ``C`` is the smallest constant with
    ``|s(t)| <= C exp(-delta t)`` on the samples.
    """
    mp = as_measure_path(path)
    M = mp.grid.steps
    nodes = []
    k = M
    while k >= 1:
        nodes.append(k)
        k //= 2
    nodes = nodes[::-1]
    t = mp.grid.nodes[nodes]
    vals = []
    for k in nodes:
        mom = regularized_momentum(_node_velocity(mp, k), spec.p)
        vals.append(np.exp(-spec.delta * mp.grid.nodes[k]) * float(mp.weights @ np.sum(mom * eta.eta(mp.positions[k]), axis=-1)))
    vals = np.array(vals)
    mag = np.abs(vals)
    peak = float(mag.max())
    C = float(np.max(mag * np.exp(spec.delta * t)))
    ok = peak == 0.0 or mag[-1] <= decay * peak
    return {"times": t, "values": vals, "C": C, "pass": bool(ok)}


# -- superdifferential --------------------------------------------------------


def _richardson(eps, vals):
    """Value at 0 of the quadratic through ``(eps_j, vals_j)``."""
    coef = np.polyfit(np.asarray(eps, dtype=float), np.asarray(vals, dtype=float), len(eps) - 1)
    return float(coef[-1])


def subdifferential_check(
    path: MeasurePath,
    t: float,
    eta: TestField,
    solver: Callable,
    spec: ProblemSpec,
    eps=(1e-1, 1e-2, 1e-3),
) -> dict:
    """One-sided directional derivative of ``U`` at ``sigma(t)`` along ``eta``.

    ``D(eps) = [U((id + eps eta)_# sigma(t)) - U(sigma(t))] / eps`` is
    extrapolated to ``eps = 0`` and compared with
    ``rhs = -sum_i w_i phi(v_i(t)) . eta(x_i(t))``.  The check passes when the
    extrapolated value is at least ``rhs - 1e-2 (1 + |rhs|)``; the
    extrapolation error estimate is the distance to the smallest-``eps``
    quotient.
    """
    mp = as_measure_path(path)
    k = mp.grid.index_of(t)
    sigma = mp.measure_at(k)
    base = solver(sigma, spec).value
    D = []
    for e in eps:
        moved = make_particle_measure(sigma.points + e * eta.eta(sigma.points), sigma.weights)
        D.append((solver(moved, spec).value - base) / e)
    D = np.array(D)
    limit = _richardson(eps, D)
    mom = regularized_momentum(_node_velocity(mp, k), spec.p)
    rhs = -float(sigma.weights @ np.sum(mom * eta.eta(sigma.points), axis=-1))
    tol = 1e-2 * (1.0 + abs(rhs))
    return {
        "eps": np.asarray(eps, dtype=float),
        "quotients": D,
        "limit": limit,
        "extrapolation_error": float(abs(limit - D[-1])),
        "rhs": rhs,
        "pass": bool(limit >= rhs - tol),
        "equality_gap": float(abs(limit - rhs)),
    }


# -- gradient flow and HJE ----------------------------------------------------


def gradient_conjecture_check(path: MeasurePath, grad_u: Callable, spec: ProblemSpec, stride: int = 1) -> dict:
    """``max_{i,k} | phi(v_i(t_k)) + grad u(x_i(t_k)) |`` over interior nodes.

    ``grad_u`` maps a point ``(d,)`` to the gradient of the classical value
    function there; nodes are sampled every ``stride`` steps.
    """
    mp = as_measure_path(path)
    idx = np.arange(1, mp.grid.steps, stride)
    vnode = mp.node_velocities()[idx - 1]  # (K, N, d)
    mom = regularized_momentum(vnode, spec.p)
    g = np.array([[np.asarray(grad_u(x), dtype=float) for x in mp.positions[k]] for k in idx])
    res = np.linalg.norm(mom + g, axis=-1)  # (K, N)
    return {"max": float(res.max()) if res.size else 0.0, "per_node": res.max(axis=1), "nodes": idx}


def hje_residual_measure(mu: ParticleMeasure, U_val: float, grad_u, pot, spec: ProblemSpec) -> float:
    """``delta U + sum_i w_i |grad u(x_i)|^q / q + V(mu)``.

    ``grad_u`` holds the gradients at the atoms, shape ``(N, d)``.
    """
    pot = _as_mp(pot)
    g = np.asarray(grad_u, dtype=float).reshape(mu.points.shape)
    q = spec.q
    return float(spec.delta * U_val + mu.weights @ np.linalg.norm(g, axis=-1) ** q / q + pot.value(mu))


# -- bounds -------------------------------------------------------------------


def bounds_check(U_val: float, mu: ParticleMeasure, pot, spec: ProblemSpec, certificate=None, tol: float = 1e-9) -> dict:
    """Upper bound from staying put and lower bound from the growth certificate.

    ``-(beta + 2^p alpha W_p(mu, rho)^p) / delta <= U <= -V(mu) / delta``.
    The certificate is taken from the argument, the potential, or ``spec``,
    in that order.
    """
    pot = _as_mp(pot)
    cert = certificate or pot.certificate or spec.certificate
    if cert is None:
        raise ValueError("bounds_check needs a growth certificate")
    p, delta = spec.p, spec.delta
    rho = cert.reference_measure(mu.dim)
    lower = -(cert.beta + 2.0**p * cert.alpha * wasserstein_p(mu, rho, p) ** p) / delta
    upper = -pot.value(mu) / delta
    ok = lower - tol <= U_val <= upper + tol
    return {"lower": lower, "value": float(U_val), "upper": upper, "pass": bool(ok)}


def modulus_check(mu1: ParticleMeasure, mu2: ParticleMeasure, solver: Callable, LipV: float, spec: ProblemSpec) -> dict:
    """``|U(mu1) - U(mu2)| <= LipV W_p(mu1, mu2) / delta`` up to ``1e-3 (1 + bound)``."""
    if not solver.measure_potential.is_simple:
        raise ValueError("the modulus check needs a simple potential")
    u1 = solver(mu1, spec).value
    u2 = solver(mu2, spec).value
    gap = abs(u1 - u2)
    bound = LipV * wasserstein_p(mu1, mu2, spec.p) / spec.delta
    ok = gap <= bound + 1e-3 * (1.0 + bound)
    return {"gap": gap, "bound": bound, "ratio": gap / bound if bound > 0 else float("nan"), "pass": bool(ok)}
