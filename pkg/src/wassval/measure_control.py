"""Value of the discounted control problem over particle measures.

``U(mu) = inf int_0^inf e^{-delta t} (||sigma'||^p / p - V(sigma)) dt`` over
measure paths starting at ``mu``.  For a simple potential
``V(mu) = int V dmu`` the problem decouples into one classical problem per
atom (:func:`solve_simple_potential`); :func:`solve_direct` optimizes all
particle trajectories jointly and handles general potentials.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from wassval._newton import solve_from_starts
from wassval.classical import solve_classical
from wassval.measures import ParticleMeasure
from wassval.paths import MeasurePath, TimeGrid, discounted_action
from wassval.potentials import (
    CertificateError,
    MeasurePotential,
    Potential,
    ProblemSpec,
    delta_validity,
    simple_potential_lift,
)

__all__ = [
    "ValueReport",
    "solve_simple_potential",
    "solve_direct",
    "pushforward_path",
    "ValueSolver",
    "delta_validity",
    "simple_potential_lift",
]


@dataclass
class ValueReport:
    """Value of ``U(mu)`` with the path that realizes it.

    Attributes
    ----------
    value : float
        Equal to ``discounted_action(path)``.
    path : MeasurePath
    per_particle : ndarray, optional
        Classical values ``u(x_i)`` (decoupled solver only).
    stats : dict
        Solver name, convergence flag, iterations, rescaled gradient norm.
    flags : list of str
        Caveats such as a potential outside the certified growth class.
    """

    value: float
    path: MeasurePath
    per_particle: Optional[np.ndarray] = None
    stats: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return bool(self.stats.get("converged", False))


def _gate(spec: ProblemSpec, certificate):
    spec.require_valid()
    if certificate is not None:
        check = delta_validity(spec.p, certificate.alpha, spec.delta)
        if not check["pass"]:
            raise CertificateError(
                f"p(2p/delta)^p alpha = {check['m']:.6g} >= 1 for the potential's certificate; increase delta"
            )


def _crossing_flags(path: MeasurePath, stats: dict) -> list:
    crossings = path.crossing_intervals()
    stats["crossings"] = len(crossings)
    if not crossings:
        return []
    first = crossings[0]
    return [
        f"{len(crossings)} particle crossings (first on interval {first[0]}, particles {first[1]} and {first[2]}): "
        "the Lagrangian speed only bounds the metric derivative there"
    ]


def _growth_flags(V: Potential, p: float) -> list:
    if V.growth_below_p(p):
        return []
    r = "unknown" if V.growth is None else f"{V.growth[2]:g}"
    return [f"growth exponent {r} is not below p = {p:g}: decoupling is not certified"]


def solve_simple_potential(mu: ParticleMeasure, V: Potential, spec: ProblemSpec) -> ValueReport:
    """``U(mu) = sum_i w_i u(x_i)`` from one classical solve per atom.

    The path is the union of the per-atom optimal trajectories, the discrete
    pushforward of ``mu`` under the optimal flow.
    """
    _gate(spec, spec.certificate)
    if mu.dim != V.dim:
        raise ValueError(f"measure dimension {mu.dim} differs from potential dimension {V.dim}")
    sols = []
    for i, x in enumerate(mu.points):
        try:
            sols.append(solve_classical(x, V, spec))
        except Exception as exc:
            raise RuntimeError(f"classical solve failed at atom {i}: {exc}") from exc
    per = np.array([s.value for s in sols])
    path = MeasurePath.from_trajectories(mu, [s.trajectory for s in sols])
    failed = [i for i, s in enumerate(sols) if not s.converged]
    stats = {
        "solver": "decoupled",
        "converged": not failed,
        "iterations": int(sum(s.iterations for s in sols)),
        "gradient_norm": float(max(s.gradient_norm for s in sols)),
        "unconverged_atoms": failed,
    }
    flags = _growth_flags(V, spec.p) + _crossing_flags(path, stats)
    return ValueReport(float(mu.weights @ per), path, per, stats, flags)


def solve_direct(
    mu: ParticleMeasure,
    pot: Union[MeasurePotential, Potential],
    spec: ProblemSpec,
    warm_start: str = "all",
) -> ValueReport:
    """Joint optimization of all particle trajectories.

    Parameters
    ----------
    warm_start : {"all", "constant", "decoupled"}
        ``"decoupled"`` starts from :func:`solve_simple_potential` (simple
        potentials only); ``"all"`` tries every applicable start and keeps the
        best.
    """
    if isinstance(pot, Potential):
        pot = simple_potential_lift(pot, spec.certificate)
    _gate(spec, pot.certificate)
    grid = spec.grid()
    starts = []
    if warm_start in ("all", "constant"):
        starts.append(None)
    if warm_start in ("all", "decoupled") and pot.is_simple:
        starts.append(solve_simple_potential(mu, pot.simple, spec).path.positions)
    if not starts:
        raise ValueError(f"warm start {warm_start!r} is not available for this potential")
    res = solve_from_starts(mu.points, mu.weights, grid, spec.p, pot, starts, gtol=spec.gtol, max_iter=spec.max_iter)
    path = MeasurePath(mu, grid, res.positions)
    value = discounted_action(path, pot, spec)
    stats = {
        "solver": "direct",
        "converged": res.converged,
        "iterations": res.iterations,
        "gradient_norm": res.gradient_norm,
        "message": res.message,
        "history": res.history,
    }
    flags = _growth_flags(pot.simple, spec.p) if pot.is_simple else []
    flags += _crossing_flags(path, stats)
    return ValueReport(value, path, None, stats, flags)


def pushforward_path(mu: ParticleMeasure, Psi: Callable, grid: TimeGrid) -> MeasurePath:
    """Measure path ``t -> Psi(., t)_# mu`` sampled on ``grid``."""
    X = np.stack([np.asarray(Psi(mu.points, t), dtype=float).reshape(mu.points.shape) for t in grid.nodes])
    return MeasurePath(mu, grid, X)


@dataclass(frozen=True)
class ValueSolver:
    """Handle that evaluates ``U`` for one potential at arbitrary measures.

    ``method`` is ``"decoupled"`` (simple potentials only), ``"direct"``, or
    ``"auto"`` which picks the decoupled solver whenever it applies.
    """

    pot: Union[MeasurePotential, Potential]
    method: str = "auto"

    @property
    def measure_potential(self) -> MeasurePotential:
        if isinstance(self.pot, Potential):
            return simple_potential_lift(self.pot)
        return self.pot

    def __call__(self, mu: ParticleMeasure, spec: ProblemSpec) -> ValueReport:
        mp = self.measure_potential
        method = self.method
        if method == "auto":
            method = "decoupled" if mp.is_simple else "direct"
        if method == "decoupled":
            if not mp.is_simple:
                raise ValueError("the decoupled solver needs a simple potential")
            return solve_simple_potential(mu, mp.simple, spec)
        if method == "direct":
            return solve_direct(mu, mp, spec)
        raise ValueError(f"unknown solver method {self.method!r}")

    def value(self, mu: ParticleMeasure, spec: ProblemSpec) -> float:
        return self(mu, spec).value
