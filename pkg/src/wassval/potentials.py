"""Pointwise potentials, potentials on measures, and problem parameters.

Pointwise potentials act on arrays of shape ``(..., d)`` and must broadcast
over the leading axes; the solvers evaluate them on every particle at every
time node in one call.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from wassval.measures import ParticleMeasure, dirac

__all__ = [
    "Potential",
    "MeasurePotential",
    "GrowthCertificate",
    "ProblemSpec",
    "CertificateError",
    "delta_validity",
    "zero_potential",
    "linear_potential",
    "power_potential",
    "polynomial_potential",
    "softabs_potential",
    "lorentzian_potential",
    "measure_potential_from_config",
    "potential_from_config",
    "simple_potential_lift",
    "squared_mean_potential",
    "young_certificate",
]


class CertificateError(ValueError):
    """Discount too small for the declared growth certificate."""


def _fd_hessian(grad, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    cols = []
    for a in range(d):
        step = h * (1.0 + np.abs(x[..., a]))
        xp = x.copy()
        xm = x.copy()
        xp[..., a] += step
        xm[..., a] -= step
        cols.append((grad(xp) - grad(xm)) / (2.0 * step)[..., None])
    hess = np.stack(cols, axis=-1)
    return 0.5 * (hess + np.swapaxes(hess, -1, -2))


@dataclass(frozen=True, eq=False)
class Potential:
    """A C^1 potential ``V`` on R^d with its gradient.

    Attributes
    ----------
    evaluate, gradient : callable
        Vectorized over leading axes: ``(..., d) -> (...)`` and
        ``(..., d) -> (..., d)``.
    hessian : callable, optional
        ``(..., d) -> (..., d, d)``; central differences of ``gradient`` are
        used when absent.
    lipschitz_bound : float, optional
    growth : tuple, optional
        ``(a, b, r)`` with ``|V(x)| <= a |x|^r + b``.
    flow : callable, optional
        Known minimizing flow ``(x, t) -> Psi(x, t)``; used as a warm start.
    bounded_above : bool
        ``V <= 0`` everywhere, so the value cannot diverge whatever the growth.
    """

    evaluate: Callable
    gradient: Callable
    dim: int
    hessian: Optional[Callable] = None
    lipschitz_bound: Optional[float] = None
    growth: Optional[tuple] = None
    flow: Optional[Callable] = None
    name: str = "custom"
    config: Optional[dict] = None
    bounded_above: bool = False

    def __call__(self, x):
        return self.evaluate(np.asarray(x, dtype=float))

    def grad(self, x):
        return self.gradient(np.asarray(x, dtype=float))

    def hess(self, x):
        x = np.asarray(x, dtype=float)
        if self.hessian is not None:
            return self.hessian(x)
        return _fd_hessian(self.gradient, x)

    def growth_below_p(self, p: float) -> bool:
        return self.growth is not None and self.growth[2] < p


def zero_potential(dim: int) -> Potential:
    return Potential(
        evaluate=lambda x: np.zeros(x.shape[:-1]),
        gradient=lambda x: np.zeros_like(x),
        hessian=lambda x: np.zeros(x.shape + (x.shape[-1],)),
        dim=dim,
        lipschitz_bound=0.0,
        growth=(0.0, 0.0, 1.0),
        bounded_above=True,
        name="zero",
        config={"kind": "zero"},
    )


def linear_potential(w, c: float = 0.0, delta: Optional[float] = None, p: Optional[float] = None) -> Potential:
    """``V(x) = w.x + c``.

    When ``delta`` and ``p`` are given, the straight-line minimizing flow is
    registered as a warm start.
    """
    w = np.asarray(w, dtype=float).reshape(-1)
    flow = None
    if delta is not None and p is not None:
        from wassval.classical import closed_form_linear

        flow = closed_form_linear(w, c, delta, p)[1]
    norm_w = float(np.linalg.norm(w))
    return Potential(
        evaluate=lambda x: x @ w + c,
        gradient=lambda x: np.broadcast_to(w, x.shape).copy(),
        hessian=lambda x: np.zeros(x.shape + (x.shape[-1],)),
        dim=w.size,
        lipschitz_bound=norm_w,
        growth=(norm_w, abs(c), 1.0),
        flow=flow,
        name="linear",
        config={"kind": "linear", "w": w.tolist(), "c": float(c)},
    )


def power_potential(p: float, dim: int, sign: float = -1.0, delta: Optional[float] = None) -> Potential:
    """``V(x) = sign * |x|^p / p``.

    For ``sign = -1`` and a given ``delta`` the exponential contraction flow is
    registered as a warm start.
    """
    flow = None
    if sign == -1.0 and delta is not None:
        from wassval.classical import closed_form_power

        flow = closed_form_power(p, delta)[2]

    def value(x):
        return sign * np.linalg.norm(x, axis=-1) ** p / p

    def gradient(x):
        r = np.linalg.norm(x, axis=-1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(r > 0, r ** (p - 2), 0.0)
        return sign * scale * x

    def hessian(x):
        r = np.linalg.norm(x, axis=-1)[..., None, None]
        eye = np.eye(x.shape[-1])
        outer = x[..., :, None] * x[..., None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            base = np.where(r > 0, r ** (p - 2), 1.0 if p == 2 else 0.0)
            extra = np.where(r > 0, (p - 2) * r ** (p - 4), 0.0)
        return sign * (base * eye + extra * outer)

    return Potential(
        evaluate=value,
        gradient=gradient,
        hessian=hessian,
        dim=dim,
        growth=(1.0 / p, 0.0, float(p)),
        flow=flow,
        bounded_above=sign <= 0,
        name="power",
        config={"kind": "power", "sign": float(sign)},
    )


def polynomial_potential(terms, dim: int) -> Potential:
    """Polynomial ``sum_j c_j prod_a x_a^{e_ja}``.

    ``terms`` is a list of ``(coefficient, exponents)`` pairs with one
    nonnegative integer exponent per coordinate.
    """
    coef = np.array([float(c) for c, _ in terms])
    expo = np.array([list(e) for _, e in terms], dtype=int).reshape(len(terms), dim)
    if np.any(expo < 0):
        raise ValueError("polynomial exponents must be nonnegative")

    def monomials(x, e):
        # x: (..., d), e: (J, d) -> (..., J)
        return np.prod(x[..., None, :] ** e, axis=-1)

    def value(x):
        return monomials(x, expo) @ coef

    def gradient(x):
        out = []
        for a in range(dim):
            e = expo.copy()
            c = coef * e[:, a]
            e[:, a] = np.maximum(e[:, a] - 1, 0)
            out.append(monomials(x, e) @ c)
        return np.stack(out, axis=-1)

    def hessian(x):
        rows = []
        for a in range(dim):
            row = []
            for b in range(dim):
                e = expo.copy()
                c = coef * e[:, a]
                e[:, a] = np.maximum(e[:, a] - 1, 0)
                c = c * e[:, b]
                e[:, b] = np.maximum(e[:, b] - 1, 0)
                row.append(monomials(x, e) @ c)
            rows.append(np.stack(row, axis=-1))
        return np.stack(rows, axis=-2)

    degree = int(expo.sum(axis=1).max()) if len(terms) else 0
    lip = None
    if degree <= 1:
        lin = np.zeros(dim)
        for c, e in zip(coef, expo):
            if e.sum() == 1:
                lin[int(np.argmax(e))] += c
        lip = float(np.linalg.norm(lin))
    growth = (float(np.abs(coef).sum()), float(np.abs(coef).sum()), float(max(degree, 1)))
    return Potential(
        evaluate=value,
        gradient=gradient,
        hessian=hessian,
        dim=dim,
        lipschitz_bound=lip,
        growth=growth,
        name="polynomial",
        config={"kind": "polynomial", "coefficients": [[float(c), list(map(int, e))] for c, e in zip(coef, expo)]},
    )


def softabs_potential(w, c, centers, amplitudes, scales) -> Potential:
    """Concave Lipschitz potential with linear growth.

    ``V(x) = w.x + c - sum_j a_j sqrt(s_j^2 + |x - z_j|^2)`` with ``a_j >= 0``.
    Concavity of ``V`` makes the action convex in the path.
    """
    w = np.asarray(w, dtype=float).reshape(-1)
    z = np.asarray(centers, dtype=float).reshape(-1, w.size)
    amp = np.asarray(amplitudes, dtype=float).reshape(-1)
    s = np.asarray(scales, dtype=float).reshape(-1)
    if np.any(amp < 0) or np.any(s <= 0):
        raise ValueError("softabs needs nonnegative amplitudes and positive scales")

    def parts(x):
        diff = x[..., None, :] - z  # (..., J, d)
        root = np.sqrt(s**2 + np.sum(diff**2, axis=-1))  # (..., J)
        return diff, root

    def value(x):
        _, root = parts(x)
        return x @ w + c - root @ amp

    def gradient(x):
        diff, root = parts(x)
        return w - np.sum((amp / root)[..., None] * diff, axis=-2)

    def hessian(x):
        diff, root = parts(x)
        eye = np.eye(w.size)
        outer = diff[..., :, None] * diff[..., None, :]
        terms = (amp / root)[..., None, None] * (eye - outer / (root**2)[..., None, None])
        return -np.sum(terms, axis=-3)

    lip = float(np.linalg.norm(w) + amp.sum())
    b = abs(c) + float(np.sum(amp * (s + np.linalg.norm(z, axis=1))))
    return Potential(
        evaluate=value,
        gradient=gradient,
        hessian=hessian,
        dim=w.size,
        lipschitz_bound=lip,
        growth=(lip, b, 1.0),
        name="softabs",
        config={
            "kind": "softabs",
            "w": w.tolist(),
            "c": float(c),
            "centers": z.tolist(),
            "amplitudes": amp.tolist(),
            "scales": s.tolist(),
        },
    )


def lorentzian_potential(center, amplitude: float = 1.0, scale: float = 1.0) -> Potential:
    """Bounded bump ``V(x) = A / (1 + |x - z|^2 / s^2)`` with ``0 < V <= A``."""
    z = np.asarray(center, dtype=float).reshape(-1)
    if not scale > 0:
        raise ValueError("scale must be positive")
    A, s2 = float(amplitude), float(scale) ** 2

    def value(x):
        return A / (1.0 + np.sum((x - z) ** 2, axis=-1) / s2)

    def gradient(x):
        diff = x - z
        den = 1.0 + np.sum(diff**2, axis=-1, keepdims=True) / s2
        return -2.0 * A * diff / (s2 * den**2)

    def hessian(x):
        diff = x - z
        den = (1.0 + np.sum(diff**2, axis=-1) / s2)[..., None, None]
        outer = diff[..., :, None] * diff[..., None, :]
        return -2.0 * A / s2 * (np.eye(z.size) / den**2 - 4.0 * outer / (s2 * den**3))

    # max |grad V| = (3 sqrt(3) / 8) A / s, attained at |x - z| = s / sqrt(3)
    lip = 3.0 * np.sqrt(3.0) / 8.0 * abs(A) / float(scale)
    return Potential(
        evaluate=value,
        gradient=gradient,
        hessian=hessian,
        dim=z.size,
        lipschitz_bound=lip,
        growth=(0.0, abs(A), 1.0),
        bounded_above=A <= 0,
        name="lorentzian",
        config={"kind": "lorentzian", "center": z.tolist(), "amplitude": A, "scale": float(scale)},
    )


def potential_from_config(cfg: dict, dim: int, p: float = 2.0, delta: Optional[float] = None) -> Potential:
    """Build a potential from its tagged-union description.

    Recognized kinds: ``zero``, ``linear`` (w, c), ``power`` (sign),
    ``polynomial`` (coefficients), ``softabs`` (w, c, centers, amplitudes,
    scales), ``lorentzian`` (center, amplitude, scale).
    """
    if not isinstance(cfg, dict) or "kind" not in cfg:
        raise KeyError("potential config needs a 'kind' key")
    kind = cfg["kind"]
    if kind == "zero":
        return zero_potential(dim)
    if kind == "linear":
        w = np.asarray(cfg["w"], dtype=float)
        if w.size != dim:
            raise ValueError(f"linear potential has {w.size} components, measure dimension is {dim}")
        return linear_potential(w, float(cfg.get("c", 0.0)), delta=delta, p=p)
    if kind == "power":
        return power_potential(p, dim, float(cfg.get("sign", -1.0)), delta=delta)
    if kind == "polynomial":
        return polynomial_potential(cfg["coefficients"], dim)
    if kind == "softabs":
        return softabs_potential(cfg["w"], cfg.get("c", 0.0), cfg["centers"], cfg["amplitudes"], cfg["scales"])
    if kind == "lorentzian":
        return lorentzian_potential(cfg["center"], cfg.get("amplitude", 1.0), cfg.get("scale", 1.0))
    raise ValueError(f"unknown potential kind {kind!r}")


@dataclass(frozen=True)
class GrowthCertificate:
    """Upper growth bound ``V(mu) <= alpha W_p(mu, reference)^p + beta``.

    ``reference`` defaults to the Dirac mass at the origin.
    """

    alpha: float
    beta: float
    reference: Optional[ParticleMeasure] = None

    def reference_measure(self, dim: int) -> ParticleMeasure:
        return self.reference if self.reference is not None else dirac(np.zeros(dim))


def young_certificate(w, c: float, p: float, alpha: float) -> GrowthCertificate:
    """Certificate for ``V(x) = w.x + c`` from Young's inequality.

    ``|w| r <= alpha r^p + |w| (|w| / (p alpha))^{1/(p-1)} / q`` for all r >= 0.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    norm_w = float(np.linalg.norm(w))
    q = p / (p - 1.0)
    beta = norm_w * (norm_w / (p * alpha)) ** (1.0 / (p - 1.0)) / q + abs(c)
    return GrowthCertificate(alpha, beta)


def delta_validity(p: float, alpha: float, delta: float) -> dict:
    """Check ``p (2p/delta)^p alpha < 1``.

    Returns the left-hand side ``m``, the margin ``1 - m`` and the verdict.
    """
    if p <= 1 or delta <= 0:
        raise ValueError("need p > 1 and delta > 0")
    m = p * (2.0 * p / delta) ** p * alpha
    return {"m": m, "margin": 1.0 - m, "pass": bool(m < 1.0)}


@dataclass(frozen=True)
class ProblemSpec:
    """Exponent, discount, truncation and solver tolerances.

    The integral over ``[0, inf)`` is truncated at ``horizon`` (default
    ``40 / delta``) and completed by staying put afterwards.
    """

    p: float = 2.0
    delta: float = 1.0
    horizon: Optional[float] = None
    steps: int = 400
    gtol: float = 1e-9
    max_iter: int = 100
    certificate: Optional[GrowthCertificate] = None

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError(f"p must exceed 1, got {self.p}")
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if self.horizon is None:
            object.__setattr__(self, "horizon", 40.0 / self.delta)
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if int(self.steps) < 1:
            raise ValueError("steps must be >= 1")
        object.__setattr__(self, "steps", int(self.steps))

    @property
    def q(self) -> float:
        return self.p / (self.p - 1.0)

    def grid(self):
        from wassval.paths import TimeGrid

        return TimeGrid.uniform(self.horizon, self.steps, self.delta)

    def with_(self, **changes) -> "ProblemSpec":
        return replace(self, **changes)

    def validity(self) -> Optional[dict]:
        if self.certificate is None:
            return None
        return delta_validity(self.p, self.certificate.alpha, self.delta)

    def require_valid(self):
        check = self.validity()
        if check is not None and not check["pass"]:
            raise CertificateError(
                f"p(2p/delta)^p alpha = {check['m']:.6g} >= 1: the value may be -inf for "
                f"this discount; increase delta or tighten the certificate"
            )


@dataclass(frozen=True, eq=False)
class MeasurePotential:
    """Potential on particle measures.

    ``evaluate(points, weights)`` returns a float and ``gradient(points,
    weights)`` returns the ``(N, d)`` array of Wasserstein gradients at the
    atoms (per unit mass, so the Euclidean gradient with respect to atom ``i``
    is ``weights[i] * gradient[i]``).  Optional batched forms accept points of
    shape ``(K, N, d)``.
    """

    evaluate: Callable
    gradient: Callable
    batch_evaluate: Optional[Callable] = None
    batch_gradient_fn: Optional[Callable] = None
    certificate: Optional[GrowthCertificate] = None
    simple: Optional[Potential] = None
    name: str = "custom"
    meta: dict = field(default_factory=dict)

    @property
    def is_simple(self) -> bool:
        return self.simple is not None

    def value(self, mu: ParticleMeasure) -> float:
        return float(self.evaluate(mu.points, mu.weights))

    def particle_gradient(self, mu: ParticleMeasure, i: int) -> np.ndarray:
        return np.asarray(self.gradient(mu.points, mu.weights))[i]

    def batch_value(self, X, w) -> np.ndarray:
        if self.batch_evaluate is not None:
            return np.asarray(self.batch_evaluate(X, w), dtype=float)
        return np.array([self.evaluate(x, w) for x in X], dtype=float)

    def batch_gradient(self, X, w) -> np.ndarray:
        if self.batch_gradient_fn is not None:
            return np.asarray(self.batch_gradient_fn(X, w), dtype=float)
        return np.stack([np.asarray(self.gradient(x, w), dtype=float) for x in X])

    def batch_hessian(self, X, w) -> np.ndarray:
        """Euclidean Hessian of ``V`` in all atom coordinates at each node.

        Returns shape ``(K, N*d, N*d)``.
        """
        K, N, d = X.shape
        if self.simple is not None:
            blocks = self.simple.hess(X) * w[None, :, None, None]  # (K, N, d, d)
            out = np.zeros((K, N, d, N, d))
            idx = np.arange(N)
            out[:, idx, :, idx, :] = np.transpose(blocks, (1, 0, 2, 3))
            return out.reshape(K, N * d, N * d)
        cols = []
        for i in range(N):
            for a in range(d):
                step = 1e-5 * (1.0 + np.abs(X[:, i, a]))
                Xp = X.copy()
                Xm = X.copy()
                Xp[:, i, a] += step
                Xm[:, i, a] -= step
                diff = self.batch_gradient(Xp, w) - self.batch_gradient(Xm, w)
                cols.append((diff * w[None, :, None]).reshape(K, N * d) / (2.0 * step)[:, None])
        hess = np.stack(cols, axis=-1)
        return 0.5 * (hess + np.swapaxes(hess, -1, -2))


def simple_potential_lift(V: Potential, certificate: Optional[GrowthCertificate] = None) -> MeasurePotential:
    """``V(mu) = sum_i w_i V(x_i)`` with gradient ``grad V(x_i)`` at atom i."""
    return MeasurePotential(
        evaluate=lambda x, w: float(w @ V.evaluate(x)),
        gradient=lambda x, w: V.gradient(x),
        batch_evaluate=lambda X, w: V.evaluate(X) @ w,
        batch_gradient_fn=lambda X, w: V.gradient(X),
        certificate=certificate,
        simple=V,
        name=f"simple[{V.name}]",
    )


def squared_mean_potential(V: Potential, bound: Optional[float] = None) -> MeasurePotential:
    """Non-simple potential ``V(mu) = (1/2) (sum_i w_i V(x_i))^2``.

    With ``|V| <= bound`` the certificate ``alpha = 0, beta = bound^2 / 2``
    is attached.
    """
    cert = GrowthCertificate(0.0, 0.5 * bound**2) if bound is not None else None

    def batch_value(X, w):
        return 0.5 * (V.evaluate(X) @ w) ** 2

    def batch_gradient(X, w):
        m = V.evaluate(X) @ w
        return m[..., None, None] * V.gradient(X)

    return MeasurePotential(
        evaluate=lambda x, w: float(batch_value(x, w)),
        gradient=lambda x, w: batch_gradient(x, w),
        batch_evaluate=batch_value,
        batch_gradient_fn=batch_gradient,
        certificate=cert,
        name=f"squared_mean[{V.name}]",
    )


def warn_growth(V: Potential, p: float):
    if not V.growth_below_p(p):
        warnings.warn(
            f"potential {V.name!r} is not certified to grow slower than |x|^p; "
            "the decoupled value carries no guarantee",
            stacklevel=3,
        )


def measure_potential_from_config(
    cfg: dict, dim: int, p: float = 2.0, delta: Optional[float] = None, certificate: Optional[GrowthCertificate] = None
) -> MeasurePotential:
    """Simple lift of any pointwise kind, or ``{"kind": "squared_mean", "inner": {...}, "bound": B}``."""
    if isinstance(cfg, dict) and cfg.get("kind") == "squared_mean":
        inner = potential_from_config(cfg["inner"], dim, p, delta)
        bound = cfg.get("bound")
        if bound is None and inner.growth is not None and inner.growth[0] == 0:
            bound = inner.growth[1]
        pot = squared_mean_potential(inner, bound)
        if certificate is not None:
            pot = replace(pot, certificate=certificate)
        return pot
    return simple_potential_lift(potential_from_config(cfg, dim, p, delta), certificate)
