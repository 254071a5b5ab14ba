"""Damped Newton minimization of the discrete discounted action.

Unknowns are the particle positions at nodes ``1..M``; node 0 is pinned.  The
objective is

    f(X) = sum_k W_k sum_i w_i L(v_ik) - sum_k c_k V(X_k),

with ``v_k = (X_{k+1} - X_k) / h_k``, ``L(v) = |v|^p / p``, interval weights
``W_k`` and node weights ``c_k`` (including the stay-put tail at ``t_M``).

The discount makes late nodes contribute far below the floating-point
resolution of ``f``, so quasi-Newton updates driven by ``f`` stall there.  The
Newton system is instead assembled exactly, symmetrically rescaled by
``1 / sqrt(w_i c_k)`` and solved as a banded system; the line search accepts a
step either on Armijo decrease or, when ``f`` is flat to rounding, on a
decrease of the rescaled residual.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, solve_banded

EPS_MOMENTUM = 1e-9


@dataclass
class NewtonResult:
    positions: np.ndarray  # (M+1, N, d)
    objective: float
    converged: bool
    iterations: int
    gradient_norm: float
    history: list = field(default_factory=list)
    message: str = ""
    node_residual: np.ndarray = None  # (M,) max rescaled residual at nodes 1..M


class _Action:
    def __init__(self, grid, weights, p, pot, eps=EPS_MOMENTUM):
        self.h = grid.dt
        self.W = grid.interval_weights
        self.c = grid.node_weights(tail=True)
        self.w = np.asarray(weights, dtype=float)
        self.p = float(p)
        self.pot = pot
        self.eps = eps if p < 2 else 0.0

    def _sq(self, V):
        return np.sum(V * V, axis=-1) + self.eps**2

    def evaluate(self, X):
        p, w = self.p, self.w
        V = np.diff(X, axis=0) / self.h[:, None, None]
        sq = self._sq(V)
        kin = sq ** (p / 2) / p  # (M, N)
        phi = V if p == 2 else (sq ** ((p - 2) / 2))[..., None] * V
        f = float(self.W @ (kin @ w) - self.c @ self.pot.batch_value(X, w))
        flux = (self.W / self.h)[:, None, None] * phi * w[None, :, None]
        G = np.zeros_like(X)
        G[1:] += flux
        G[:-1] -= flux
        G -= self.c[:, None, None] * w[None, :, None] * self.pot.batch_gradient(X, w)
        return f, G[1:]

    def residual(self, G):
        return G / (self.c[1:, None, None] * self.w[None, :, None])

    def kinetic_blocks(self, X):
        """``w_i W_k D phi(v_k) / h_k^2``, shape ``(M, N, d, d)``."""
        p = self.p
        V = np.diff(X, axis=0) / self.h[:, None, None]
        d = V.shape[-1]
        eye = np.eye(d)
        if p == 2:
            D = np.broadcast_to(eye, V.shape + (d,))
        else:
            sq = self._sq(V)[..., None, None]
            outer = V[..., :, None] * V[..., None, :]
            with np.errstate(divide="ignore", invalid="ignore"):
                base = np.where(sq > 0, sq ** ((p - 2) / 2), 0.0)
                extra = np.where(sq > 0, (p - 2) * sq ** ((p - 4) / 2), 0.0)
            D = base * eye + extra * outer
        scale = self.w[None, :] * (self.W / self.h**2)[:, None]
        return scale[..., None, None] * D


class _Banded:
    """Symmetric block-tridiagonal system in node-major ordering."""

    def __init__(self, M, N, d):
        self.M, self.N, self.d = M, N, d
        self.nd = N * d
        self.bw = 2 * self.nd - 1
        kk, i, a, b = np.meshgrid(np.arange(M), np.arange(N), np.arange(d), np.arange(d), indexing="ij")
        self.kin_row = kk * self.nd + i * d + a
        self.kin_col = kk * self.nd + i * d + b
        kk, r, s = np.meshgrid(np.arange(M), np.arange(self.nd), np.arange(self.nd), indexing="ij")
        self.pot_row = kk * self.nd + r
        self.pot_col = kk * self.nd + s

    def assemble(self, Q, H_pot, scale):
        """``Q``: (M, N, d, d) interval blocks; ``H_pot``: (M, nd, nd) node blocks
        already multiplied by ``-c_k``; ``scale``: (M*nd,) symmetric scaling."""
        M, nd, bw = self.M, self.nd, self.bw
        ab = np.zeros((2 * bw + 1, M * nd))

        def put(rows, cols, vals):
            rows = rows.ravel()
            cols = cols.ravel()
            np.add.at(ab, (bw + rows - cols, cols), vals.ravel() * scale[rows] * scale[cols])

        # interval k joins unknown nodes k (if k >= 1) and k+1
        diag = Q.copy()
        diag[:-1] += Q[1:]
        put(self.kin_row, self.kin_col, diag)
        if M > 1:
            off = -Q[1:]
            r = self.kin_row[:-1]
            c = self.kin_col[:-1]
            put(r, c + nd, off)
            put(r + nd, c, off)
        if H_pot is not None:
            put(self.pot_row, self.pot_col, H_pot)
        return ab


def minimize_action(x0, weights, grid, p, pot, init=None, gtol=1e-9, max_iter=100):
    """Minimize the discrete action over positions at nodes ``1..M``.

    Parameters
    ----------
    x0 : ndarray, shape (N, d)
    weights : ndarray, shape (N,)
    grid : TimeGrid
    p : float
    pot : MeasurePotential
    init : ndarray, shape (M+1, N, d), optional
        Starting path; defaults to the constant path at ``x0``.
    gtol : float
        Tolerance on the max-norm of the gradient rescaled by ``w_i c_k``.
    """
    x0 = np.asarray(x0, dtype=float)
    N, d = x0.shape
    M = grid.steps
    act = _Action(grid, weights, p, pot)
    if init is None:
        X = np.broadcast_to(x0, (M + 1, N, d)).copy()
    else:
        X = np.array(init, dtype=float)
        X[0] = x0
    band = _Banded(M, N, d)
    scale = (1.0 / np.sqrt(act.c[1:, None] * act.w[None, :])).repeat(d, axis=1).ravel()
    Q2 = act.w[None, :, None, None] * (act.W / act.h**2)[:, None, None, None] * np.eye(d)
    Q2 = np.broadcast_to(Q2, (M, N, d, d))
    ab_lm = band.assemble(Q2, None, scale)

    f, G = act.evaluate(X)
    history = [f]
    lam = 0.0
    it = 0
    message = "maximum iterations reached"
    converged = False
    while True:
        R = act.residual(G)
        rmax = float(np.max(np.abs(R))) if R.size else 0.0
        if rmax <= gtol:
            converged = True
            message = "converged"
            break
        if it >= max_iter:
            break
        it += 1
        Q = act.kinetic_blocks(X)
        H_pot = None
        if not _is_zero(pot):
            H_pot = -act.c[1:, None, None] * pot.batch_hessian(X[1:], act.w)
        ab = band.assemble(Q, H_pot, scale)
        rhs = -(G.ravel() * scale)
        rnorm = float(np.linalg.norm(R))
        accepted = False
        for _ in range(30):
            try:
                y = solve_banded((band.bw, band.bw), ab + lam * ab_lm, rhs, check_finite=False)
                step = (y * scale).reshape(M, N, d)
                ok = np.all(np.isfinite(step))
            except (LinAlgError, ValueError):
                ok = False
            if ok:
                gd = float(G.ravel() @ step.ravel())
                ok = gd < 0
            if ok:
                alpha = 1.0
                while alpha > 1e-10:
                    Xn = X.copy()
                    Xn[1:] += alpha * step
                    fn, Gn = act.evaluate(Xn)
                    noise = 1e-12 * (1.0 + abs(f))
                    if np.isfinite(fn) and np.all(np.isfinite(Gn)) and fn <= f + noise:
                        # a decrease above rounding level is trusted; otherwise
                        # the step must reduce the rescaled residual
                        if fn <= f + 1e-4 * alpha * gd and f - fn > noise:
                            accepted = True
                        else:
                            rn = float(np.linalg.norm(act.residual(Gn)))
                            accepted = rn <= (1.0 - 1e-4 * alpha) * rnorm
                    if accepted:
                        break
                    alpha *= 0.5
            if accepted:
                break
            lam = 1e-6 if lam == 0.0 else 10.0 * lam
            if lam > 1e12:
                break
        if not accepted:
            message = "line search failed"
            break
        X, f, G = Xn, fn, Gn
        history.append(f)
        lam = 0.0 if lam <= 1e-6 else lam / 10.0
    R = np.abs(act.residual(G)).reshape(M, -1).max(axis=1)
    gnorm = float(R.max()) if R.size else 0.0
    return NewtonResult(X, f, converged, it, gnorm, history, message, R)


def minimize_with_tail_repair(x0, weights, grid, p, pot, init=None, gtol=1e-9, max_iter=100, rounds=4):
    """:func:`minimize_action` followed by re-solves of the unconverged tail.

    A Newton step accepted for its decrease of ``f`` may still spoil nodes
    whose contribution to ``f`` is below rounding.  By dynamic programming the
    path after node ``s`` solves the same problem started at ``X[s]`` on the
    shifted grid, where those nodes weigh ``exp(delta t_s)`` times more; the
    tail is re-solved there, spliced in, and the full problem polished.
    """
    r = minimize_action(x0, weights, grid, p, pot, init=init, gtol=gtol, max_iter=max_iter)
    spent = r.iterations
    for _ in range(rounds):
        if r.converged:
            break
        bad = np.flatnonzero(r.node_residual > gtol)
        s = int(bad[0])  # node index of the last good node (residual index k is node k+1)
        if s == 0:
            break
        X = r.positions.copy()
        sub = minimize_with_tail_repair(
            X[s], weights, grid.shifted(s), p, pot, init=X[s:], gtol=gtol, max_iter=max_iter, rounds=rounds - 1
        )
        spent += sub.iterations
        X[s:] = sub.positions
        r2 = minimize_action(x0, weights, grid, p, pot, init=X, gtol=gtol, max_iter=max_iter)
        spent += r2.iterations
        if _better(r2, r) or r2.converged:
            r = r2
        else:
            break
    r.iterations = spent
    return r


def _is_zero(pot) -> bool:
    return pot.simple is not None and pot.simple.name == "zero"


def solve_from_starts(x0, weights, grid, p, pot, starts, gtol=1e-9, max_iter=100, stages=4):
    """Run :func:`minimize_action` from each start and keep the best result.

    ``starts`` holds ``(M+1, N, d)`` arrays or ``None`` for the constant path.
    The kinetic Hessian vanishes at zero velocity when ``p > 2`` (and blows up
    when ``p < 2``), so the constant start is first solved with ``p = 2`` and
    then carried to the target exponent through ``stages`` intermediate
    exponents.  A converged result beats an unconverged one; ties go to the
    lower objective.
    """
    best = None
    spent = 0
    for init in starts:
        X = init
        if init is None and p != 2:
            for pk in np.linspace(2.0, p, stages + 1)[:-1]:
                r = minimize_action(x0, weights, grid, pk, pot, init=X, gtol=max(gtol, 1e-6), max_iter=max(max_iter // 4, 5))
                spent += r.iterations
                X = r.positions
        r = minimize_with_tail_repair(x0, weights, grid, p, pot, init=X, gtol=gtol, max_iter=max_iter)
        spent += r.iterations
        if best is None or _better(r, best):
            best = r
    best.iterations = spent
    return best


def _better(a, b):
    if a.converged != b.converged:
        return a.converged
    if a.converged:
        return a.objective < b.objective
    return a.gradient_norm < b.gradient_norm
