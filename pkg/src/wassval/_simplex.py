"""Transportation simplex on the bipartite transport polytope.

The basis is a spanning tree on ``m + n`` nodes (rows ``0..m-1``, columns
``m..m+n-1``) with exactly ``m + n - 1`` basic cells.  Entering cells are
chosen by Dantzig's rule; during a run of degenerate pivots the solver
switches to Bland's smallest-index rule for both the entering and the leaving
cell, which rules out cycling.  All choices are deterministic.
"""

from __future__ import annotations

from collections import deque

import numpy as np


def _northwest_corner(a, b):
    m, n = len(a), len(b)
    ra, rb = a.astype(float).copy(), b.astype(float).copy()
    basis = []
    flow = {}
    i = j = 0
    while True:
        x = max(min(ra[i], rb[j]), 0.0)
        basis.append((i, j))
        flow[(i, j)] = x
        ra[i] -= x
        rb[j] -= x
        if i == m - 1 and j == n - 1:
            break
        if i == m - 1:
            j += 1
        elif j == n - 1:
            i += 1
        elif ra[i] <= rb[j]:
            i += 1
        else:
            j += 1
    return basis, flow


def _potentials(basis, cost, m, n):
    adj = [[] for _ in range(m + n)]
    for i, j in basis:
        adj[i].append(m + j)
        adj[m + j].append(i)
    u = np.zeros(m)
    v = np.zeros(n)
    seen = np.zeros(m + n, dtype=bool)
    seen[0] = True
    queue = deque([0])
    while queue:
        node = queue.popleft()
        for nb in adj[node]:
            if seen[nb]:
                continue
            seen[nb] = True
            if node < m:
                v[nb - m] = cost[node, nb - m] - u[node]
            else:
                u[nb] = cost[nb, node - m] - v[node - m]
            queue.append(nb)
    return u, v, adj


def _tree_path(adj, start, goal):
    parent = {start: None}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if node == goal:
            break
        for nb in adj[node]:
            if nb not in parent:
                parent[nb] = node
                queue.append(nb)
    path = [goal]
    while path[-1] != start:
        path.append(parent[path[-1]])
    return path[::-1]


def transport_simplex(a, b, cost, max_pivots=None):
    """Solve ``min <cost, P>`` over couplings of ``a`` and ``b``.

    Parameters
    ----------
    a, b : ndarray
        Nonnegative marginals with equal total mass.
    cost : ndarray, shape (m, n)
        Cost matrix.

    Returns
    -------
    plan : ndarray, shape (m, n)
        An optimal vertex of the transport polytope.
    pivots : int
        Number of simplex pivots performed.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    cost = np.asarray(cost, dtype=float)
    m, n = cost.shape
    if max_pivots is None:
        max_pivots = 50 * (m + n) * max(m, n) + 1000
    basis, flow = _northwest_corner(a, b)
    scale = max(float(np.abs(cost).max()), 1.0)
    tol = 1e-12 * scale
    bland = False
    pivots = 0
    while pivots < max_pivots:
        u, v, adj = _potentials(basis, cost, m, n)
        reduced = cost - u[:, None] - v[None, :]
        for i, j in basis:
            reduced[i, j] = 0.0
        if bland:
            cand = np.flatnonzero(reduced.ravel() < -tol)
            if cand.size == 0:
                break
            enter = divmod(int(cand[0]), n)
        else:
            flat = int(np.argmin(reduced))
            if reduced.ravel()[flat] >= -tol:
                break
            enter = divmod(flat, n)
        ei, ej = enter
        path = _tree_path(adj, m + ej, ei)
        # path runs column ej -> ... -> row ei; its edges alternate -, +, -, ...
        cycle = []
        for k in range(len(path) - 1):
            x, y = path[k], path[k + 1]
            cell = (y, x - m) if x >= m else (x, y - m)
            cycle.append(cell)
        minus = cycle[0::2]
        plus = cycle[1::2]
        theta = min(flow[c] for c in minus)
        ties = [c for c in minus if flow[c] <= theta]
        leave = min(ties, key=lambda c: c[0] * n + c[1])
        for c in minus:
            flow[c] -= theta
        for c in plus:
            flow[c] += theta
        flow[enter] = theta
        del flow[leave]
        basis.remove(leave)
        basis.append(enter)
        bland = theta <= 0.0
        pivots += 1
    else:
        raise RuntimeError("transport simplex did not terminate")
    plan = np.zeros((m, n))
    for (i, j), x in flow.items():
        plan[i, j] = max(x, 0.0)
    return plan, pivots
