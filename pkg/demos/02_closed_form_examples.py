# %% [markdown]
# # The two closed-form families
#
# For `V(x) = w.x + c` optimal particles move in straight lines at speed
# `|w/delta|^{q-1}`; for `V(x) = -|x|^p/p` they contract exponentially to the
# origin.  Both give exact values to compare against the solver.

# %%
import numpy as np

from wassval import ProblemSpec, closed_form_linear, closed_form_power, linear_potential, power_potential, solve_classical
from wassval.classical import euler_lagrange_residual
from wassval.paths import Trajectory

spec = ProblemSpec(p=2.0, delta=1.0, horizon=40.0, steps=400)
w = np.array([1.0, 0.0])
u, Psi = closed_form_linear(w, 0.0, spec.delta, spec.p)
sol = solve_classical(np.zeros(2), linear_potential(w, 0.0, delta=1.0, p=2.0), spec)
print(f"linear: solver {sol.value:.12f}  exact {u(np.zeros(2)):.12f}")
print("position at t = 3:", sol.trajectory.at(3.0)[0], "vs", Psi(np.zeros(2), 3.0))

# %% [markdown]
# The power family needs the root `a` of `delta a + (p - 1) a^q = 1`.

# %%
for p in (2.0, 3.0):
    a, u, Psi = closed_form_power(p, 1.0)
    s = ProblemSpec(p=p, delta=1.0, horizon=20.0, steps=400)
    sol = solve_classical(np.array([1.0]), power_potential(p, 1, delta=1.0), s)
    print(f"p = {p:g}: a = {a:.10f}, solver {sol.value:.7f}, exact {u(np.array([1.0])):.7f}")

# %% [markdown]
# The discrete Euler-Lagrange residual of the exact flow shrinks like `dt^2`.

# %%
a, _, Psi = closed_form_power(2.0, 1.0)
V = power_potential(2.0, 1)
prev = None
for M in (100, 200, 400, 800):
    s = ProblemSpec(p=2.0, delta=1.0, horizon=20.0, steps=M)
    grid = s.grid()
    traj = Trajectory(grid, np.stack([Psi(np.array([1.0]), t) for t in grid.nodes]))
    r = euler_lagrange_residual(traj, V, s)["max"]
    rate = "" if prev is None else f"  order {np.log2(prev / r):.2f}"
    print(f"M = {M:4d}: residual {r:.3e}{rate}")
    prev = r
