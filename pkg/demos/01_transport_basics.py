# %% [markdown]
# # Particle measures and exact transport
#
# Everything in the package works with finitely supported measures
# `mu = sum_i w_i delta_{x_i}`.  This script builds a few, computes exact
# Wasserstein distances and optimal plans, and checks the Levy-Prokhorov bound.

# %%
import numpy as np

from wassval import levy_prokhorov, make_particle_measure, optimal_plan, wasserstein_p

rng = np.random.default_rng(0)
mu = make_particle_measure(rng.normal(size=(5, 2)), rng.uniform(0.2, 1.0, 5))
nu = make_particle_measure(rng.normal(loc=1.0, size=(4, 2)))
print("mu weights", np.round(mu.weights, 3))

# %% [markdown]
# The plan is a vertex of the transport polytope, so it has at most
# `n + m - 1` nonzero entries.

# %%
plan = optimal_plan(mu, nu, 2.0)
for i, j, m in plan.entries:
    print(f"  {i} -> {j}: {m:.4f}")
print("W_2 =", plan.cost ** 0.5)

# %% [markdown]
# W_p is nondecreasing in p.

# %%
for p in (1.0, 1.5, 2.0, 3.0):
    print(f"W_{p:g} = {wasserstein_p(mu, nu, p):.6f}")

# %% [markdown]
# The Levy-Prokhorov distance metrizes narrow convergence and satisfies
# `Lambda^2 <= W_1`.

# %%
lam = levy_prokhorov(mu, nu)
print(f"Lambda^2 = {lam**2:.4f} <= W_1 = {wasserstein_p(mu, nu, 1.0):.4f}")
