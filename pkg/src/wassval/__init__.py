"""Discounted action minimization over particle measures in Wasserstein space."""

__version__ = "0.1.0"

from wassval.classical import (
    closed_form_linear,
    closed_form_power,
    euler_lagrange_residual,
    grad_u_fd,
    gradient_flow_residual,
    hje_residual_classical,
    solve_classical,
)
from wassval.measure_control import ValueReport, ValueSolver, pushforward_path, solve_direct, solve_simple_potential
from wassval.measures import (
    ParticleMeasure,
    check_lp_w1_inequality,
    dirac,
    levy_prokhorov,
    make_particle_measure,
    optimal_plan,
    wasserstein_p,
)
from wassval.paths import (
    MeasurePath,
    TimeGrid,
    Trajectory,
    ac_norm,
    discounted_action,
    metric_derivative,
    pi_distance,
    poincare_check,
)
from wassval.potentials import (
    CertificateError,
    GrowthCertificate,
    MeasurePotential,
    Potential,
    ProblemSpec,
    delta_validity,
    linear_potential,
    power_potential,
    simple_potential_lift,
    zero_potential,
)
