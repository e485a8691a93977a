"""dwlab: a simulation and verification laboratory for super-Brownian motion.

Modules:

* kernels    — analytic oracles (heat kernels, moment densities, mass laws)
* simulate   — exact-in-distribution branching-particle samplers
* geometry   — neighborhood measures, rasterization, ball queries
* stats      — intervals, two-sample tests, rate fits
* estimators — Monte Carlo experiments for the hitting/approximation theory
* cli        — config-driven experiment runner (`dwlab` entry point)
"""

from .kernels import (
    DiscreteMeasure,
    bound_times,
    covariance_density,
    extinction_probability,
    heat_kernel,
    mean_density,
    total_mass_laplace,
)
from .simulate import (
    ClusterSample,
    ParticleState,
    SimConfig,
    ancestors,
    poisson_forest,
    rescale_state,
    sample_cluster,
    simulate_dw,
    simulate_path,
)

__version__ = "0.1.0"
