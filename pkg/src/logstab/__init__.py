"""Numerical laboratory for logarithmic stability of wave and heat inverse problems.

Finite-difference forward solvers on rectangles, Volterra deconvolution of
source traces, linearised recovery of potentials and sources, and the
schedule and moduli that quantify how stably they are determined by partial
boundary measurements.
"""
__version__ = "0.1.0"

from .domain import (
    DiscreteOperator,
    DomainSpec,
    EigenSystem,
    ScalarField,
    build_laplacian,
    eigensolve,
    norm,
    w1inf_norm,
    weyl_fit,
)
from .errors import (
    ConfigurationError,
    ConstraintError,
    DimensionError,
    DomainError,
    IllConditionedWarning,
    InstabilityError,
    LogstabError,
    NumericalError,
    OutOfRegimeError,
    SingularKernelError,
    TruncationWarning,
)
from .heat import heat_probe, solve_heat_ivp, solve_heat_source
from .schedule import StabilitySchedule, modulus, schedule_sstar
from .stability import (
    StabilityReport,
    estimate_source,
    extract_coefficients,
    opnorm_surrogate,
    reconstruct_potential,
    run_stability_experiment,
)
from .traces import BoundaryTrace, TimeSignal, inject_noise
from .volterra import ConvolutionKernel, apply_S, invert_S
from .wave import measure_probe, solve_wave_ivp, solve_wave_source
