"""
prte: radiative transfer in the highly forward-peaked regime.

Modules
-------
geom
    Stereographic projection between S^{d-1} and R^{d-1}, chord identities,
    measure pushforward.
kernels
    Limiting and Henyey-Greenstein scattering kernels with their derived
    constants (c_frac, c_bessel, D, D0, D1).
fracop
    Truncated plane grids and fractional Laplacians: spectral, singular-integral
    quadrature, and the bounded Henyey-Greenstein regularization.
scatter
    Sphere quadratures, angular spectra, Funk-Hecke eigenvalues, and the three
    realizations of the scattering operator.
solver
    Strang-split transport/scattering solver with exact energy accounting,
    snapshots, and diagnostics.
experiments
    Convergence, decay, level-set and regularity studies with report output.
cli
    Batch command line interface (solve / eigs / study).
"""

__version__ = "0.1.0"

from .errors import (
    BoundaryLeakage,
    ConfigError,
    InvariantViolation,
    NonMonotoneConvergence,
    NorthPoleSingularity,
    NumericalError,
    ParameterOutOfRange,
    PrteError,
    QuadratureNonConvergence,
    SingularArgument,
    StabilityViolation,
    ThresholdError,
    UnknownKind,
    WindowTooShort,
)
from .geom import bracket, chord_gap, jacobian_to_sphere, project, sphere_area, unproject
from .kernels import (
    Constants,
    HGSpec,
    KernelSpec,
    bessel_constant,
    conformal_eigenvalue,
    constants,
    frac_constant,
    hg_limit_b1,
    hg_rescaled,
    limiting_kernel,
)

__all__ = [
    "__version__",
    "BoundaryLeakage",
    "ConfigError",
    "Constants",
    "HGSpec",
    "InvariantViolation",
    "KernelSpec",
    "NonMonotoneConvergence",
    "NorthPoleSingularity",
    "NumericalError",
    "ParameterOutOfRange",
    "PrteError",
    "QuadratureNonConvergence",
    "SingularArgument",
    "StabilityViolation",
    "ThresholdError",
    "UnknownKind",
    "WindowTooShort",
    "bessel_constant",
    "bracket",
    "chord_gap",
    "conformal_eigenvalue",
    "constants",
    "frac_constant",
    "hg_limit_b1",
    "hg_rescaled",
    "jacobian_to_sphere",
    "limiting_kernel",
    "project",
    "sphere_area",
    "unproject",
]
