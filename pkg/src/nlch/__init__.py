"""Nonlocal Cahn-Hilliard solver with a regional fractional Laplacian."""

from .errors import (
    ConstructionError,
    ConvergenceError,
    DomainError,
    NLCHError,
    SizingError,
    SnapshotError,
    StepRejected,
    ValidationError,
)
from .kernel import Kernel, symmetrize, verify_bounds
from .operators import (
    CouplingMatrix,
    Grid,
    State,
    apply_nonlocal,
    assemble_coupling,
    bilinear,
    invert_neumann,
    neumann_laplacian,
    project_mean_zero,
)
from .potential import Potential

__version__ = "0.1.0"
