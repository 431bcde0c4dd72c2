"""Discrete Ricci-type flows and Perelman's lambda on flat tori."""

from .errors import (
    CflViolation,
    ChecksumMismatch,
    ConfigError,
    FormatError,
    GridMismatch,
    InsufficientData,
    JacobianCollapse,
    NoConvergence,
    PositivityFailure,
    RiccilabError,
    SolverStall,
    SpdViolation,
)
from .fields import MetricField, ScalarField, SymTensorField, TorusGrid, VectorField
from .spectral import SpectralResult, lambda_of

__version__ = "0.1.0"
