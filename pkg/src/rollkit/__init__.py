"""Kinematics of manifolds rolling without slipping or twisting."""

__version__ = "0.1.0"

from rollkit.errors import (
    ChartExitError,
    DomainError,
    DriftError,
    FlagError,
    RollkitError,
)

__all__ = [
    "__version__",
    "RollkitError",
    "DomainError",
    "DriftError",
    "ChartExitError",
    "FlagError",
]
