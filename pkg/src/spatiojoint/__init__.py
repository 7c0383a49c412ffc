"""Spatiotemporal joint model of bounded longitudinal outcomes and competing events."""

from .errors import BarrierError, DomainError, NumericalError, SpatioJointError, ValidationError
from .model import (
    Dataset,
    FixedEffects,
    Geometry,
    Hyperparameters,
    LatentFixedEffects,
    PatientRecord,
    RandomEffects,
    cif,
    hazard,
    individual_trajectory,
    latent_age,
    orthonormal_basis,
    population_trajectory,
    survival,
)

__all__ = [
    "BarrierError",
    "Dataset",
    "DomainError",
    "FixedEffects",
    "Geometry",
    "Hyperparameters",
    "LatentFixedEffects",
    "NumericalError",
    "PatientRecord",
    "RandomEffects",
    "SpatioJointError",
    "ValidationError",
    "cif",
    "hazard",
    "individual_trajectory",
    "latent_age",
    "orthonormal_basis",
    "population_trajectory",
    "survival",
]
