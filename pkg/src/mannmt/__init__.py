"""Memory-augmented neural machine translation on a small reverse-mode autodiff engine."""

from .errors import ContractViolation, IngestionError, NonFiniteGradient, TrainingDiverged
from .models import ARCHITECTURES, ModelConfig, build_model

__version__ = "0.1.0"

__all__ = [
    "ARCHITECTURES",
    "ContractViolation",
    "IngestionError",
    "ModelConfig",
    "NonFiniteGradient",
    "TrainingDiverged",
    "build_model",
]
