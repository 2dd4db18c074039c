"""
Error types shared across the workbench
Each error carries a short error_code so CLI reports stay machine-readable
"""
from typing import Any, Optional


class TwinforgeError(Exception):
    """Base class for every workbench failure"""

    error_code = "twinforge_error"

    def __init__(self, message: str, details: Optional[dict] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> dict:
        return {"error": self.message, "error_code": self.error_code, "details": self.details}


class ConfigError(TwinforgeError):
    """Config file or CLI input failed validation"""

    error_code = "config_error"


class InvalidInput(TwinforgeError, ValueError):
    """Argument outside the domain of a numeric routine"""

    error_code = "invalid_input"


class ScreeningFailed(TwinforgeError):
    """Loss cap still exceeded after every intensity halving"""

    error_code = "screening_failed"


class UnreachableDestination(TwinforgeError):
    error_code = "unreachable_destination"


class UnknownPair(TwinforgeError, KeyError):
    error_code = "unknown_pair"

    def __str__(self) -> str:
        return self.message


class UnroutedDemand(TwinforgeError):
    error_code = "unrouted_demand"


class NonFiniteGradient(TwinforgeError):
    """A gradient tensor contains NaN or Inf"""

    error_code = "non_finite_gradient"


class DivergedLoss(TwinforgeError):
    error_code = "diverged_loss"


class EvaluatorFailure(TwinforgeError):
    """Fitness evaluation failed mid-search; the partial trace is attached"""

    error_code = "evaluator_failure"

    def __init__(self, message: str, trace: Any = None, details: Optional[dict] = None):
        super().__init__(message, details)
        self.trace = trace


class DatasetError(TwinforgeError):
    error_code = "dataset_error"


class OutputExistsError(TwinforgeError):
    """Refusing to overwrite an existing experiment directory"""

    error_code = "output_exists"
