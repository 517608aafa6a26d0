"""
Error hierarchy for the referring segmentation toolkit
Every error carries the process exit code the CLI reports for it
"""
from typing import Any, Dict, Optional


class RefconError(Exception):
    """Base class for all toolkit errors"""

    exit_code = 1


# ================================
# CONFIGURATION ERRORS (exit 1)
# ================================

class ConfigError(RefconError):
    """Invalid or inconsistent configuration"""

    exit_code = 1


class ConfigMismatchError(ConfigError):
    """Artifacts (checkpoint, dataset, config) disagree with each other"""


class OutputError(ConfigError):
    """A configured output location cannot be written"""

    def __init__(self, message: str, path: Optional[str] = None):
        self.path = path
        super().__init__(message if path is None else f"{message} (path={path})")


# ================================
# DATA ERRORS (exit 2)
# ================================

class DataError(RefconError):
    """Malformed or unusable data"""

    exit_code = 2


class LoadError(DataError):
    """A dataset file is missing or malformed"""

    def __init__(self, message: str, path: Optional[str] = None, field: Optional[str] = None):
        self.path = path
        self.field = field
        context = []
        if path is not None:
            context.append(f"path={path}")
        if field is not None:
            context.append(f"field={field}")
        suffix = f" ({', '.join(context)})" if context else ""
        super().__init__(f"{message}{suffix}")


class FormatError(DataError):
    """A checkpoint file does not follow the binary layout"""


class VocabularyError(DataError):
    """Unknown word or out-of-range token id"""


class GenerationError(DataError):
    """Synthetic clip generation could not satisfy its constraints"""


class InvalidSampleError(DataError):
    """A training sample cannot produce a contrastive pool"""


class EmptyRegionError(DataError):
    """Pooling was requested over an empty mask"""


class EmptyInputError(DataError):
    """A metric was requested over an empty list"""


# ================================
# NUMERIC ERRORS (exit 3)
# ================================

class NumericError(RefconError):
    """Numerical contract violated inside the engine or the model"""

    exit_code = 3


class DimensionError(NumericError):
    """Operand shapes are incompatible"""


class DomainError(NumericError):
    """Input lies outside the domain of an operation"""


class EmptySliceError(NumericError):
    """A softmax slice has no valid position"""


class DegenerateVectorError(NumericError):
    """A vector is too close to zero to be normalized"""


class RankError(NumericError):
    """Backward was requested on a non-scalar tensor"""


class TapeError(NumericError):
    """Backward was requested for a tensor the tape never recorded"""


class EvaluationError(NumericError):
    """A function evaluated to a non-finite value during gradient checking"""


class ContractError(NumericError):
    """Inputs violate a documented precondition (e.g. non-unit embeddings)"""


class NonFiniteGradientError(NumericError):
    """An optimizer step saw a NaN/Inf gradient"""

    def __init__(self, parameter: str, diagnostics: Optional[Dict[str, Any]] = None):
        self.parameter = parameter
        self.diagnostics = diagnostics or {}
        details = ", ".join(f"{key}={value}" for key, value in self.diagnostics.items())
        super().__init__(f"Non-finite gradient in parameter '{parameter}'" + (f": {details}" if details else ""))
