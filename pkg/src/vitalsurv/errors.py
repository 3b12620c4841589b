"""Exception hierarchy.

Each class carries the CLI exit code it maps to, so the command-line layer
never has to inspect messages.
"""

from __future__ import annotations


class VitalsurvError(Exception):
    exit_code = 1


class ConfigError(VitalsurvError):
    exit_code = 2


class DataError(VitalsurvError):
    exit_code = 3


class SpecError(DataError):
    """A finite-process table that is malformed or not normalised."""


class MissingAnnotationError(DataError):
    """Record lacks the next-appointment annotations needed for breach detection."""


class ParameterDomainError(VitalsurvError, ValueError):
    exit_code = 2


class DomainError(VitalsurvError, ValueError):
    """Evaluation point outside the region where a quantity is defined."""

    exit_code = 4


class NumericalError(VitalsurvError):
    exit_code = 4


class QuadratureError(NumericalError):
    def __init__(self, message: str, abs_error: float = float("nan"), rel_error: float = float("nan")):
        super().__init__(f"{message} (achieved abs error {abs_error:.3g}, rel error {rel_error:.3g})")
        self.abs_error = abs_error
        self.rel_error = rel_error


class UndefinedConditionalError(NumericalError):
    pass


class PolicyError(VitalsurvError):
    exit_code = 4


class LikelihoodError(NumericalError):
    def __init__(self, patient_id: str, cause: Exception):
        super().__init__(f"record {patient_id!r}: {cause}")
        self.patient_id = patient_id
        self.cause = cause


class FitError(VitalsurvError):
    exit_code = 5

    def __init__(self, message: str, trace: list | None = None):
        super().__init__(message)
        self.trace = trace or []
