"""Exception types shared across the package.

Validation errors carry a ``path`` describing where in a model or scenario
document the offending field lives, so loader diagnostics stay actionable.
"""

from __future__ import annotations


class TollgateError(Exception):
    """Base class for all package errors."""


class ModelValidationError(TollgateError):
    """A model document violates a structural invariant."""

    def __init__(self, message: str, path: str = "") -> None:
        self.path = path
        super().__init__(f"{message} (at {path})" if path else message)


class KernelSumError(ModelValidationError):
    """A transition kernel row does not sum to one."""


class NegativeLossError(ModelValidationError):
    """A terminal loss is negative or non-finite."""


class SafeDefaultError(ModelValidationError):
    """A safe-default entry points outside the action set or breaks idempotence."""


class UnreachableNodeError(TollgateError):
    """An intervention or query names a (time, state) node the model does not have."""


class PolicyUndefinedError(TollgateError):
    """A policy was asked for a decision node it does not cover."""


class EnumerationBudgetError(TollgateError):
    """A brute-force enumeration exceeded its hard cap."""


class VersionConflictError(TollgateError):
    """An exposure increment was submitted against a stale ledger version."""


class PartitionMismatchError(TollgateError):
    """An increment sequence does not sum to the stated total."""


class CalibrationSizeError(TollgateError):
    """Calibration set too small for the requested confidence level."""


class InvalidWitnessError(TollgateError):
    """A witness event has zero probability under the designated model."""


class ScenarioError(TollgateError):
    """Base class for scenario loading failures. Carries a stable error code."""

    code = "scenario"

    def __init__(self, message: str, path: str = "") -> None:
        self.path = path
        super().__init__(f"[{self.code}] {message}" + (f" (at {path})" if path else ""))


class ScenarioParseError(ScenarioError):
    code = "parse"


class ScenarioReferenceError(ScenarioError):
    code = "unresolved-reference"


class ScenarioInvariantError(ScenarioError):
    code = "invariant"
