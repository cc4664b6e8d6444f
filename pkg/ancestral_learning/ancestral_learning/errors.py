"""Exceptions raised by the ancestral learning package."""

from typing import Any, Dict, Optional


class AncestralLearningError(Exception):
    pass


class DomainError(AncestralLearningError, ValueError):
    """An operation was called outside of its preconditions."""


class ConfigError(AncestralLearningError, ValueError):
    """A configuration file or command line flag has an invalid value."""


class FormatError(AncestralLearningError, ValueError):
    """A serialized artifact is malformed or was written by an incompatible version."""


class ConvergenceError(AncestralLearningError):
    """An iterative solver ran out of iterations. The diagnostics say how far it got."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None) -> None:
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})

    def __str__(self) -> str:
        if not self.diagnostics:
            return super().__str__()
        details = ", ".join(f"{key}={value}" for key, value in sorted(self.diagnostics.items()))
        return f"{super().__str__()} ({details})"


class StageError(AncestralLearningError):
    """Wrap failures of a pipeline stage with the stage name and seed context."""

    def __init__(self, stage: str, seed: int, repetition: Optional[int], cause: BaseException):
        self.stage = stage
        self.seed = seed
        self.repetition = repetition
        self.cause = cause
        super().__init__(
            f"stage '{stage}' failed (seed={seed}, repetition={repetition}): {cause!s}"
        )
