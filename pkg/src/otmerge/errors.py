"""Exception hierarchy shared across the pipeline."""


class OtmergeError(Exception):
    """Base class for all pipeline errors."""


class ValidationError(OtmergeError):
    """Input violates a documented contract (shape, range, or value)."""


class ContainerIntegrityError(OtmergeError):
    """Container holds inconsistent records (e.g. duplicate tensor names)."""


class FormatError(OtmergeError):
    """File is not a recognized container (bad magic or version)."""


class CorruptionError(OtmergeError):
    """Container is structurally damaged (truncated or size-inconsistent)."""


class InsufficientSamplesError(ValidationError):
    """Statistic requires more samples than the activations provide."""


class EmptySequenceError(ValidationError):
    """A per-sample token sequence is empty and cannot be pooled."""


class MissingInputError(OtmergeError):
    """A required activation or weight tensor is absent."""


class InfeasibilityError(OtmergeError):
    """Transport problem admits no finite-cost feasible plan."""


class NumericalFailureError(OtmergeError):
    """Solver produced NaN; carries the iteration at which it happened."""

    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


class ConsistencyError(OtmergeError):
    """Artifacts on disk do not belong together (stale or mismatched)."""


class UnsupportedScaleError(OtmergeError):
    """Operation is restricted to toy-scale inputs."""
