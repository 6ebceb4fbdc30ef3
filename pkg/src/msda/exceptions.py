"""Exception hierarchy shared by every subpackage."""


class MSDAError(Exception):
    """Base class for all package errors."""


class ConfigurationError(MSDAError, ValueError):
    """Invalid or inconsistent configuration (unknown keys, layer names, sizes)."""


class PreconditionError(MSDAError, ValueError):
    """An operation was called with inputs outside its documented domain."""


class StructuralError(MSDAError, ValueError):
    """Shape or dimension mismatch between arrays, layers or models."""


class LabelError(MSDAError, ValueError):
    """A class label is out of range for the classifier it is scored against."""


class ReceptiveFieldError(StructuralError):
    """Input sequence is shorter than the receptive field of the frame layers."""

    def __init__(self, n_frames, required):
        self.n_frames = n_frames
        self.required = required
        super().__init__(
            f"sequence has {n_frames} frames but the time-delay stack needs at least T={required}"
        )


class SamplingError(MSDAError, ValueError):
    """A segment could not be cut from an utterance."""


class DegenerateEmbeddingError(MSDAError, ValueError):
    """A zero-norm embedding cannot be length-normalised."""


class NormalizationError(MSDAError, ValueError):
    """Rows expected to be probability vectors do not sum to one."""


class FitError(MSDAError, RuntimeError):
    """A backend model could not be estimated from the given data."""


class SpecError(MSDAError, ValueError):
    """A corpus specification violates its invariants."""


class ProtocolError(MSDAError, ValueError):
    """A trial protocol cannot be built from the evaluation split."""


class DataError(MSDAError, ValueError):
    """Malformed data file or inconsistent data content."""


class NumericError(MSDAError, FloatingPointError):
    """Training diverged or produced non-finite values."""
