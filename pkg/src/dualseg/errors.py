"""Exception types shared across the package."""


class DualsegError(Exception):
    """Base class for all package-specific errors."""


class ParseError(DualsegError):
    """Config file is not valid JSON / not a JSON object."""


class ValidationError(DualsegError):
    """A config or input value violates a documented invariant."""


class GeneratorError(DualsegError):
    """Synthetic data spec is unsatisfiable (e.g. instances larger than regions)."""


class MissingFileError(DualsegError):
    """A dataset folder is missing an expected file; message names it."""


class ShapeMismatchError(DualsegError):
    """Image / mask shapes disagree within one sample; message names the sample."""


class ShapeError(DualsegError):
    """A tensor argument has an unusable shape (e.g. image not divisible by patch size)."""


class TopologyMismatchError(DualsegError):
    """Stored tensors do not line up with the model; message names every offender."""


class VersionMismatchError(DualsegError):
    """Checkpoint was written by an incompatible format version."""


class CorruptFileError(DualsegError):
    """Checkpoint bytes are truncated or fail integrity checks."""


class ModeError(DualsegError):
    """Decoder called in a mode inconsistent with its inputs."""


class RoleMismatchError(DualsegError):
    """Decoder slot roles disagree with the configured class counts."""


class LabelRangeError(DualsegError):
    """A target label lies outside the configured class range."""


class NonFiniteLossError(DualsegError):
    """Training produced a NaN/Inf loss; message carries the step index."""


class EmptyMaskError(DualsegError):
    """Boundary-distance metric got an empty mask on one side."""
