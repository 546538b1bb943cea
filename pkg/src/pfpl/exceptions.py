"""Error types raised across the toolkit.

Everything derives from PfplError so callers can catch the whole family;
the ValueError/KeyError mixins keep the usual Python semantics intact.
"""


class PfplError(Exception):
    """Base class for all toolkit errors."""


class InvalidInput(PfplError, ValueError):
    """An argument violates a documented precondition."""


class ShapeError(InvalidInput):
    """Array shapes are inconsistent with the operation's contract."""


class ConfigError(PfplError, ValueError):
    """A configuration object is internally inconsistent."""


class LoadError(PfplError, RuntimeError):
    """An encoder checkpoint is missing, unreadable, or malformed."""


class IoError(PfplError, OSError):
    """A file could not be read or written."""


class PairingError(PfplError, ValueError):
    """Corpus scan found clean/noisy files without a sibling."""


class EmptyCorpus(PfplError, ValueError):
    """Corpus scan found no usable utterance pairs."""


class NoActiveFrames(PfplError, ValueError):
    """All analysis frames fell below the silence threshold."""


class DegenerateInput(PfplError, ValueError):
    """A statistic is undefined for this input (e.g. zero variance)."""


class FormatError(PfplError, ValueError):
    """A checkpoint file does not start with the expected magic tag."""


class VersionError(PfplError, ValueError):
    """A checkpoint file uses an unsupported format version."""


class IntegrityError(PfplError, ValueError):
    """A checkpoint file is truncated or inconsistent with its own header."""


class TrainingDiverged(PfplError, RuntimeError):
    """Training hit a non-finite loss; carries the step and batch ids."""

    def __init__(self, step: int, batch_ids: list[str]):
        self.step = step
        self.batch_ids = list(batch_ids)
        super().__init__(
            f"non-finite loss at step {step} (batch: {', '.join(self.batch_ids)})"
        )
