"""Exception hierarchy shared across the pipeline."""


class SpannerError(Exception):
    """Base class for all errors raised by this package."""


class CorpusError(SpannerError):
    """Malformed corpus file or annotation (bad tag, bad box, schema violation)."""


class BioSequenceError(SpannerError):
    """Ill-formed BIO tag sequence encountered with repair disabled."""


class CheckpointError(SpannerError):
    """Checkpoint file unreadable, corrupt, or failing its integrity hash."""


class TrainingDivergedError(SpannerError):
    """Non-finite loss or gradient during training."""


class PromptError(SpannerError):
    """Prompt cannot be built within the configured sequence length."""


class ConfigError(SpannerError):
    """Run configuration missing, unparseable, or violating an invariant."""


class ArtifactMissingError(SpannerError):
    """A command needs an artifact another command has not produced yet."""
