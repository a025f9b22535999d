"""Exception hierarchy shared by every stage of the pipeline."""


class DQDAError(Exception):
    pass


class IngestError(DQDAError):
    """A dump or pair file could not be read or parsed at all."""


class CorpusQualityError(IngestError):
    """Too many rows were malformed for the input to be trusted."""


class ConfigurationError(DQDAError):
    pass


class CheckpointError(DQDAError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class TrainingDivergedError(DQDAError):
    """Raised when a training step produces a non-finite loss."""
