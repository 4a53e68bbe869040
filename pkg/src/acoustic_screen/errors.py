"""Exception hierarchy shared across the pipeline."""


class PipelineError(Exception):
    """Base class; the CLI maps these to exit code 2 (data error)."""


# audio
class UnsupportedFormat(PipelineError):
    pass


class CorruptHeader(PipelineError):
    pass


class EmptyAudio(PipelineError):
    pass


class AllSilent(PipelineError):
    pass


# features
class TooShort(PipelineError):
    pass


# nn core
class ShapeMismatch(PipelineError, ValueError):
    pass


class NonFinite(PipelineError, FloatingPointError):
    pass


# classifier
class DegenerateDataset(PipelineError):
    pass


class SignatureMismatch(PipelineError):
    pass


class VersionMismatch(PipelineError):
    pass


class CorruptCheckpoint(PipelineError):
    pass


# ssl
class NoMaskedFrames(PipelineError):
    pass


class NotNormalized(PipelineError, ValueError):
    pass


# eval / fusion
class SingleClass(PipelineError):
    pass


class IdSetMismatch(PipelineError):
    pass


class InvalidWeights(PipelineError, ValueError):
    pass


class TooFewSamples(PipelineError):
    pass


class ManifestError(PipelineError):
    pass
