"""Exception hierarchy shared across the toolkit."""


class FewshotSedError(Exception):
    """Base class for all toolkit errors."""


class AnnotationError(FewshotSedError):
    """Malformed annotation or prediction CSV content."""


class TaskUnbuildableError(FewshotSedError):
    """An annotation table cannot supply the requested few-shot task."""


class AudioFormatError(FewshotSedError):
    """Unreadable or unsupported WAV payload."""


class FeatureError(FewshotSedError):
    """Invalid feature configuration or incompatible feature shapes."""


class DegenerateTemplateError(FewshotSedError):
    """A template or comparison patch has zero variance."""


class EmbeddingFileError(FewshotSedError):
    """Malformed external embedding file."""


class InsufficientDataError(FewshotSedError):
    """Not enough data to run the requested estimator."""


class SceneInfeasibleError(FewshotSedError):
    """A synthetic scene spec cannot be realized."""
