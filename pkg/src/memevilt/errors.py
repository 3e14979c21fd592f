"""Exception types shared across the package.

Validation errors (bad input, bad config, bad shapes) map to CLI exit code 1;
runtime failures (OCR, image decoding, non-finite losses) map to exit code 2.
"""


class ValidationError(ValueError):
    """Input or configuration rejected before any work was done."""


class ShapeError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class ParameterError(ValidationError):
    pass


class VocabularyError(ValidationError):
    pass


class ManifestError(ValidationError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class RuntimeFailure(RuntimeError):
    """Failure while executing an otherwise valid request."""


class OcrError(RuntimeFailure):
    pass


class ImageError(RuntimeFailure):
    pass


class EvaluationError(RuntimeFailure):
    pass


class TrainingError(RuntimeFailure):
    pass
