"""Exception hierarchy.

Every error carries a short ``category`` string; the CLI prints it as the
machine-parsable prefix of its one-line failure message.
"""


class BimodalError(Exception):
    category = "error"


class DimensionError(BimodalError, ValueError):
    category = "dimension"


class ValidationError(BimodalError, ValueError):
    category = "validation"


class ImageSizeError(ValidationError):
    category = "image-size"


class EvaluationError(BimodalError, ArithmeticError):
    category = "evaluation"


class UsageError(BimodalError, ValueError):
    category = "usage"


class TrainingDivergenceError(BimodalError, FloatingPointError):
    category = "divergence"

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class NumericError(BimodalError, FloatingPointError):
    category = "numeric"


class DataIntegrityError(BimodalError):
    category = "data-integrity"


class UndefinedAUCError(BimodalError, ValueError):
    category = "undefined-auc"


class ParseError(BimodalError, ValueError):
    category = "parse"

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class OrderingError(BimodalError):
    category = "ordering"


class ArtifactExistsError(BimodalError):
    category = "exists"


class FormatError(BimodalError, ValueError):
    category = "format"


class AlignmentError(BimodalError, ValueError):
    category = "alignment"
