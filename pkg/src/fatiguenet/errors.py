"""Exception hierarchy shared by every stage of the pipeline."""


class FatigueNetError(Exception):
    """Base class for all package errors."""


class InvalidSpecError(FatigueNetError, ValueError):
    """A filter, wavelet, op or resampling specification is out of range."""


class EmptyInputError(FatigueNetError, ValueError):
    pass


class InsufficientDataError(FatigueNetError, ValueError):
    pass


class DegenerateChannelError(FatigueNetError, ValueError):
    """A channel has zero MVC, so normalization would divide by zero."""


class ShapeError(FatigueNetError, ValueError):
    pass


class InvalidLabelError(FatigueNetError, ValueError):
    pass


class AlignmentError(FatigueNetError, ValueError):
    pass


class InsufficientBatchError(FatigueNetError, ValueError):
    pass


class DegenerateBatchError(FatigueNetError, ValueError):
    pass


class GradCheckError(FatigueNetError, ArithmeticError):
    pass


class InvalidConfigError(FatigueNetError, ValueError):
    pass


class InvalidFoldError(FatigueNetError, ValueError):
    pass


class TrainingDivergenceError(FatigueNetError, ArithmeticError):
    pass
