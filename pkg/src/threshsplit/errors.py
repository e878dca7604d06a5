"""Exception hierarchy.  Every error raised on purpose derives from ThreshSplitError."""


class ThreshSplitError(Exception):
    """Base class for all package errors."""


class SchemaError(ThreshSplitError):
    pass


class ParseError(ThreshSplitError):
    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class EmptyDataError(ThreshSplitError):
    pass


class ShapeError(ThreshSplitError):
    pass


class SizeError(ThreshSplitError):
    pass


class EmptyWindowError(ThreshSplitError):
    pass


class SingularDesignError(ThreshSplitError):
    pass


class NoCandidateError(ThreshSplitError):
    def __init__(self, message, trim_bounds=None):
        super().__init__(message)
        self.trim_bounds = trim_bounds


class CurveEstimationError(ThreshSplitError):
    pass


class InsufficientRegimeError(ThreshSplitError):
    def __init__(self, message, side=None):
        super().__init__(message)
        self.side = side


class DegenerateFitError(ThreshSplitError):
    pass


class EmptyNeighborhoodError(ThreshSplitError):
    pass


class SingularMomentError(ThreshSplitError):
    pass


class CVInfeasibleError(ThreshSplitError):
    pass


class SelectionError(ThreshSplitError):
    pass


class ContourError(ThreshSplitError):
    pass
