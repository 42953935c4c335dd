"""Exception hierarchy shared by the data, search and CLI layers."""


class OptSurvError(Exception):
    """Base class for all library errors."""


class DataError(OptSurvError):
    """Input data could not be turned into a training set."""


class MissingFileError(DataError, FileNotFoundError):
    pass


class MissingColumnError(DataError):
    def __init__(self, column):
        super().__init__(f"column {column!r} not found in header")
        self.column = column


class UnparseableCellError(DataError):
    def __init__(self, row, column, value):
        super().__init__(f"row {row}, column {column!r}: cannot parse {value!r}")
        self.row = row
        self.column = column
        self.value = value


class UnparseableEvent(UnparseableCellError):
    """Event indicator is not 0 or 1."""


class EmptyDatasetError(DataError):
    pass


class NoEventsError(DataError):
    """Every sample is censored; the censoring-weighted loss carries no signal."""


class DegenerateFeaturesError(DataError):
    """Binarization left no usable feature column."""


class FeatureMismatchError(DataError):
    """Evaluation data does not provide the features a model was trained on."""


class StructureError(OptSurvError):
    """A tree or leaf partition does not cover the samples exactly once."""


class NoComparablePairs(OptSurvError):
    pass


class NoValidEvalTime(OptSurvError):
    pass


class ReferenceFileError(DataError):
    pass


class MissingIndex(ReferenceFileError):
    def __init__(self, index):
        super().__init__(f"reference loss file has no row for index {index}")
        self.index = index


class DuplicateIndex(ReferenceFileError):
    def __init__(self, index):
        super().__init__(f"reference loss file repeats index {index}")
        self.index = index


class NegativeLoss(ReferenceFileError):
    def __init__(self, index, value):
        super().__init__(f"reference loss for index {index} is negative: {value}")
        self.index = index


class SearchMemoryError(OptSurvError):
    """The dependency graph outgrew the configured node budget."""

    def __init__(self, message, stats):
        super().__init__(message)
        self.stats = stats
