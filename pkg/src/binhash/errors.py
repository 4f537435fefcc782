"""Exception types shared across the package.

Plain ``ValueError`` is used for ordinary invalid arguments; the classes here
cover failure modes that callers may want to handle separately (the CLI maps
them to distinct exit codes).
"""


class DegenerateDatasetError(ValueError):
    """Imbalance weighting needs at least one similar and one dissimilar pair."""


class NumericFailureError(ArithmeticError):
    """A non-finite value appeared where the computation requires finite floats."""

    def __init__(self, message: str, *, stage: int | None = None, epoch: int | None = None):
        super().__init__(message)
        self.stage = stage
        self.epoch = epoch


class StaleTraceError(RuntimeError):
    """A forward trace was used after the parameters it was computed with changed."""


class UndefinedRecallError(ValueError):
    """Recall is undefined when the database holds no relevant item for the query."""
