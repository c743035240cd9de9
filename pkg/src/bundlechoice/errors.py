"""Exception types raised across the bundlechoice package."""

from typing import Optional


class BundleChoiceError(Exception):
    """Base class for all package errors."""


class DimensionMismatchError(BundleChoiceError, ValueError):
    """Vector or array dimensions do not agree."""


class InvalidChoiceError(BundleChoiceError, ValueError):
    """A choice label or code outside the choice set."""


class InsufficientDataError(BundleChoiceError, ValueError):
    """Too few observations to fit or estimate."""


class UnfittedPairError(BundleChoiceError, KeyError):
    """No first-step model is available for an ordered period pair."""

    def __init__(self, pair: tuple) -> None:
        self.pair = pair
        super().__init__(f"no CCP model fitted for period pair {pair}")


class PreconditionError(BundleChoiceError, ValueError):
    """A closed-form construction was called outside its inequality system."""

    def __init__(self, inequality: str, lhs: float, rhs: float) -> None:
        self.inequality = inequality
        self.lhs = lhs
        self.rhs = rhs
        super().__init__(f"precondition violated: {inequality} ({lhs:.6g} vs {rhs:.6g})")


class PanelParseError(BundleChoiceError, ValueError):
    """Invalid panel input, pointing at the offending CSV row."""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        self.row = row
        self.column = column
        location = ""
        if row is not None:
            location = f" (row {row}" + (f", column '{column}'" if column else "") + ")"
        super().__init__(f"{message}{location}")


class EstimationError(BundleChoiceError, RuntimeError):
    """An estimator could not produce an estimate."""


class EmptyGridError(BundleChoiceError, ValueError):
    """A parameter grid has no points."""
