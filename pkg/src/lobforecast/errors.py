"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command-line surface:
2 for invalid parameters, 3 for data problems, 4 for numeric divergence,
1 for anything else.
"""


class LobForecastError(Exception):
    exit_code = 1


class DataError(LobForecastError):
    exit_code = 3


class NumericDivergence(LobForecastError):
    exit_code = 4


# numerics
class ShapeMismatch(LobForecastError, ValueError):
    pass


class IndexOutOfRange(LobForecastError, IndexError):
    pass


class NonScalarLoss(LobForecastError, ValueError):
    pass


class DoubleBackward(LobForecastError, RuntimeError):
    pass


class CheckpointFormatError(DataError):
    pass


# lob-data
class ColumnCountMismatch(DataError):
    pass


class RowCountMismatch(DataError):
    pass


class OrdinalViolation(DataError):
    def __init__(self, row, detail=""):
        self.row = row
        msg = f"ordinal structure violated at row {row}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class EmptyInput(DataError):
    pass


class GridMismatch(DataError):
    pass


class TooShort(DataError):
    pass


class BadParams(DataError):
    exit_code = 2  # invalid parameters are usage errors


# transforms
class NonPositivePrice(DataError):
    pass


class ChangeBelowMinusOne(DataError):
    pass


# embedding / model / trainer
class UnknownVariable(LobForecastError, KeyError):
    pass


class NonFiniteActivation(NumericDivergence):
    pass


class NonFiniteGradient(NumericDivergence):
    pass


class NonFiniteLoss(NumericDivergence):
    pass
