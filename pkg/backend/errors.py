"""
Error hierarchy shared by the library, the CLI and the HTTP routes
"""


class RepairError(Exception):
    """Base class; `exit_code` is what the CLI returns for it."""
    exit_code = 1


class ConfigError(RepairError):
    exit_code = 2


class DataError(RepairError, ValueError):
    exit_code = 3


class NumericalError(RepairError, ArithmeticError):
    exit_code = 4


# ---------- distributions ----------
class LengthMismatch(DataError):
    pass


class NotAProbabilityVector(DataError):
    pass


class PointOffSupport(DataError):
    pass


class ZeroTotalWeight(DataError):
    pass


class NegativeWeight(DataError):
    pass


class EmptyGroup(DataError):
    pass


class SupportMismatch(DataError):
    pass


class DivisionBySupportHole(DataError):
    pass


# ---------- transport core ----------
class DimensionMismatch(DataError):
    pass


class NonPositiveWeight(DimensionMismatch):
    pass


class NonPositiveEpsilon(ConfigError):
    pass


class NonPositiveReference(NumericalError):
    pass


class ZeroRowWithMass(NumericalError):
    pass


class ZeroTotalMass(NumericalError):
    pass


class RootNotBracketed(NumericalError):
    pass


class RootNotConverged(NumericalError):
    pass


# ---------- solvers / projection ----------
class UnevenSupport(DataError):
    pass


class MarginalMismatch(DataError):
    pass


class NonFiniteCoupling(NumericalError):
    pass


class SolverNotConverged(NumericalError):
    pass


class UnreachableSourcePoint(DataError):
    pass


class UnknownColumn(DataError):
    pass


class EmptyDataset(DataError):
    pass


# ---------- metrics ----------
class EmptySample(DataError):
    pass


class ZeroPrivilegedPositiveRate(NumericalError):
    pass


# ---------- pipeline ----------
class MissingColumn(DataError):
    pass


class ParseError(DataError):
    def __init__(self, row: int, column: str, value=None):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"Cannot parse column '{column}' at row {row}: {value!r}")


class OutputError(DataError):
    pass
