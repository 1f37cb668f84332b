"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command line front end:
1 for usage/configuration problems, 2 for data problems and 3 for
numerical degeneracy (zero cells, empty risk sets, separation, ...).
"""


class SieveError(Exception):
    exit_code = 2


class UsageError(SieveError):
    exit_code = 1


class ConfigurationError(UsageError):
    pass


class ConflictingConfig(UsageError):
    pass


class DataError(SieveError):
    exit_code = 2


class ParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DomainError(DataError):
    pass


class MissingExposure(DataError):
    pass


class Degeneracy(SieveError):
    exit_code = 3


class DegenerateCounts(Degeneracy):
    def __init__(self, message, cell=None):
        self.cell = cell
        super().__init__(message)


class DegenerateIncidence(DegenerateCounts):
    pass


class RiskSetExhausted(Degeneracy):
    pass


class CoxNoConverge(Degeneracy):
    pass


class SeparationError(Degeneracy):
    pass


class BootstrapFailure(Degeneracy):
    pass


class TestInfeasible(Degeneracy):
    __test__ = False  # keep pytest from collecting this


class OutOfRegime(Degeneracy):
    pass
