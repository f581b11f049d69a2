"""Exception hierarchy shared by every module."""


class RemixMineError(Exception):
    """Base class; the CLI turns these into non-zero exits."""


class DataIntegrityError(RemixMineError):
    pass


class NotFoundError(RemixMineError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class ParseError(RemixMineError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InsufficientDataError(RemixMineError):
    pass


class PreconditionError(RemixMineError, ValueError):
    pass


class UndefinedRankingError(RemixMineError):
    pass


class SingularDesignError(RemixMineError):
    pass


class EstimationError(RemixMineError):
    """A model part cannot be estimated from the data given."""


class UndefinedTestError(RemixMineError):
    pass


class ConfigError(RemixMineError):
    pass
