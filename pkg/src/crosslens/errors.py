"""Exception hierarchy shared by every pipeline stage."""


class CrosslensError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(CrosslensError, ValueError):
    """A configuration value violates its documented bounds."""


class IngestionError(CrosslensError):
    """A source could not be discovered, opened or read."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


class ContentMismatchError(IngestionError):
    """The sniffed file content contradicts the file extension."""


class CorruptSourceError(IngestionError):
    """The file matched its format but could not be parsed."""


class AliasCollisionError(CrosslensError):
    """Two columns resolved to the same alias after escaping."""


class QueryError(CrosslensError):
    """The staging engine rejected or failed a query.

    ``engine_message`` carries the raw engine text so it can be fed back
    into program regeneration.
    """

    def __init__(self, message, engine_message=None):
        super().__init__(message)
        self.engine_message = engine_message if engine_message is not None else message


class PolicyViolationError(QueryError):
    """A program attempted to write to, or restructure, the staging store."""


class QueryTimeoutError(QueryError):
    pass


class ProviderError(CrosslensError):
    """The language-model boundary failed."""


class TransportError(ProviderError):
    pass


class ReplayMissError(ProviderError):
    def __init__(self, fingerprint):
        super().__init__(f"cassette has no entry for request fingerprint {fingerprint}")
        self.fingerprint = fingerprint


class TokenLimitError(ProviderError):
    pass


class PlanningError(CrosslensError):
    """Goal decomposition produced no valid plan."""

    def __init__(self, message, raw_response=None):
        super().__init__(message)
        self.raw_response = raw_response


class JudgeError(CrosslensError):
    def __init__(self, message, pair=None):
        super().__init__(message)
        self.pair = pair


class FixtureSpecError(CrosslensError, ValueError):
    """A fixture specification is internally inconsistent."""


class ProgramValidationError(QueryError):
    """A generated program failed static checks before reaching the engine."""

    def __init__(self, message, program=""):
        super().__init__(message, message)
        self.program = program
