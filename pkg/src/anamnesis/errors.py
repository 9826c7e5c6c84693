"""Shared exception types.

Every error raised on purpose by this package derives from AnamnesisError so
callers can catch the whole family with one clause.  The subclasses also
inherit the closest builtin (ValueError, LookupError, RuntimeError) so generic
handlers keep working.
"""


class AnamnesisError(Exception):
    """Base class for all package errors."""


class ContractError(AnamnesisError, ValueError):
    """A documented precondition was violated by the caller."""


class SchemaError(AnamnesisError, ValueError):
    """A record in an input file is malformed."""


class IntegrityError(AnamnesisError, ValueError):
    """Records are individually well-formed but reference each other badly."""


class NotFoundError(AnamnesisError, LookupError):
    """A referenced entity does not exist."""


class GenerationError(AnamnesisError, RuntimeError):
    """A text generator failed to produce usable output."""


class ExternalServiceError(AnamnesisError, RuntimeError):
    """A remote dependency failed or timed out."""


class SessionError(AnamnesisError, LookupError):
    """A conversation session id is unknown or in the wrong state."""


class ReplayError(AnamnesisError, ValueError):
    """A journal could not be replayed."""


class RankError(AnamnesisError, ValueError):
    """A decomposition was requested with more components than the data has."""


class TrainingError(AnamnesisError, ValueError):
    """A model cannot be trained from the data given."""


class ExhaustionError(AnamnesisError, RuntimeError):
    """A retry budget ran out before the requested amount of work finished."""
