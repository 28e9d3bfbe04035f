"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument violates an operation's precondition."""


class ConfigError(ValueError):
    """A configuration value or file is invalid (field path in the message)."""


class FormatError(ValueError):
    """A serialized file is malformed (line number in the message when known)."""
