"""Exception types shared across the package."""


class SplatError(Exception):
    """Base class for all package-specific errors."""


class InvalidParameterError(SplatError, ValueError):
    """A value violates a type invariant (non-positive scale, bad quaternion...)."""


class InvalidInputError(SplatError, ValueError):
    """Operation inputs are malformed (resolution mismatch, empty point set...)."""


class StateMismatchError(SplatError, RuntimeError):
    """Companion state (optimizer moments, gradient stats) is out of sync
    with the scene generation it claims to describe."""


class ConfigError(SplatError, ValueError):
    """Experiment configuration is missing, malformed, or inconsistent."""
