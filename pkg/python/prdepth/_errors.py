from __future__ import annotations


class PRDepthError(Exception):
    """Base class for every error raised by prdepth."""


class InvalidArgumentError(PRDepthError, ValueError):
    pass


class FormatError(PRDepthError):
    """A file on disk does not follow its declared format."""


class ConfigError(PRDepthError):
    pass


class NonFiniteError(PRDepthError, FloatingPointError):
    """A computation produced NaN or infinity."""
