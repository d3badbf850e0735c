"""Exception hierarchy shared across the package."""


class ReviewLabError(Exception):
    """Base class for all reviewlab errors."""


class ConfigError(ReviewLabError):
    """Invalid configuration: bad keys/values or a violated model assumption.

    The CLI maps this class to exit code 2.
    """


class UnsupportedModelError(ConfigError):
    """An operation was requested for a model family it does not support."""
