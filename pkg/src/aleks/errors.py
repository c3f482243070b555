"""Shared exception bases.

Concrete errors live next to the code that raises them; these bases exist
so the CLI can map failures onto its exit-code contract (1 = configuration,
2 = runtime, 3 = backend).
"""


class AleksError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(AleksError):
    """Invalid or unusable configuration input."""


class BackendError(AleksError):
    """A language-model backend could not produce a completion."""
