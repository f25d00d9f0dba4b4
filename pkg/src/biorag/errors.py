"""Exception types shared across the package."""


class BioragError(Exception):
    """Base class for all package errors."""


class ConfigError(BioragError):
    """Invalid or inconsistent configuration, caught before any work starts."""


class ProviderError(BioragError):
    """A provider call failed permanently (after retries, if applicable)."""


class ProviderAuthError(ProviderError):
    """Authentication or authorization failure; never retried."""


class StoreError(BioragError):
    """Vector store failure."""


class StoreFormatError(StoreError):
    """Store file is structurally invalid (bad magic, version, or layout)."""


class StoreChecksumError(StoreError):
    """Store file contents do not match the recorded checksum."""


class DimensionMismatchError(StoreError):
    """Vector dimensionality does not match the store."""
