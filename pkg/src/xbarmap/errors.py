"""Exception hierarchy shared across the package."""


class XbarError(Exception):
    """Base class for all package errors."""


class ContractError(XbarError, ValueError):
    """Inputs violate an operation's preconditions (shapes, fingerprints)."""


class DomainError(XbarError, ValueError):
    """A numeric argument lies outside its admissible range."""


class NumericError(XbarError, ArithmeticError):
    """A solve or fit failed numerically (singular system, divergence)."""


class ResourceError(XbarError, MemoryError):
    """Problem size exceeds what the solver will allocate."""


class ConfigError(XbarError):
    """Malformed configuration file."""


class MissingArtifactError(XbarError, FileNotFoundError):
    """A pipeline step ran before the step that produces its input."""
