"""Exception types shared across the package.

The split matters at the command line: configuration problems exit with
code 1, numerical-domain violations (a scheme asked to run outside its
validity region, a state that left a map's domain) exit with code 2.
"""

__all__ = ["CirLabError", "ConfigError", "DomainError", "InadmissibleSchemeError"]


class CirLabError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(CirLabError, ValueError):
    """Invalid configuration, arguments, or file contents."""


class DomainError(CirLabError, ArithmeticError):
    """A numerical quantity left the domain a formula or scheme requires."""


class InadmissibleSchemeError(DomainError):
    """Scheme/controller/parameter combination outside the scheme's validity region."""
