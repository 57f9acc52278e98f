"""Exception hierarchy shared across the package.

CLI exit-code mapping: ValidationError/FormatError -> 2,
NumericalError/GenerationError -> 3.
"""


class EqsimError(Exception):
    """Base class for all package errors."""


class ValidationError(EqsimError):
    """Bad inputs, out-of-range arguments, or inconsistent configuration."""


class ConfigurationError(ValidationError):
    """A config value that cannot be wired into a runnable component."""


class FormatError(EqsimError):
    """On-disk artifact violates its documented format."""


class GenerationError(EqsimError):
    """Scene generation could not satisfy its constraints within budget."""


class NumericalError(EqsimError):
    """Non-finite fields or divergence detected during simulation/rollout."""
