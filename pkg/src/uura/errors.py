"""Exception types shared across the package."""


class DomainError(ValueError):
    """An input lies outside the mathematical domain of an operation."""


class ConfigError(ValueError):
    """A configuration value violates its documented invariants."""


class NumericalError(ArithmeticError):
    """A numerical safeguard tripped and could not be recovered."""
