class ConfigError(ValueError):
    """Invalid configuration or input file. The CLI exits with code 2."""

    exit_code = 2


class NumericalError(ArithmeticError):
    """Numerical failure without a usable fallback. The CLI exits with code 3."""

    exit_code = 3


class NumericalWarning(UserWarning):
    """A numerical routine took a documented fallback path."""
