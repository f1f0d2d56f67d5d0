"""Exception types shared by the library and the command line (exit codes 2 and 3)."""


class InputError(ValueError):
    """Malformed or inconsistent input data."""


class ConfigError(ValueError):
    """Invalid configuration value or option."""
