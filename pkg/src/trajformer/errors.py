"""Exception types that map onto the CLI exit codes."""


class ConfigError(Exception):
    """Invalid configuration or usage (exit code 1)."""


class DataError(Exception):
    """Malformed or inconsistent input data (exit code 2)."""


class DivergenceError(Exception):
    """Non-finite values produced during training or inference (exit code 3)."""
