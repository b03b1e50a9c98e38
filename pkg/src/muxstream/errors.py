"""Exception types shared across the runtime."""


class ConfigError(ValueError):
    """Invalid model or run configuration."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class ContractError(RuntimeError):
    """A caller violated an operation's precondition."""


class InputError(ValueError):
    """Malformed numeric input (empty vectors, non-finite values, bad distributions)."""


class TraceValidationError(ValueError):
    """A trace file failed to parse or violates trace invariants."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
