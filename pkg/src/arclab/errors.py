"""Shared exception types, mapped to CLI exit codes in `arclab.cli`."""


class ConfigError(ValueError):
    """Bad configuration: unknown keys, malformed files, invalid flag combinations."""


class DivergenceError(RuntimeError):
    """A training or sampling step produced a non-finite value.

    Carries an optional `diagnostics` dict (recent losses/logits) for post-mortems.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
