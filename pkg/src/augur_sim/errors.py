class AugurError(Exception):
    """Base error; ``code`` is a stable machine-readable reason."""

    code = "error"

    def __init__(self, message: str = "", code: str | None = None):
        super().__init__(message or (code or self.code))
        if code is not None:
            self.code = code


class ValidationError(AugurError):
    code = "invalid"


class ScriptError(AugurError):
    code = "script-failure"


class ConsensusError(AugurError):
    code = "consensus-degenerate"
