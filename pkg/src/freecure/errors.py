"""Exception types shared across the toolkit."""


class FreecureError(Exception):
    """Base class for toolkit specific failures."""


class InvalidPromptError(FreecureError):
    """Prompt text violates the placeholder contract."""


class CapabilityError(FreecureError):
    """A backend or adapter cannot satisfy the requested operation."""


class TensorFormatError(FreecureError):
    """Malformed tensor container payload."""


class ManifestError(FreecureError):
    """Run manifest failed validation.

    ``field`` names the offending entry as a path, e.g.
    ``attributes[1].token_span``.
    """

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class NoRecordsError(FreecureError):
    """An attention aggregation matched no captured records."""


class StageError(FreecureError):
    """A pipeline stage failed; carries the stage tag for diagnostics."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[stage:{stage}] {cause}")
