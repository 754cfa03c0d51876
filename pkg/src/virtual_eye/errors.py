"""Exception types shared across the package."""


class UsageError(ValueError):
    """Caller passed arguments that violate an operation's preconditions."""


class MalformedFrameError(ValueError):
    """An RGB-D frame whose color and depth rasters disagree."""


class ParseError(ValueError):
    """A model response that does not follow the mandated output format."""

    def __init__(self, message: str, text: str):
        super().__init__(f"{message}: {text!r}")
        self.text = text


class SelectionFailed(RuntimeError):
    """Viewpoint selection exhausted its retries without a valid answer."""

    def __init__(self, message: str, transcript: list):
        super().__init__(message)
        self.transcript = transcript


class EncodeOutOfView(ValueError):
    """The expert action does not project inside the virtual image."""


class CorruptDatasetError(IOError):
    """Dataset file is truncated or has a bad magic/version."""


class NonFiniteLossError(FloatingPointError):
    """Training produced a NaN or infinite loss."""


class ExternalServiceError(RuntimeError):
    """The chat-completion endpoint failed or returned an unusable payload."""
