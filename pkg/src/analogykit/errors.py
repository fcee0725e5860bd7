"""Exception hierarchy shared by every pipeline module.

The API layer maps these onto HTTP statuses and the CLI maps them onto
exit codes, so new error types should subclass one of the categories
below rather than raising bare exceptions.
"""

from __future__ import annotations


class AnalogyKitError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(AnalogyKitError):
    """Caller-supplied input violates a domain invariant."""


class NotFoundError(AnalogyKitError):
    """A session, blob, or job id does not exist."""


class WrongStateError(AnalogyKitError):
    """Operation called while the session is in an incompatible state."""

    def __init__(self, current: str, expected: tuple[str, ...]):
        self.current = current
        self.expected = expected
        super().__init__(
            f"session is in state '{current}', operation requires "
            f"{' or '.join(repr(e) for e in expected)}"
        )


class SessionBusyError(AnalogyKitError):
    """A stage is already running for this session."""

    def __init__(self, session_id: str, running_kind: str):
        self.session_id = session_id
        self.running_kind = running_kind
        super().__init__(
            f"session {session_id} is busy running a '{running_kind}' job"
        )


class StageError(AnalogyKitError):
    """A pipeline stage failed for content reasons (bad scene count,
    indistinct analogies, unparseable model output after repair)."""


class ParseError(StageError):
    """Model response did not validate against the template schema,
    even after the structured-repair pass."""


class GatewayError(AnalogyKitError):
    """Base class for model-backend failures."""


class GatewayTimeoutError(GatewayError):
    """The backend did not answer within the configured timeout."""


class GatewayAuthError(GatewayError):
    """The backend rejected our credentials (401/403)."""


class RetriesExhaustedError(GatewayError):
    """All retry attempts failed."""

    def __init__(self, message: str, attempts: int):
        self.attempts = attempts
        super().__init__(f"{message} (after {attempts} attempts)")


class BackendResponseError(GatewayError):
    """The backend answered with an unusable response (non-retryable 4xx,
    undecodable body, undecodable image)."""


class IntegrityError(AnalogyKitError):
    """Stored blob bytes no longer match their content digest."""


class StorageError(AnalogyKitError):
    """Filesystem-level persistence failure."""


class ConfigError(AnalogyKitError):
    """Service configuration is missing or malformed; names the field."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"config field '{field}': {message}")


class EncoderMissingError(AnalogyKitError):
    """No video encoder on the executable search path and fallback disabled."""


class EncoderError(AnalogyKitError):
    """The external encoder exited nonzero; stderr is captured."""

    def __init__(self, message: str, stderr: str = ""):
        self.stderr = stderr
        super().__init__(message if not stderr else f"{message}: {stderr.strip()[-500:]}")
