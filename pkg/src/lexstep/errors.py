"""Exception hierarchy shared across the package."""

from __future__ import annotations


class LexstepError(Exception):
    """Base class for every error raised by this package."""


class CorpusError(LexstepError, ValueError):
    """A corpus line could not be parsed or failed validation."""

    def __init__(self, message: str, *, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class BackendError(LexstepError):
    pass


class TransportError(BackendError):
    """Retryable failure talking to a remote backend."""


class DecodeError(BackendError):
    """Backend answered, but the payload was not what the caller expected."""

    def __init__(self, message: str, raw: str | None = None):
        self.raw = raw
        super().__init__(message)


class UnmatchedPromptError(BackendError):
    def __init__(self, fingerprint: str, template_id: str, sample_index: int):
        self.fingerprint = fingerprint
        self.template_id = template_id
        self.sample_index = sample_index
        super().__init__(
            f"scripted backend has no response for prompt {fingerprint} "
            f"(template {template_id!r}, sample {sample_index})"
        )


class JudgeFormatError(BackendError):
    """Two consecutive judge outputs failed to parse against the schema."""

    def __init__(self, message: str, raw_payloads: list[str]):
        self.raw_payloads = raw_payloads
        super().__init__(message)


class ScoreRangeError(BackendError, ValueError):
    """A perspective score fell outside [0, 1]."""


class DisputeIdentificationError(LexstepError):
    pass


class VerificationError(LexstepError):
    def __init__(self, perspective: str, cause: Exception):
        self.perspective = perspective
        self.cause = cause
        super().__init__(f"verification failed for perspective {perspective}: {cause}")


class AttributionError(LexstepError):
    pass


class StrategyUnavailable(LexstepError):
    """A correction strategy needs a service that was not configured."""


class StepError(LexstepError):
    """Component failure wrapped with the index of the step it happened on."""

    def __init__(self, step_index: int, cause: Exception):
        self.step_index = step_index
        self.cause = cause
        super().__init__(f"step {step_index}: {type(cause).__name__}: {cause}")


class AnnotationError(LexstepError):
    pass


class AlignmentError(LexstepError, ValueError):
    def __init__(self, message: str, orphans: list | None = None):
        self.orphans = list(orphans or [])
        super().__init__(message)


class CatalogError(LexstepError, ValueError):
    def __init__(self, message: str, *, line: int | None = None):
        self.line = line
        super().__init__((f"line {line}: " if line is not None else "") + message)


class StoreError(LexstepError, ValueError):
    pass


class SelectionError(LexstepError):
    pass


class ConfigError(LexstepError, ValueError):
    pass
