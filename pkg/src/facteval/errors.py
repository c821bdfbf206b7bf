"""Exception types raised across the evaluation pipeline."""

from __future__ import annotations


class FactEvalError(Exception):
    """Base class for all errors raised by this package."""


class InputRecordError(FactEvalError):
    """A record in an input file failed validation."""


class MissingFieldError(InputRecordError):
    def __init__(self, field: str, record_hint: str = ""):
        self.field = field
        super().__init__(f"missing required field '{field}'" + (f" in {record_hint}" if record_hint else ""))


class EmptyQueryError(InputRecordError):
    def __init__(self, prompt_id: str):
        self.prompt_id = prompt_id
        super().__init__(f"prompt '{prompt_id}' has an empty query")


class DuplicatePromptIdError(InputRecordError):
    def __init__(self, prompt_id: str):
        self.prompt_id = prompt_id
        super().__init__(f"duplicate prompt_id '{prompt_id}'")


class GatewayError(FactEvalError):
    """Base class for LLM backend failures."""


class NetworkError(GatewayError):
    pass


class RateLimitedError(GatewayError):
    pass


class BackendRefusedError(GatewayError):
    pass


class DimensionMismatchError(GatewayError):
    pass


class SourceUnavailableError(FactEvalError):
    pass


class EmptyCorpusError(FactEvalError):
    pass


class MalformedCorpusRecordError(FactEvalError):
    def __init__(self, message: str, line_no: int):
        self.line_no = line_no
        super().__init__(f"{message} (line {line_no})")


class UnparseableReplyError(FactEvalError):
    """An LLM reply could not be parsed even after one re-ask."""


class JudgeJsonInvalidError(FactEvalError):
    """A judge reply was not valid strict JSON for the expected schema."""


class EmptyResponseError(FactEvalError):
    pass


class EmptyReferenceSetError(FactEvalError):
    pass


class MisalignedInputsError(FactEvalError):
    """Coverage labels and scored facts do not align 1:1 by fact_id."""


class AllUndefinedError(FactEvalError):
    """No prompt contributed a single defined metric to the aggregate."""


class FatalConfigError(FactEvalError):
    pass


class CorruptArtifactError(FactEvalError):
    def __init__(self, path: str, line_no: int, reason: str):
        self.path = path
        self.line_no = line_no
        super().__init__(f"corrupt artifact {path}:{line_no}: {reason}")
