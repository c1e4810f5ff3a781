"""Exception hierarchy shared by every promptsmith module."""

from __future__ import annotations


class PromptsmithError(Exception):
    """Base class for all errors raised by this package."""


# task data


class MalformedLine(PromptsmithError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class UnknownLabel(PromptsmithError):
    def __init__(self, sample_id: str, label: str):
        super().__init__(f"sample {sample_id!r}: label {label!r} is not in the task label set")
        self.sample_id = sample_id
        self.label = label


class DuplicateSampleId(PromptsmithError):
    def __init__(self, sample_id: str):
        super().__init__(f"duplicate sample_id {sample_id!r}")
        self.sample_id = sample_id


class EmptyDataset(PromptsmithError):
    pass


class BadFractions(PromptsmithError):
    pass


class InvalidTask(PromptsmithError):
    pass


# strategies


class MissingOptimizer(PromptsmithError):
    pass


class OptimizerEmptyResponse(PromptsmithError):
    pass


class ComboRepeat(PromptsmithError):
    pass


class UnknownStrategy(PromptsmithError):
    pass


# model backends


class BackendError(PromptsmithError):
    """A model call failed."""


class Transport(BackendError):
    def __init__(self, code: int | None, detail: str = ""):
        super().__init__(f"transport error (status={code}) {detail}".strip())
        self.code = code
        self.detail = detail

    @property
    def transient(self) -> bool:
        return self.code is None or self.code >= 500


class RateLimited(BackendError):
    def __init__(self, retry_after: float | None = None):
        super().__init__(f"rate limited (retry_after={retry_after})")
        self.retry_after = retry_after


class AuthMissing(BackendError):
    pass


class RetriesExhausted(BackendError):
    def __init__(self, attempts: int, last_error: Exception):
        super().__init__(f"gave up after {attempts} attempts: {last_error}")
        self.attempts = attempts
        self.last_error = last_error


class AllSamplesFailed(BackendError):
    pass


class NoJsonFound(PromptsmithError):
    pass


class MissingKeys(PromptsmithError):
    def __init__(self, keys: list[str]):
        super().__init__(f"missing keys: {keys}")
        self.keys = keys


# evaluation


class GoldNotInLabelSet(PromptsmithError):
    pass


# memory


class RewardOutOfRange(PromptsmithError):
    pass


class EmptyStats(PromptsmithError):
    pass


class SimilarityProviderFailure(PromptsmithError):
    pass


class SchemaVersionMismatch(PromptsmithError):
    pass


class CorruptFile(PromptsmithError):
    pass


class VersionConflict(PromptsmithError):
    def __init__(self, expected: int | None, found: int | None):
        super().__init__(f"memory file changed on disk (expected version {expected}, found {found})")
        self.expected = expected
        self.found = found


# search / refinement


class BudgetExceeded(PromptsmithError):
    pass


class BudgetExhausted(PromptsmithError):
    pass


class NoReference(PromptsmithError):
    pass


class AnalysisUnparseable(PromptsmithError):
    pass


class EmptyRewrite(PromptsmithError):
    pass


class RunAborted(PromptsmithError):
    """A refinement run stopped on an error; ``run`` holds the partial result."""

    def __init__(self, run, cause: Exception):
        super().__init__(f"refinement aborted: {cause}")
        self.run = run
        self.cause = cause


class ConfigError(PromptsmithError):
    pass
