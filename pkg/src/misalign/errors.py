"""Exception hierarchy shared by the library and the CLI.

The CLI maps each class onto an exit code, so library code raises these
instead of bare ``ValueError`` whenever the failure is user-facing.
"""


class MisalignError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(MisalignError, ValueError):
    """Bad configuration or usage (exit code 1)."""

    exit_code = 1


class DataValidationError(MisalignError, ValueError):
    """Input data failed validation (exit code 2)."""

    exit_code = 2


class UntestablePairError(DataValidationError):
    """A (question, subgroup) pair has an empty human or LLM side."""

    def __init__(self, question_id, subgroup, reason):
        self.question_id = question_id
        self.subgroup = subgroup
        self.reason = reason
        super().__init__(f"untestable pair ({question_id}, {subgroup}): {reason}")


class EnumerationTooLargeError(MisalignError, ValueError):
    """Exact permutation enumeration would exceed the configured budget."""


class UpstreamError(MisalignError, RuntimeError):
    """The chat-completions endpoint failed (exit code 3)."""

    exit_code = 3
