"""Exception types shared across the runtime."""

from __future__ import annotations


class LarpError(Exception):
    """Base class for every error raised by this package."""


class ParseError(LarpError):
    """Raised by the logic-language and action-DSL parsers.

    Carries a 1-based line/column and the expectation that failed, so the
    message can be shown to whoever wrote the offending text.
    """

    def __init__(self, message: str, line: int = 0, column: int = 0, expected: str | None = None):
        self.line = line
        self.column = column
        self.expected = expected
        self.reason = message
        where = f"line {line}, column {column}: " if line else ""
        tail = f" (expected {expected})" if expected else ""
        super().__init__(f"{where}{message}{tail}")


# llm bridge
class BridgeError(LarpError):
    pass


class TranscriptExhausted(BridgeError):
    def __init__(self, role_tag: str, detail: str = ""):
        self.role_tag = role_tag
        self.detail = detail
        super().__init__(f"no scripted reply left for role {role_tag!r}{': ' + detail if detail else ''}")


class BackendUnreachable(BridgeError):
    pass


class BackendRejected(BridgeError):
    def __init__(self, status: int, body: str = ""):
        self.status = status
        super().__init__(f"backend rejected request with HTTP {status}: {body[:200]}")


class BackendTimeout(BridgeError):
    pass


# long-term memory
class InvalidRecord(LarpError):
    pass


class UnknownId(LarpError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its argument otherwise
        return Exception.__str__(self)


class IoFailure(LarpError):
    pass


class CorruptSnapshot(LarpError):
    pass


# logic language
class TooManyProbabilisticFacts(LarpError):
    pass


class ArityConflict(LarpError):
    pass


# decision engine
class DuplicateUnitId(LarpError):
    pass


class MalformedFinalOutput(LarpError):
    pass


# action space
class BoundsExceeded(ParseError):
    pass


class WorldDesync(LarpError):
    def __init__(self, message: str, outcomes=None, skipped=None):
        self.outcomes = list(outcomes or [])
        self.skipped = list(skipped or [])
        super().__init__(message)


class RetriesExhausted(LarpError):
    def __init__(self, task: str, attempts: int, last_message: str = ""):
        self.task = task
        self.attempts = attempts
        self.last_message = last_message
        super().__init__(f"task {task!r} failed after {attempts} attempts: {last_message}")


# simworld / scenario
class UnknownCharacter(LarpError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class ScenarioParseError(LarpError):
    pass
