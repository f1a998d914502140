"""Action space: the bounded script language and the skill-learning loop."""

from .dsl import (
    MAX_CALLS,
    MAX_DEPTH,
    MAX_REPEAT,
    Call,
    If,
    Repeat,
    Script,
    extract_script,
    format_script,
    parse_call,
    parse_script,
)
from .skills import (
    ActionConfig,
    ActionSpace,
    SkillEntry,
    SkillLibrary,
    SubtaskResult,
    TaskResult,
    TrainingLog,
    TrainingPair,
    VerificationReport,
    check_schema,
    execute,
    verify,
)

__all__ = [
    "MAX_CALLS",
    "MAX_DEPTH",
    "MAX_REPEAT",
    "ActionConfig",
    "ActionSpace",
    "Call",
    "If",
    "Repeat",
    "Script",
    "SkillEntry",
    "SkillLibrary",
    "SubtaskResult",
    "TaskResult",
    "TrainingLog",
    "TrainingPair",
    "VerificationReport",
    "check_schema",
    "execute",
    "extract_script",
    "format_script",
    "parse_call",
    "parse_script",
    "verify",
]
