"""Environment interaction: skill lookup, script generation, verification and caching.

A task from the decision layer is split into ordered subtasks. Each subtask
is first looked up in the character's personal skill library; on a miss a
script is generated against the full action listing, verified (parse, schema,
dry-run on a cloned world) and executed. Failed attempts go back to the model
with the failure message, up to a fixed number of attempts. Every generation
round is logged as a (prompt, script, outcome) training pair.
"""

from __future__ import annotations

import json
import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from ..bridge import LLMBridge
from ..errors import IoFailure, ParseError, RetriesExhausted, WorldDesync
from ..ltm import embed
from ..persona import Persona
from ..prompts import render
from ..working_memory import WorkingMemory, WorkingMemoryEntry
from ..world import PUBLIC_API_NAMES, ActionOutcome, ApiSpec, World, public_api_registry
from .dsl import Call, If, Repeat, Script, extract_script, format_script, parse_script

logger = logging.getLogger(__name__)

MAX_STEPS = 1024
MAX_EXPANSION = 8
TRAINING_LOG_MAGIC = "#larp-training v1"


@dataclass(frozen=True)
class VerificationReport:
    parse_ok: bool
    schema_ok: bool = False
    dry_run_ok: bool = False
    failure_stage: str = "none"  # none | parse | schema | dry_run
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.parse_ok and self.schema_ok and self.dry_run_ok


@dataclass
class SkillEntry:
    name: str
    task_description: str
    key: tuple[float, ...]
    script: Script
    created_at: int = 0
    success_count: int = 0
    failure_count: int = 0

    def api_spec(self, owner: str) -> ApiSpec:
        return ApiSpec(self.name, (), f"performs: {self.task_description}", "personal", owner)


def _slug(text: str) -> str:
    s = re.sub(r"[^a-z0-9]+", "_", text.lower()).strip("_")[:40].strip("_")
    return s or "skill"


class SkillLibrary:
    """Per-character personal API library of (task, script) pairs."""

    def __init__(self, owner: str, threshold: float = 0.85):
        self.owner = owner
        self.threshold = threshold
        self.entries: list[SkillEntry] = []

    def __len__(self) -> int:
        return len(self.entries)

    def lookup(self, task: str) -> tuple[SkillEntry, float] | None:
        if not self.entries:
            return None
        q = embed(task)
        best = None
        for idx, entry in enumerate(self.entries):
            sim = sum(a * b for a, b in zip(q, entry.key))
            rank = (sim, entry.success_count, entry.created_at, idx)
            if best is None or rank > best[0]:
                best = (rank, entry, sim)
        _, entry, sim = best
        return (entry, sim) if sim >= self.threshold - 1e-12 else None

    def add(self, task: str, script: Script, now: int) -> SkillEntry:
        base = _slug(task)
        taken = {e.name for e in self.entries} | PUBLIC_API_NAMES
        name, n = base, 2
        while name in taken:
            name, n = f"{base}_{n}", n + 1
        entry = SkillEntry(name, task, embed(task), script, created_at=now)
        self.entries.append(entry)
        return entry

    def scripts(self) -> dict[str, Script]:
        return {e.name: e.script for e in self.entries}

    def api_specs(self) -> list[ApiSpec]:
        return [e.api_spec(self.owner) for e in self.entries]

    def dump(self) -> str:
        if not self.entries:
            return "(no learned skills)"
        out = []
        for e in self.entries:
            out.append(
                f"{e.name}: {e.task_description!r} (ok={e.success_count}, failed={e.failure_count}, t={e.created_at})"
            )
            out.extend("    " + line for line in format_script(e.script).splitlines())
        return "\n".join(out)

    def to_state(self) -> dict:
        return {
            "owner": self.owner,
            "threshold": self.threshold,
            "entries": [
                {
                    "name": e.name,
                    "task": e.task_description,
                    "script": format_script(e.script),
                    "created_at": e.created_at,
                    "success_count": e.success_count,
                    "failure_count": e.failure_count,
                }
                for e in self.entries
            ],
        }

    @classmethod
    def from_state(cls, state: dict) -> "SkillLibrary":
        lib = cls(state["owner"], state["threshold"])
        for e in state["entries"]:
            lib.entries.append(
                SkillEntry(
                    e["name"],
                    e["task"],
                    embed(e["task"]),
                    parse_script(e["script"]),
                    e["created_at"],
                    e["success_count"],
                    e["failure_count"],
                )
            )
        return lib


# ---------------------------------------------------------------------------
# schema check, dry-run and execution


def check_schema(script: Script, api_specs: Sequence[ApiSpec]) -> str | None:
    """Return a message naming the first bad call, or None if every call fits its API."""
    specs = {s.name: s for s in api_specs}

    def check_call(call: Call, as_condition: bool) -> str | None:
        spec = specs.get(call.api)
        if spec is None:
            return f"call {call}: unknown API {call.api!r}"
        if as_condition and spec.mutating:
            return f"condition {call}: {call.api} is an action, not a predicate"
        if not as_condition and not spec.mutating:
            return f"call {call}: {call.api} is a predicate and can only be used in 'if'"
        given = call.arg_dict()
        wanted = dict(spec.params)
        if set(given) != set(wanted):
            return (
                f"call {call}: {call.api} takes ({', '.join(wanted) or 'no arguments'}), "
                f"got ({', '.join(given) or 'no arguments'})"
            )
        for name, ptype in spec.params:
            value = given[name]
            ok = isinstance(value, int) if ptype == "integer" else isinstance(value, str)
            if not ok:
                return f"call {call}: argument {name} must be {ptype}"
        return None

    def walk(stmts) -> str | None:
        for s in stmts:
            if isinstance(s, Call):
                err = check_call(s, False)
            elif isinstance(s, If):
                err = check_call(s.condition, True) or walk(s.then) or walk(s.orelse or ())
            else:
                err = walk(s.body)
            if err:
                return err
        return None

    return walk(script.body)


class _Executor:
    def __init__(self, world: World, character_id: str, personal: dict[str, Script]):
        self.world = world
        self.character_id = character_id
        self.personal = personal
        self.outcomes: list[ActionOutcome] = []
        self.skipped: list[str] = []
        self.failure: tuple[Call, ActionOutcome | None, str] | None = None
        self.steps = 0

    def run(self, stmts, expansion: int = 0) -> None:
        for s in stmts:
            if self.failure is not None:
                self.skipped.extend(str(c) for c in _calls_of(s))
                continue
            if isinstance(s, Call):
                self.call(s, expansion)
            elif isinstance(s, If):
                branch = s.then if self.world.check(self.character_id, s.condition.api, s.condition.arg_dict()) else s.orelse
                if branch:
                    self.run(branch, expansion)
            else:
                for _ in range(s.count):
                    if self.failure is not None:
                        self.skipped.extend(str(c) for c in _calls_of(s))
                        break
                    self.run(s.body, expansion)

    def call(self, c: Call, expansion: int) -> None:
        if c.api in self.personal:
            if expansion >= MAX_EXPANSION:
                self.failure = (c, None, f"call {c} failed: personal APIs nested too deeply")
                return
            self.run(self.personal[c.api].body, expansion + 1)
            return
        self.steps += 1
        if self.steps > MAX_STEPS:
            self.failure = (c, None, f"call {c} failed: step budget of {MAX_STEPS} exceeded")
            return
        outcome = self.world.step(self.character_id, c.api, c.arg_dict())
        self.outcomes.append(outcome)
        if not outcome.success:
            self.failure = (c, outcome, f"call {c} failed: {outcome.message}")


def _calls_of(stmt):
    if isinstance(stmt, Call):
        return [stmt]
    return list(Script((stmt,)).calls())


def verify(
    script: Script | str,
    api_specs: Sequence[ApiSpec],
    world_snapshot: World,
    character_id: str,
    personal: dict[str, Script] | None = None,
) -> VerificationReport:
    if isinstance(script, str):
        try:
            script = parse_script(extract_script(script))
        except ParseError as exc:
            return VerificationReport(False, failure_stage="parse", message=f"parse error: {exc}")
    err = check_schema(script, api_specs)
    if err:
        return VerificationReport(True, False, failure_stage="schema", message=err)
    clone = world_snapshot.snapshot()
    ex = _Executor(clone, character_id, personal or {})
    ex.run(script.body)
    if ex.failure is not None:
        return VerificationReport(True, True, False, "dry_run", ex.failure[2])
    return VerificationReport(True, True, True, "none", "ok")


def execute(
    script: Script, world: World, character_id: str, personal: dict[str, Script] | None = None
) -> list[ActionOutcome]:
    ex = _Executor(world, character_id, personal or {})
    ex.run(script.body)
    if ex.failure is not None:
        raise WorldDesync(ex.failure[2], ex.outcomes, ex.skipped)
    return ex.outcomes


# ---------------------------------------------------------------------------
# training pairs


@dataclass
class TrainingPair:
    round: int
    character_id: str
    task: str
    role: str
    prompt_text: str
    generated_script_text: str
    outcome: str  # success | failed
    failure_stage: str
    message: str
    tick: int

    def to_json(self) -> str:
        return json.dumps(vars(self), ensure_ascii=False, sort_keys=True)


class TrainingLog:
    """Append-only log of generation rounds; one JSON object per line after a magic line."""

    def __init__(self, path: str | os.PathLike | None = None):
        self.path = Path(path) if path is not None else None
        self.records: list[TrainingPair] = []

    def append(self, pair: TrainingPair) -> None:
        self.records.append(pair)
        if self.path is None:
            return
        try:
            fresh = not self.path.exists() or self.path.stat().st_size == 0
            with self.path.open("a", encoding="utf-8") as fh:
                if fresh:
                    fh.write(TRAINING_LOG_MAGIC + "\n")
                fh.write(pair.to_json() + "\n")
        except OSError as exc:
            raise IoFailure(f"cannot append to {self.path}: {exc}") from exc

    @staticmethod
    def read(path: str | os.PathLike) -> list[TrainingPair]:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or lines[0] != TRAINING_LOG_MAGIC:
            raise ValueError(f"{path}: not a training log")
        return [TrainingPair(**json.loads(line)) for line in lines[1:] if line.strip()]


# ---------------------------------------------------------------------------
# the interaction loop


@dataclass
class ActionConfig:
    skill_threshold: float = 0.85
    max_attempts: int = 3


@dataclass
class SubtaskResult:
    task: str
    success: bool
    outcomes: list[ActionOutcome] = field(default_factory=list)
    cache_hit: bool = False
    attempts: int = 0
    skill: str | None = None
    message: str = ""


@dataclass
class TaskResult:
    task: str
    subtasks: list[str]
    results: list[SubtaskResult]
    events: list[dict]

    @property
    def success(self) -> bool:
        return len(self.results) == len(self.subtasks) and all(r.success for r in self.results)


def _memory_text(snapshot: Sequence[WorkingMemoryEntry]) -> str:
    return "\n".join(f"- {e.key}: {e.value}" for e in snapshot) or "(empty)"


def _numbered_lines(text: str) -> list[str]:
    items = []
    for line in text.splitlines():
        m = re.match(r"\s*\d+\s*[.):]\s*(.+?)\s*$", line)
        if m:
            items.append(m.group(1))
    return items


class ActionSpace:
    def __init__(
        self,
        persona: Persona,
        bridge: LLMBridge,
        library: SkillLibrary | None = None,
        training_log: TrainingLog | None = None,
        config: ActionConfig | None = None,
    ):
        self.persona = persona
        self.character_id = persona.character_id
        self.bridge = bridge
        self.config = config or ActionConfig()
        self.library = library or SkillLibrary(self.character_id, self.config.skill_threshold)
        self.training_log = training_log or TrainingLog()
        self._round = len(self.training_log.records)
        self.evicted: list[WorkingMemoryEntry] = []

    def _ask(self, role: str, prompt: str) -> str:
        return self.bridge.ask(role, prompt, system=self.persona.system_prompt())

    def api_specs(self) -> list[ApiSpec]:
        return public_api_registry() + self.library.api_specs()

    def decompose_task(self, task: str, memory: Sequence[WorkingMemoryEntry] = ()) -> list[str]:
        if not task.strip():
            raise ValueError("task must be non-empty")
        reply = self._ask("decompose", render("decompose", task=task, memory=_memory_text(memory)))
        if reply.strip().upper() == "ATOMIC":
            return [task]
        subtasks = _numbered_lines(reply)
        if not subtasks:
            logger.warning("empty decomposition for %r; treating it as atomic", task)
            return [task]
        return subtasks

    def lookup_skill(self, task: str) -> SkillEntry | None:
        hit = self.library.lookup(task)
        return hit[0] if hit else None

    def _api_listing(self, api_specs: Sequence[ApiSpec]) -> str:
        lines = []
        for s in api_specs:
            tag = "predicate" if not s.mutating else s.visibility
            lines.append(f"- {s.signature()} [{tag}] {s.precondition}")
        return "\n".join(lines)

    def codegen_prompt(self, task, api_specs, memory) -> str:
        return render("codegen", task=task, apis=self._api_listing(api_specs), memory=_memory_text(memory))

    def generate_script(self, task: str, api_specs: Sequence[ApiSpec], memory: Sequence[WorkingMemoryEntry] = ()) -> str:
        if not api_specs:
            raise ValueError("no APIs to generate against")
        return self._ask("codegen", self.codegen_prompt(task, api_specs, memory))

    def reflect_prompt(self, task: str, failed_script: str, failure: str) -> str:
        return render(
            "reflect_code",
            task=task,
            apis=self._api_listing(self.api_specs()),
            script=failed_script,
            failure=failure,
        )

    def reflect_on_failure(self, task: str, failed_script: str, report: VerificationReport | str) -> str:
        message = report.message if isinstance(report, VerificationReport) else str(report)
        return self._ask("reflect_code", self.reflect_prompt(task, failed_script, message))

    def cache_skill(self, task: str, script: Script, now: int) -> SkillEntry:
        return self.library.add(task, script, now)

    def log_training_pair(self, task, role, prompt, script_text, outcome, stage, message, tick) -> TrainingPair:
        self._round += 1
        pair = TrainingPair(
            self._round, self.character_id, task, role, prompt, script_text, outcome, stage, message, tick
        )
        self.training_log.append(pair)
        return pair

    def _verify_text(self, text: str, world: World) -> tuple[VerificationReport, Script | None]:
        try:
            script = parse_script(extract_script(text))
        except ParseError as exc:
            return VerificationReport(False, failure_stage="parse", message=f"parse error: {exc}"), None
        report = verify(script, self.api_specs(), world.snapshot(), self.character_id, self.library.scripts())
        return report, script

    def run_subtask(
        self, task: str, world: World, memory: Sequence[WorkingMemoryEntry] = (), events: list | None = None
    ) -> SubtaskResult:
        events = events if events is not None else []
        entry = self.lookup_skill(task)
        if entry is not None:
            report = verify(entry.script, self.api_specs(), world.snapshot(), self.character_id, self.library.scripts())
            if report.ok:
                try:
                    outcomes = execute(entry.script, world, self.character_id, self.library.scripts())
                except WorldDesync as exc:
                    entry.failure_count += 1
                    events.append({"event": "skill_desync", "task": task, "skill": entry.name, "message": str(exc)})
                else:
                    entry.success_count += 1
                    events.append({"event": "skill_cache_hit", "task": task, "skill": entry.name})
                    return SubtaskResult(task, True, outcomes, cache_hit=True, skill=entry.name)
            else:
                entry.failure_count += 1
                events.append(
                    {"event": "skill_stale", "task": task, "skill": entry.name, "message": report.message}
                )

        specs = self.api_specs()
        prompt = self.codegen_prompt(task, specs, memory)
        role = "codegen"
        text = self._ask(role, prompt)
        outcomes: list[ActionOutcome] = []
        message = ""
        for attempt in range(1, self.config.max_attempts + 1):
            report, script = self._verify_text(text, world)
            stage, message = report.failure_stage, report.message
            if report.ok:
                try:
                    outcomes = execute(script, world, self.character_id, self.library.scripts())
                except WorldDesync as exc:
                    outcomes = exc.outcomes
                    stage, message = "execute", str(exc)
                else:
                    self.log_training_pair(task, role, prompt, text, "success", "none", "ok", world.clock)
                    skill = self.cache_skill(task, script, world.clock)
                    events.append(
                        {"event": "skill_learned", "task": task, "skill": skill.name, "attempts": attempt}
                    )
                    return SubtaskResult(task, True, outcomes, attempts=attempt, skill=skill.name)
            self.log_training_pair(task, role, prompt, text, "failed", stage, message, world.clock)
            events.append({"event": "script_failed", "task": task, "attempt": attempt, "stage": stage, "message": message})
            if attempt == self.config.max_attempts:
                break
            role = "reflect_code"
            prompt = self.reflect_prompt(task, text, message)
            text = self._ask(role, prompt)
        raise RetriesExhausted(task, self.config.max_attempts, message)

    def run_task(
        self, task: str, world: World, wm: WorkingMemory | None = None, now: int | None = None
    ) -> TaskResult:
        now = world.clock if now is None else now
        memory = wm.snapshot() if wm is not None else []
        events: list[dict] = []
        subtasks = self.decompose_task(task, memory)
        events.append({"event": "decomposed", "task": task, "subtasks": subtasks})
        results = []
        for sub in subtasks:
            try:
                res = self.run_subtask(sub, world, memory, events)
            except RetriesExhausted as exc:
                res = SubtaskResult(sub, False, attempts=exc.attempts, message=exc.last_message)
                results.append(res)
                events.append({"event": "task_failed", "task": task, "subtask": sub, "message": exc.last_message})
                if wm is not None:
                    self.evicted += wm.put(
                        WorkingMemoryEntry(
                            "task_failed",
                            f"could not {sub}: {exc.last_message}",
                            "unit:action_space",
                            now,
                            0.9,
                        )
                    )
                break
            results.append(res)
        return TaskResult(task, subtasks, results, events)

