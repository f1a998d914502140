"""Ordered cluster of processing units that turns working memory into a decision.

Each unit reads the working-memory snapshot plus the current observation and
writes zero or more keyed entries back before the next unit runs. The
``format`` unit's output is the decision: either ``SAY: <utterance>`` or
``TASKS:`` followed by numbered task lines. A conflict check then compares
the decision against the persona and may pass, reject or rewrite it.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

from .bridge import LLMBridge
from .errors import DuplicateUnitId, MalformedFinalOutput
from .persona import Persona
from .prompts import render
from .working_memory import WorkingMemory, WorkingMemoryEntry
from .world import Observation

logger = logging.getLogger(__name__)

FALLBACK_UTTERANCE = "…"
DEFAULT_ORDER = ("affect", "intent", "format")

_POSITIVE = frozenset(
    """good great glad happy thanks thank welcome friend friendly kind love safe help helpful
    gift well fine hello morning fresh clean calm peace bright warm fair""".split()
)
_NEGATIVE = frozenset(
    """bad angry sad hate enemy danger dangerous broken thief steal stole hurt fire attack
    afraid fear dead dirty lost cold threat insult rude empty dry""".split()
)


def affect_valence(text: str) -> float:
    """Lexicon valence in [-1, 1]: (positive - negative) / (positive + negative)."""
    words = re.findall(r"[a-z]+", text.lower())
    pos = sum(w in _POSITIVE for w in words)
    neg = sum(w in _NEGATIVE for w in words)
    return 0.0 if pos + neg == 0 else (pos - neg) / (pos + neg)


@dataclass(frozen=True)
class UnitDescriptor:
    id: str
    kind: str  # pure | llm
    role_tag: str | None = None
    reads: tuple[str, ...] = ("*",)
    writes: tuple[str, ...] = ()
    enabled: bool = True
    salience: float = 0.6

    def __post_init__(self):
        if not self.id:
            raise ValueError("unit id must be non-empty")
        if self.kind not in ("pure", "llm"):
            raise ValueError(f"unit kind must be pure or llm, got {self.kind!r}")
        if self.kind == "llm" and not self.role_tag:
            raise ValueError(f"llm unit {self.id!r} needs a role tag")


@dataclass
class UnitContext:
    observation: str
    snapshot: list[WorkingMemoryEntry]
    persona: Persona
    bridge: LLMBridge
    now: int

    def memory_text(self) -> str:
        return "\n".join(f"- {e.key}: {e.value}" for e in self.snapshot) or "(empty)"


# a behaviour returns the entries it writes, as key -> value
UnitBehavior = Callable[[UnitContext], dict]


@dataclass
class TraceStep:
    unit_id: str
    keys_written: list[str]
    evicted: list[str] = field(default_factory=list)
    snapshot_keys: list[str] = field(default_factory=list)


@dataclass
class Decision:
    kind: str  # task_plan | dialogue
    tasks: list[str] = field(default_factory=list)
    utterance: str = ""
    trace: list[TraceStep] = field(default_factory=list)
    order: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.kind == "dialogue":
            if self.tasks or not self.utterance:
                raise ValueError("dialogue decisions carry an utterance only")
        elif self.kind == "task_plan":
            if self.utterance or not self.tasks:
                raise ValueError("task plans carry tasks only")
        else:
            raise ValueError(f"unknown decision kind {self.kind!r}")

    def text(self) -> str:
        if self.kind == "dialogue":
            return f"SAY: {self.utterance}"
        return "TASKS:\n" + "\n".join(f"{i}. {t}" for i, t in enumerate(self.tasks, start=1))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "tasks": self.tasks,
            "utterance": self.utterance,
            "order": self.order,
            "trace": [
                {"unit": s.unit_id, "wrote": s.keys_written, "evicted": s.evicted} for s in self.trace
            ],
        }


@dataclass(frozen=True)
class ConflictVerdict:
    status: str  # pass | reject | rewrite
    reason: str = ""
    rewritten: str = ""

    def __post_init__(self):
        if self.status not in ("pass", "reject", "rewrite"):
            raise ValueError(f"unknown verdict status {self.status!r}")
        if self.status == "rewrite" and not self.rewritten.strip():
            raise ValueError("rewrite verdicts need replacement text")


def parse_final_output(text: str) -> tuple[str, list[str], str]:
    """Return (kind, tasks, utterance) for a ``SAY:`` or ``TASKS:`` reply."""
    body = text.strip()
    m = re.match(r"SAY\s*:\s*(.*)\Z", body, re.DOTALL | re.IGNORECASE)
    if m and m.group(1).strip():
        return "dialogue", [], m.group(1).strip()
    m = re.match(r"TASKS\s*:\s*(.*)\Z", body, re.DOTALL | re.IGNORECASE)
    if m:
        tasks = []
        for line in m.group(1).splitlines():
            item = re.match(r"\s*\d+\s*[.)]\s*(.+?)\s*$", line)
            if item:
                tasks.append(item.group(1))
        if tasks:
            return "task_plan", tasks, ""
    raise MalformedFinalOutput(f"final output is neither SAY: nor TASKS: {text[:80]!r}")


def parse_verdict(text: str) -> ConflictVerdict | None:
    body = text.strip()
    if re.fullmatch(r"PASS\.?", body, re.IGNORECASE):
        return ConflictVerdict("pass")
    m = re.match(r"REJECT\s*:\s*(.*)\Z", body, re.DOTALL | re.IGNORECASE)
    if m:
        return ConflictVerdict("reject", m.group(1).strip())
    m = re.match(r"REWRITE\s*:\s*(.*)\Z", body, re.DOTALL | re.IGNORECASE)
    if m and m.group(1).strip():
        return ConflictVerdict("rewrite", "", m.group(1).strip())
    return None


def apply_verdict(decision: Decision, verdict: ConflictVerdict) -> Decision | None:
    """The decision to act on, or None when it was rejected."""
    if verdict.status == "pass":
        return decision
    if verdict.status == "reject":
        return None
    try:
        kind, tasks, utterance = parse_final_output(verdict.rewritten)
    except MalformedFinalOutput:
        kind, tasks, utterance = decision.kind, [], ""
        if kind == "dialogue":
            utterance = verdict.rewritten
        else:
            tasks = [ln.strip() for ln in verdict.rewritten.splitlines() if ln.strip()]
    return replace(decision, kind=kind, tasks=tasks, utterance=utterance)


@dataclass
class DecisionConfig:
    order_mode: str = "llm"  # llm | static
    static_order: tuple[str, ...] = DEFAULT_ORDER
    fail_closed: bool = False
    disabled: tuple[str, ...] = ()

    def __post_init__(self):
        if self.order_mode not in ("llm", "static"):
            raise ValueError(f"order mode must be llm or static, got {self.order_mode!r}")


def _affect(ctx: UnitContext) -> dict:
    return {"affect": f"valence {affect_valence(ctx.observation):+.2f}"}


def _intent(ctx: UnitContext) -> dict:
    reply = ctx.bridge.ask(
        "intent",
        render("intent", observation=ctx.observation, memory=ctx.memory_text()),
        system=ctx.persona.system_prompt(),
    )
    return {"intent": reply.strip() or "(none)"}


def _format(ctx: UnitContext) -> dict:
    reply = ctx.bridge.ask(
        "format",
        render("format", observation=ctx.observation, memory=ctx.memory_text()),
        system=ctx.persona.system_prompt(),
    )
    return {"decision": reply.strip()}


class DecisionEngine:
    def __init__(self, persona: Persona, bridge: LLMBridge, config: DecisionConfig | None = None):
        self.persona = persona
        self.bridge = bridge
        self.config = config or DecisionConfig()
        self._units: dict[str, tuple[UnitDescriptor, UnitBehavior]] = {}
        self.evicted: list[WorkingMemoryEntry] = []
        self.register_unit(UnitDescriptor("affect", "pure", writes=("affect",)), _affect)
        self.register_unit(UnitDescriptor("intent", "llm", "intent", writes=("intent",)), _intent)
        self.register_unit(
            UnitDescriptor("format", "llm", "format", writes=("decision",), salience=0.8), _format
        )
        for uid in self.config.disabled:
            self.set_enabled(uid, False)

    def register_unit(self, descriptor: UnitDescriptor, behavior: UnitBehavior) -> None:
        if descriptor.id in self._units:
            raise DuplicateUnitId(f"unit {descriptor.id!r} is already registered")
        self._units[descriptor.id] = (descriptor, behavior)

    def set_enabled(self, unit_id: str, enabled: bool) -> None:
        desc, behavior = self._units[unit_id]
        self._units[unit_id] = (replace(desc, enabled=enabled), behavior)

    def units(self) -> list[UnitDescriptor]:
        return [d for d, _ in self._units.values()]

    def enabled_ids(self) -> list[str]:
        return [d.id for d, _ in self._units.values() if d.enabled]

    def static_order(self) -> list[str]:
        enabled = self.enabled_ids()
        listed = [u for u in self.config.static_order if u in enabled]
        return listed + [u for u in enabled if u not in listed]

    def order_units(self, observation_digest: str) -> list[str]:
        enabled = self.enabled_ids()
        if not enabled:
            raise ValueError("no enabled units")
        if self.config.order_mode == "static":
            return self.static_order()
        reply = self.bridge.ask(
            "unit_order",
            render("unit_order", observation=observation_digest, units=", ".join(enabled)),
            system=self.persona.system_prompt(),
        )
        proposed = [p.strip() for p in reply.strip().split(",") if p.strip()]
        if sorted(proposed) == sorted(enabled):
            return proposed
        logger.warning("unit order %r is not a permutation of %s; using static order", reply, enabled)
        return self.static_order()

    def run_pipeline(
        self,
        observation: Observation | str,
        wm: WorkingMemory,
        now: int = 0,
        refresh: Callable[[], Observation | str | None] | None = None,
    ) -> Decision:
        """Run every enabled unit in order and parse the final output.

        ``refresh`` is polled between units; when it returns a different
        observation, later units see that digest (the caller is expected to
        have encoded it into working memory already).
        """
        digest = observation.digest() if isinstance(observation, Observation) else str(observation)
        order = self.order_units(digest)
        trace: list[TraceStep] = []
        final: str | None = None
        for n, uid in enumerate(order):
            if n and refresh is not None:
                newer = refresh()
                if newer is not None:
                    new_digest = newer.digest() if isinstance(newer, Observation) else str(newer)
                    if new_digest != digest:
                        logger.info("observation changed before unit %s", uid)
                        digest = new_digest
            desc, behavior = self._units[uid]
            snapshot = wm.snapshot()
            ctx = UnitContext(digest, snapshot, self.persona, self.bridge, now)
            writes = behavior(ctx) or {}
            step = TraceStep(uid, [], snapshot_keys=[e.key for e in snapshot])
            for key, value in writes.items():
                evicted = wm.put(WorkingMemoryEntry(key, str(value), f"unit:{uid}", now, desc.salience))
                step.keys_written.append(key)
                step.evicted += [e.key for e in evicted]
                self.evicted += evicted
            trace.append(step)
            if uid == "format":
                final = writes.get("decision")
        if final is None:
            raise MalformedFinalOutput("the format unit produced no output")
        kind, tasks, utterance = parse_final_output(final)
        return Decision(kind, tasks, utterance, trace, order)

    def check_conflict(self, decision: Decision) -> ConflictVerdict:
        reply = self.bridge.ask(
            "conflict",
            render(
                "conflict",
                persona=self.persona.summary(),
                worldview=", ".join(self.persona.worldview) or "none",
                kind=decision.kind.replace("_", " "),
                decision=decision.text(),
            ),
            system=self.persona.system_prompt(),
        )
        verdict = parse_verdict(reply)
        if verdict is None:
            if self.config.fail_closed:
                logger.warning("unparseable conflict verdict %r; rejecting", reply)
                return ConflictVerdict("reject", "unparseable verdict")
            logger.warning("unparseable conflict verdict %r; passing", reply)
            return ConflictVerdict("pass", "unparseable verdict")
        return verdict


def fallback_decision(trace: Sequence[TraceStep] = ()) -> Decision:
    return Decision("dialogue", utterance=FALLBACK_UTTERANCE, trace=list(trace))
