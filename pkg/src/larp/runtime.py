"""Tick-by-tick scenario execution and save bundles."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from pathlib import Path

from .actions import ActionConfig, SkillLibrary, TrainingLog, TrainingPair, parse_call
from .actions.skills import TRAINING_LOG_MAGIC
from .agent import Character
from .bridge import LLMBridge, ScriptedBackend, build_bridge, parse_transcript
from .decision import DecisionConfig
from .errors import CorruptSnapshot, IoFailure, TranscriptExhausted
from .logicql import KnowledgeBase
from .ltm import LongTermMemory
from .processing import ProcessingConfig
from .scenario import PlayerCommand, Scenario, TickModel, parse_scenario
from .working_memory import WorkingMemory, WorkingMemoryConfig, WorkingMemoryEntry
from .world import World

logger = logging.getLogger(__name__)

RUN_TRANSCRIPT_MAGIC = "#larp-run v1"
BUNDLE_MAGIC = "LARP-BUNDLE"
BUNDLE_VERSION = 1


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def format_run_transcript(events: list[dict]) -> str:
    return RUN_TRANSCRIPT_MAGIC + "\n" + "".join(_canonical(e) + "\n" for e in events)


def read_run_transcript(text: str) -> list[dict]:
    lines = text.splitlines()
    if not lines or lines[0] != RUN_TRANSCRIPT_MAGIC:
        raise ValueError("not a run transcript")
    return [json.loads(line) for line in lines[1:] if line.strip()]


def format_training_log(records: list[TrainingPair]) -> str:
    return TRAINING_LOG_MAGIC + "\n" + "".join(p.to_json() + "\n" for p in records)


class Simulation:
    """A scenario's world plus its NPCs, driven one tick at a time."""

    def __init__(self, scenario: Scenario, seed: int | None = None, bridge: LLMBridge | None = None):
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else seed
        self.world: World = scenario.build_world()
        self.bridge = bridge if bridge is not None else self._make_bridge()
        self.player = scenario.model.player
        self.position = 0  # index of the next run-script tick
        self.turns = 0  # player turns taken interactively
        self.transcript: list[dict] = []
        m = scenario.model
        self.wm_config = WorkingMemoryConfig(m.memory.capacity, m.memory.ttl, m.memory.reflection_threshold)
        self.processing_config = ProcessingConfig(
            ineffective_salience=m.memory.ineffective_salience,
            max_questions=m.memory.max_questions,
            max_iterations=m.memory.max_iterations,
            top_k=m.memory.top_k,
            qa_min_similarity=m.memory.qa_min_similarity,
            reconstruct_on_recall=m.memory.reconstruct_on_recall,
        )
        self.decision_config = DecisionConfig(
            order_mode=m.units.order_mode,
            static_order=tuple(m.units.static_order),
            fail_closed=m.units.fail_closed,
            disabled=tuple(m.units.disabled),
        )
        self.action_config = ActionConfig(m.actions.skill_threshold, m.actions.max_attempts)
        self.characters: dict[str, Character] = {}
        for persona in scenario.personas(self.seed):
            spec = scenario.character(persona.character_id)
            ltm = LongTermMemory()
            for mem in spec.memories:
                ltm.store(
                    persona.character_id,
                    mem.kind,
                    mem.content,
                    question=mem.question,
                    importance=mem.importance,
                    created_at=mem.created_at,
                )
            self.characters[persona.character_id] = self._character(
                persona, ltm, KnowledgeBase.from_text(spec.facts)
            )

    def _make_bridge(self) -> LLMBridge:
        config = self.scenario.backend_config()
        if config.kind == "scripted" and self.scenario.transcript_text is not None:
            entries = parse_transcript(self.scenario.transcript_text, config.transcript_path or "<transcript>")
            return LLMBridge(ScriptedBackend(entries), config)
        return build_bridge(config)

    def _character(self, persona, ltm, kb, wm=None, library=None, training=None) -> Character:
        return Character.build(
            persona,
            self.bridge,
            ltm=ltm,
            kb=kb,
            wm=wm,
            library=library,
            training_log=training,
            wm_config=self.wm_config,
            processing=self.processing_config,
            decision=self.decision_config,
            action=self.action_config,
        )

    # -- running --------------------------------------------------------------

    @property
    def finished(self) -> bool:
        return self.position >= len(self.scenario.model.run)

    def player_act(self, command: PlayerCommand, turn: int) -> dict:
        if self.player is None:
            raise ValueError("this scenario has no player character")
        if command.say is not None:
            outcome = self.world.step(self.player, "say", {"text": command.say})
        elif command.do is not None:
            call = parse_call(command.do)
            outcome = self.world.step(self.player, call.api, call.arg_dict())
        else:
            outcome = self.world.step(self.player, "wait", {})
        return {"turn": turn, "character": self.player, "event": "player_action", **outcome.to_dict()}

    def npc_turns(self, turn: int, npcs: list[str] | None = None) -> list[dict]:
        """Every listed NPC (all by default) takes one turn, in character-id order."""
        events = []
        for cid in sorted(npcs if npcs is not None else self.characters):
            try:
                events += [{"turn": turn, **e} for e in self.characters[cid].take_turn(self.world)]
            except TranscriptExhausted as exc:
                raise TranscriptExhausted(exc.role_tag, f"turn {turn}, {cid}: {exc.detail}") from exc
        return events

    def run_tick(self, tick: TickModel) -> list[dict]:
        events = [self.player_act(cmd, tick.tick) for cmd in tick.player]
        events += self.npc_turns(tick.tick, tick.npcs)
        self.transcript += events
        return events

    def step(self) -> list[dict]:
        events = self.run_tick(self.scenario.model.run[self.position])
        self.position += 1
        return events

    def run(self, max_ticks: int | None = None) -> list[dict]:
        done = 0
        while not self.finished and (max_ticks is None or done < max_ticks):
            self.step()
            done += 1
        return self.transcript

    def transcript_text(self) -> str:
        return format_run_transcript(self.transcript)

    def write_outputs(self, out_dir: str | os.PathLike) -> None:
        out = Path(out_dir)
        try:
            (out / "ltm").mkdir(parents=True, exist_ok=True)
            (out / "training").mkdir(parents=True, exist_ok=True)
            (out / "transcript.jsonl").write_text(self.transcript_text(), encoding="utf-8")
            for cid, ch in sorted(self.characters.items()):
                ch.memory.ltm.save(out / "ltm" / f"{cid}.ltm")
                (out / "training" / f"{cid}.jsonl").write_text(
                    format_training_log(ch.actions.training_log.records), encoding="utf-8"
                )
        except OSError as exc:
            raise IoFailure(f"cannot write outputs to {out}: {exc}") from exc
        save_bundle(self, out / "final.bundle")

    # -- persistence ----------------------------------------------------------

    def to_state(self) -> dict:
        backend = self.bridge.backend
        return {
            "scenario": {
                "source": self.scenario.source,
                "transcript": self.scenario.transcript_text,
                "base_dir": str(self.scenario.base_dir),
            },
            "seed": self.seed,
            "position": self.position,
            "turns": self.turns,
            "world": self.world.to_state(),
            "backend_state": backend.get_state() if isinstance(backend, ScriptedBackend) else None,
            "transcript": self.transcript,
            "characters": {
                cid: {
                    "ltm": ch.memory.ltm.dumps(),
                    "kb": ch.memory.kb.to_text(),
                    "wm": ch.wm.to_state(),
                    "backlog": [vars(e).copy() for e in ch.memory.backlog],
                    "skills": ch.actions.library.to_state(),
                    "training": [vars(p).copy() for p in ch.actions.training_log.records],
                }
                for cid, ch in sorted(self.characters.items())
            },
        }

    @classmethod
    def from_state(cls, state: dict, bridge: LLMBridge | None = None) -> "Simulation":
        sc = state["scenario"]
        scenario = parse_scenario(sc["source"], sc["base_dir"], "<bundle>", transcript_text=sc["transcript"])
        sim = cls(scenario, seed=state["seed"], bridge=bridge)
        sim.position = state["position"]
        sim.turns = state["turns"]
        sim.world = World.from_state(state["world"])
        sim.transcript = list(state["transcript"])
        if state["backend_state"] is not None and isinstance(sim.bridge.backend, ScriptedBackend):
            sim.bridge.backend.set_state(state["backend_state"])
        for cid, cs in state["characters"].items():
            persona = sim.characters[cid].persona
            training = TrainingLog()
            training.records = [TrainingPair(**p) for p in cs["training"]]
            ch = sim._character(
                persona,
                LongTermMemory.loads(cs["ltm"]),
                KnowledgeBase.from_text(cs["kb"]),
                wm=WorkingMemory.from_state(cs["wm"], sim.wm_config),
                library=SkillLibrary.from_state(cs["skills"]),
                training=training,
            )
            ch.memory.backlog = [WorkingMemoryEntry(**e) for e in cs["backlog"]]
            sim.characters[cid] = ch
        return sim


def bundle_text(sim: Simulation) -> str:
    body = _canonical(sim.to_state())
    digest = hashlib.sha256(body.encode("utf-8")).hexdigest()
    return f"{BUNDLE_MAGIC} v{BUNDLE_VERSION} sha256={digest}\n{body}\n"


def save_bundle(sim: Simulation, path: str | os.PathLike) -> str:
    """Write the bundle and return its body hash."""
    text = bundle_text(sim)
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write bundle {path}: {exc}") from exc
    return text.split("sha256=", 1)[1].split("\n", 1)[0]


def read_bundle_state(text: str) -> dict:
    header, _, rest = text.partition("\n")
    parts = header.split()
    if len(parts) != 3 or parts[0] != BUNDLE_MAGIC or not parts[2].startswith("sha256="):
        raise CorruptSnapshot("not a save bundle (bad header line)")
    if parts[1] != f"v{BUNDLE_VERSION}":
        raise CorruptSnapshot(
            f"bundle version {parts[1]} is not supported; this build reads v{BUNDLE_VERSION}"
        )
    body = rest.rstrip("\n")
    if hashlib.sha256(body.encode("utf-8")).hexdigest() != parts[2][len("sha256="):]:
        raise CorruptSnapshot("bundle checksum mismatch")
    try:
        return json.loads(body)
    except json.JSONDecodeError as exc:
        raise CorruptSnapshot(f"bundle body is not valid JSON: {exc}") from exc


def load_bundle(path: str | os.PathLike, bridge: LLMBridge | None = None) -> Simulation:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read bundle {path}: {exc}") from exc
    state = read_bundle_state(text)
    try:
        return Simulation.from_state(state, bridge)
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptSnapshot(f"bundle contents are inconsistent: {exc}") from exc
