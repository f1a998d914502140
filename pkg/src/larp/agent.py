"""One NPC's cognitive turn: perceive, remember, decide, act."""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .actions import ActionConfig, ActionSpace, SkillLibrary, TrainingLog
from .bridge import LLMBridge
from .decision import Decision, DecisionConfig, DecisionEngine, apply_verdict, fallback_decision
from .logicql import KnowledgeBase
from .ltm import LongTermMemory
from .persona import Persona
from .processing import MemoryProcessor, ProcessingConfig
from .working_memory import WorkingMemory, WorkingMemoryConfig
from .world import World

logger = logging.getLogger(__name__)


@dataclass
class Character:
    persona: Persona
    memory: MemoryProcessor
    engine: DecisionEngine
    actions: ActionSpace

    @classmethod
    def build(
        cls,
        persona: Persona,
        bridge: LLMBridge,
        *,
        ltm: LongTermMemory | None = None,
        kb: KnowledgeBase | None = None,
        wm: WorkingMemory | None = None,
        library: SkillLibrary | None = None,
        training_log: TrainingLog | None = None,
        wm_config: WorkingMemoryConfig | None = None,
        processing: ProcessingConfig | None = None,
        decision: DecisionConfig | None = None,
        action: ActionConfig | None = None,
    ) -> "Character":
        wm = wm if wm is not None else WorkingMemory(wm_config)
        memory = MemoryProcessor(persona, bridge, ltm, kb, wm, processing)
        engine = DecisionEngine(persona, bridge, decision)
        actions = ActionSpace(persona, bridge, library, training_log, action)
        return cls(persona, memory, engine, actions)

    @property
    def id(self) -> str:
        return self.persona.character_id

    @property
    def wm(self) -> WorkingMemory:
        return self.memory.wm

    def decide(self, observation, now: int, events: list[dict]) -> Decision:
        """Run the pipeline and the conflict check; one retry on reject, then the fallback line."""
        for attempt in (1, 2):
            decision = self.engine.run_pipeline(observation, self.wm, now)
            self.memory.backlog += self.engine.evicted
            self.engine.evicted = []
            events.append({"event": "decision", "attempt": attempt, **decision.to_dict()})
            verdict = self.engine.check_conflict(decision)
            events.append(
                {
                    "event": "conflict_check",
                    "attempt": attempt,
                    "status": verdict.status,
                    "reason": verdict.reason,
                    "rewritten": verdict.rewritten,
                }
            )
            final = apply_verdict(decision, verdict)
            if final is not None:
                return final
        logger.info("%s: decision rejected twice; using the fallback utterance", self.id)
        return fallback_decision(decision.trace)

    def take_turn(self, world: World, now: int | None = None) -> list[dict]:
        """One cognitive turn. Memory time is the world clock at the start of the turn."""
        now = world.clock if now is None else now
        events: list[dict] = []
        observation = world.observe(self.id)
        events.append(
            {
                "event": "observe",
                "location": observation.location,
                "items": [item.text() for item in observation.items],
            }
        )
        expired = self.wm.expire(now)
        if expired:
            events.append({"event": "wm_expired", "keys": [e.key for e in expired]})
        encoded = self.memory.encode_observation(observation, now)
        events.append(
            {"event": "encoded", "entries": [[e.key, round(e.salience, 6)] for e in encoded]}
        )
        if self.wm.should_reflect():
            report = self.memory.reflect(now)
            events.append({"event": "reflection", **report.to_event()})

        recall = self.memory.recall_loop(observation, now)
        events.append(
            {
                "event": "recall",
                "answer": recall.answer,
                "iterations": recall.iterations,
                "terminated_by": recall.terminated_by,
                "supporting": recall.supporting_record_ids,
                "rounds": [[b.to_event() for b in bundles] for bundles in recall.bundles],
                "reconstructed": recall.reconstructed_ids,
            }
        )

        decision = self.decide(observation, now, events)
        if decision.kind == "dialogue":
            outcome = world.step(self.id, "say", {"text": decision.utterance})
            events.append({"event": "action", **outcome.to_dict()})
        else:
            for task in decision.tasks:
                result = self.actions.run_task(task, world, self.wm, now)
                self.memory.backlog += self.actions.evicted
                self.actions.evicted = []
                events += result.events
                for sub in result.results:
                    events += [{"event": "action", **o.to_dict()} for o in sub.outcomes]
                events.append({"event": "task_done", "task": task, "success": result.success})
                if not result.success:
                    break
        return [{"tick": now, "character": self.id, **e} for e in events]
