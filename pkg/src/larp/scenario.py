"""Scenario files: YAML behind a ``# larp-scenario v1`` first line.

The whole file is validated (unknown keys rejected, world built, facts parsed,
scripted transcript loaded, player commands parsed) before anything runs.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .actions import parse_call
from .bridge import BackendConfig, parse_transcript
from .errors import LarpError, ParseError, ScenarioParseError
from .logicql import KnowledgeBase
from .ltm import DecayParams
from .persona import Persona
from .world import World

SCENARIO_MAGIC = "# larp-scenario v1"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class LocationModel(_Strict):
    name: str
    description: str = ""


class EntityModel(_Strict):
    id: str
    kind: Literal["character", "item"]
    location: str
    attributes: dict[str, Union[str, int, bool]] = Field(default_factory=dict)
    fixed: bool = False


class UseRuleModel(_Strict):
    item: str
    on: str
    set: dict[str, dict[str, Union[str, int, bool]]] = Field(default_factory=dict)
    message: str = ""


class WorldModel(_Strict):
    locations: list[Union[str, LocationModel]]
    adjacency: list[tuple[str, str]] = Field(default_factory=list)
    entities: list[EntityModel] = Field(default_factory=list)
    use_rules: list[UseRuleModel] = Field(default_factory=list)
    clock: int = 0


class DecayModel(_Strict):
    alpha: float = 1.0
    beta: float = 0.1
    psi: float = 1.0
    retrieval_mode: Literal["deterministic_threshold", "stochastic"] = "deterministic_threshold"
    threshold: float = 0.9


class RelationshipModel(_Strict):
    other: str
    descriptor: str


class MemorySeedModel(_Strict):
    content: str
    kind: Literal["episodic_nl", "episodic_qa"] = "episodic_nl"
    question: Optional[str] = None
    importance: float = 0.5
    created_at: int = 0


class CharacterModel(_Strict):
    id: str
    name: str
    background: str = ""
    traits: list[str] = Field(default_factory=list)
    style: str = ""
    relationships: list[RelationshipModel] = Field(default_factory=list)
    worldview: list[str] = Field(default_factory=list)
    decay: DecayModel = Field(default_factory=DecayModel)
    facts: str = ""
    memories: list[MemorySeedModel] = Field(default_factory=list)


class BackendModel(_Strict):
    kind: Literal["scripted", "http"]
    transcript: Optional[str] = None
    endpoint: Optional[str] = None
    models: dict[str, str] = Field(default_factory=dict)
    temperatures: dict[str, float] = Field(default_factory=dict)
    timeout: float = 30.0
    max_retries: int = 2

    @model_validator(mode="after")
    def _needs_source(self):
        if self.kind == "scripted" and not self.transcript:
            raise ValueError("scripted backend needs a transcript path")
        if self.kind == "http" and not self.endpoint:
            raise ValueError("http backend needs an endpoint")
        return self


class UnitsModel(_Strict):
    order_mode: Literal["llm", "static"] = "static"
    static_order: list[str] = Field(default_factory=lambda: ["affect", "intent", "format"])
    disabled: list[str] = Field(default_factory=list)
    fail_closed: bool = False


class MemoryModel(_Strict):
    capacity: int = 7
    ttl: int = 30
    reflection_threshold: Optional[int] = None
    ineffective_salience: float = 0.2
    max_questions: int = 5
    max_iterations: int = 3
    top_k: int = 5
    qa_min_similarity: float = 0.5
    reconstruct_on_recall: bool = False


class ActionsModel(_Strict):
    skill_threshold: float = 0.85
    max_attempts: int = 3


class PlayerCommand(_Strict):
    say: Optional[str] = None
    do: Optional[str] = None
    wait: Optional[bool] = None

    @model_validator(mode="after")
    def _exactly_one(self):
        given = [k for k in ("say", "do", "wait") if getattr(self, k) is not None]
        if len(given) != 1:
            raise ValueError("each player command needs exactly one of say, do, wait")
        return self


class TickModel(_Strict):
    tick: int
    player: list[PlayerCommand] = Field(default_factory=list)
    npcs: Optional[list[str]] = None


class ScenarioModel(_Strict):
    name: str
    seed: int = 0
    world: WorldModel
    characters: list[CharacterModel]
    backend: BackendModel
    units: UnitsModel = Field(default_factory=UnitsModel)
    memory: MemoryModel = Field(default_factory=MemoryModel)
    actions: ActionsModel = Field(default_factory=ActionsModel)
    player: Optional[str] = None
    run: list[TickModel] = Field(default_factory=list)

    @field_validator("characters")
    @classmethod
    def _unique_ids(cls, v):
        ids = [c.id for c in v]
        if len(set(ids)) != len(ids):
            raise ValueError("character ids must be unique")
        return v


class Scenario:
    """A validated scenario plus everything derived from it."""

    def __init__(self, model: ScenarioModel, source: str, base_dir: Path, transcript_text: str | None):
        self.model = model
        self.source = source
        self.base_dir = base_dir
        self.transcript_text = transcript_text

    @property
    def name(self) -> str:
        return self.model.name

    @property
    def seed(self) -> int:
        return self.model.seed

    def build_world(self) -> World:
        return World.from_spec(self.model.world.model_dump())

    def personas(self, seed: int | None = None) -> list[Persona]:
        seed = self.seed if seed is None else seed
        out = []
        for c in sorted(self.model.characters, key=lambda c: c.id):
            out.append(
                Persona(
                    character_id=c.id,
                    name=c.name,
                    background=c.background,
                    traits=list(c.traits),
                    style=c.style,
                    relationships=[(r.other, r.descriptor) for r in c.relationships],
                    worldview=list(c.worldview),
                    decay=DecayParams(**c.decay.model_dump(), rng_seed=seed),
                )
            )
        return out

    def character(self, character_id: str) -> CharacterModel:
        return next(c for c in self.model.characters if c.id == character_id)

    def backend_config(self) -> BackendConfig:
        b = self.model.backend
        transcript = None
        if b.transcript:
            transcript = str((self.base_dir / b.transcript).resolve())
        return BackendConfig(
            kind=b.kind,
            models=dict(b.models),
            endpoint=b.endpoint,
            transcript_path=transcript,
            timeout=b.timeout,
            max_retries=b.max_retries,
            temperatures=dict(b.temperatures),
        )


def _check(model: ScenarioModel, base_dir: Path, transcript_text: str | None = None) -> str | None:
    try:
        world = World.from_spec(model.world.model_dump())
    except (ValueError, KeyError, TypeError) as exc:
        raise ScenarioParseError(f"world: {exc}") from exc
    world_chars = set(world.characters())
    for c in model.characters:
        if c.id not in world_chars:
            raise ScenarioParseError(f"character {c.id!r} has no entity in the world")
        if c.decay.psi < 0:
            raise ScenarioParseError(f"character {c.id!r}: forgetting rate must be >= 0")
        try:
            DecayParams(**c.decay.model_dump())
            KnowledgeBase.from_text(c.facts)
        except (LarpError, ValueError) as exc:
            raise ScenarioParseError(f"character {c.id!r}: {exc}") from exc
        for m in c.memories:
            if m.kind == "episodic_qa" and not m.question:
                raise ScenarioParseError(f"character {c.id!r}: question/answer memory needs a question")
    npc_ids = {c.id for c in model.characters}
    if model.player is not None:
        if model.player not in world_chars:
            raise ScenarioParseError(f"player {model.player!r} has no entity in the world")
        if model.player in npc_ids:
            raise ScenarioParseError("the player cannot also be an NPC")
    last = None
    for t in model.run:
        if last is not None and t.tick <= last:
            raise ScenarioParseError(f"run ticks must increase strictly (tick {t.tick} after {last})")
        last = t.tick
        if t.player and model.player is None:
            raise ScenarioParseError(f"tick {t.tick}: player commands given but no player declared")
        for cmd in t.player:
            if cmd.do is not None:
                try:
                    parse_call(cmd.do)
                except ParseError as exc:
                    raise ScenarioParseError(f"tick {t.tick}: bad player action {cmd.do!r}: {exc}") from exc
        for npc in t.npcs or []:
            if npc not in npc_ids:
                raise ScenarioParseError(f"tick {t.tick}: unknown NPC {npc!r}")
    for uid in model.units.disabled + model.units.static_order:
        if uid not in ("affect", "intent", "format"):
            raise ScenarioParseError(f"unknown unit {uid!r}")
    if model.backend.kind == "scripted":
        path = base_dir / model.backend.transcript
        text = transcript_text
        if text is None:
            try:
                text = path.read_text(encoding="utf-8")
            except OSError as exc:
                raise ScenarioParseError(f"cannot read transcript {path}: {exc}") from exc
        try:
            parse_transcript(text, str(path))
        except (LarpError, ValueError) as exc:
            raise ScenarioParseError(f"transcript {path}: {exc}") from exc
        return text
    return None


def parse_scenario(
    text: str,
    base_dir: str | os.PathLike = ".",
    source: str = "<scenario>",
    transcript_text: str | None = None,
) -> Scenario:
    """Validate scenario text; ``transcript_text`` stands in for the transcript file when given."""
    first = text.split("\n", 1)[0].strip()
    if first != SCENARIO_MAGIC:
        raise ScenarioParseError(f"{source}: first line must be {SCENARIO_MAGIC!r}, found {first!r}")
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioParseError(f"{source}: invalid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ScenarioParseError(f"{source}: scenario must be a mapping")
    try:
        model = ScenarioModel.model_validate(data)
    except ValidationError as exc:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in exc.errors()
        )
        raise ScenarioParseError(f"{source}: {problems}") from exc
    base = Path(base_dir)
    transcript_text = _check(model, base, transcript_text)
    return Scenario(model, text, base, transcript_text)


def load_scenario(path: str | os.PathLike) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioParseError(f"cannot read {path}: {exc}") from exc
    return parse_scenario(text, path.parent, str(path))
