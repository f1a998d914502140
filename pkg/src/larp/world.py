"""Deterministic text world: locations, entities, a tick clock and the public actions."""

from __future__ import annotations

import copy
import hashlib
import json
import threading
from dataclasses import dataclass, field
from typing import Any

from .errors import UnknownCharacter


@dataclass(frozen=True)
class ApiSpec:
    name: str
    params: tuple[tuple[str, str], ...] = ()
    precondition: str = ""
    visibility: str = "public"
    owner: str | None = None
    mutating: bool = True

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(tuple(p) for p in self.params))
        if self.visibility not in ("public", "personal"):
            raise ValueError(f"unknown visibility {self.visibility!r}")
        if (self.visibility == "personal") != (self.owner is not None):
            raise ValueError("personal APIs carry an owner, public ones do not")
        for _, ptype in self.params:
            if ptype not in ("string", "integer", "entity_ref"):
                raise ValueError(f"unknown parameter type {ptype!r}")

    def signature(self) -> str:
        params = ", ".join(f"{n}: {t}" for n, t in self.params)
        return f"{self.name}({params})"


_PUBLIC_APIS = (
    ApiSpec("move", (("to", "string"),), "destination is adjacent to your location"),
    ApiSpec("say", (("text", "string"),), "text is non-empty; heard by everyone at your location"),
    ApiSpec("pick_up", (("item", "entity_ref"),), "item lies at your location and is portable"),
    ApiSpec("drop", (("item", "entity_ref"),), "you carry the item"),
    ApiSpec(
        "give",
        (("item", "entity_ref"), ("to", "entity_ref")),
        "you carry the item and the recipient is at your location",
    ),
    ApiSpec(
        "use",
        (("item", "entity_ref"), ("on", "entity_ref")),
        "you carry the item and the target is here; the world defines the effect",
    ),
    ApiSpec("wait", (), "always possible"),
    ApiSpec("has", (("item", "entity_ref"),), "true if you carry the item", mutating=False),
    ApiSpec("at", (("location", "string"),), "true if you are at the location", mutating=False),
    ApiSpec("sees", (("entity", "entity_ref"),), "true if the entity is at your location", mutating=False),
)


def public_api_registry() -> list[ApiSpec]:
    return list(_PUBLIC_APIS)


PUBLIC_API_NAMES = frozenset(a.name for a in _PUBLIC_APIS)


@dataclass(frozen=True)
class ActionOutcome:
    api: str
    args: tuple[tuple[str, Any], ...]
    success: bool
    message: str
    tick: int

    def __post_init__(self):
        object.__setattr__(self, "args", tuple(self.args))
        if not self.success and not self.message:
            raise ValueError("failed outcomes carry a message")

    def call_text(self) -> str:
        return f"{self.api}({', '.join(f'{k}={json.dumps(v)}' for k, v in self.args)})"

    def to_dict(self) -> dict:
        return {
            "api": self.api,
            "args": dict(self.args),
            "success": self.success,
            "message": self.message,
            "tick": self.tick,
        }


@dataclass(frozen=True)
class ObservationItem:
    kind: str  # entity_seen | utterance_heard | event
    subject: str
    detail: str

    def text(self) -> str:
        if self.kind == "utterance_heard":
            return f'{self.subject} said: "{self.detail}"'
        if self.kind == "event":
            return f"{self.subject} {self.detail}"
        return f"you see {self.subject} ({self.detail})"


@dataclass(frozen=True)
class Observation:
    character_id: str
    tick: int
    location: str
    items: tuple[ObservationItem, ...] = ()

    def digest(self) -> str:
        lines = [f"[tick {self.tick}] {self.character_id} is at {self.location}."]
        lines += [f"- {item.text()}" for item in self.items]
        return "\n".join(lines)


@dataclass
class Entity:
    id: str
    kind: str  # character | item
    location: str  # a location name, or the carrier's id for carried items
    attributes: dict[str, str] = field(default_factory=dict)
    fixed: bool = False


@dataclass(frozen=True)
class UseRule:
    item: str
    on: str
    effects: tuple[tuple[str, str, str], ...] = ()  # (entity, attribute, value)
    message: str = ""


@dataclass
class Event:
    tick: int
    location: str
    actor: str
    kind: str  # utterance | action
    text: str


class World:
    def __init__(self):
        self.clock = 0
        self.adjacency: dict[str, set[str]] = {}
        self.descriptions: dict[str, str] = {}
        self.entities: dict[str, Entity] = {}
        self.use_rules: list[UseRule] = []
        self.events: list[Event] = []
        self.cursors: dict[str, int] = {}
        self._lock = threading.Lock()

    # -- construction ---------------------------------------------------------

    def add_location(self, name: str, description: str = "") -> None:
        if name in self.entities:
            raise ValueError(f"{name!r} is already an entity id")
        self.adjacency.setdefault(name, set())
        self.descriptions[name] = description

    def connect(self, a: str, b: str) -> None:
        for n in (a, b):
            if n not in self.adjacency:
                raise ValueError(f"unknown location {n!r}")
        if a == b:
            raise ValueError("a location cannot be adjacent to itself")
        self.adjacency[a].add(b)
        self.adjacency[b].add(a)

    def add_entity(self, entity: Entity) -> None:
        if entity.id in self.entities or entity.id in self.adjacency:
            raise ValueError(f"duplicate id {entity.id!r}")
        if entity.kind not in ("character", "item"):
            raise ValueError(f"unknown entity kind {entity.kind!r}")
        self.entities[entity.id] = entity
        if entity.kind == "character":
            self.cursors.setdefault(entity.id, 0)

    def validate(self) -> None:
        for e in self.entities.values():
            if e.location in self.adjacency:
                continue
            holder = self.entities.get(e.location)
            if e.kind != "item" or holder is None or holder.kind != "character":
                raise ValueError(f"entity {e.id!r} has invalid location {e.location!r}")

    @classmethod
    def from_spec(cls, spec: dict) -> "World":
        w = cls()
        for loc in spec.get("locations", []):
            if isinstance(loc, str):
                w.add_location(loc)
            else:
                w.add_location(loc["name"], loc.get("description", ""))
        for a, b in spec.get("adjacency", []):
            w.connect(a, b)
        for ent in spec.get("entities", []):
            w.add_entity(
                Entity(
                    id=ent["id"],
                    kind=ent["kind"],
                    location=ent["location"],
                    attributes={k: str(v) for k, v in (ent.get("attributes") or {}).items()},
                    fixed=bool(ent.get("fixed", False)),
                )
            )
        for rule in spec.get("use_rules", []):
            effects = tuple(
                (target, attr, str(value))
                for target, attrs in (rule.get("set") or {}).items()
                for attr, value in sorted(attrs.items())
            )
            w.use_rules.append(UseRule(rule["item"], rule["on"], effects, rule.get("message", "")))
        w.clock = int(spec.get("clock", 0))
        w.validate()
        return w

    # -- queries --------------------------------------------------------------

    def character(self, character_id: str) -> Entity:
        e = self.entities.get(character_id)
        if e is None or e.kind != "character":
            raise UnknownCharacter(f"unknown character {character_id!r}")
        return e

    def place_of(self, entity_id: str) -> str:
        e = self.entities[entity_id]
        seen = set()
        while e.location not in self.adjacency:
            if e.id in seen:
                raise ValueError("containment cycle")
            seen.add(e.id)
            e = self.entities[e.location]
        return e.location

    def inventory(self, character_id: str) -> list[str]:
        return sorted(e.id for e in self.entities.values() if e.location == character_id)

    def characters(self) -> list[str]:
        return sorted(e.id for e in self.entities.values() if e.kind == "character")

    def items(self) -> list[str]:
        return sorted(e.id for e in self.entities.values() if e.kind == "item")

    def entity_exists(self, name: str) -> bool:
        return name in self.entities or name in self.adjacency

    # -- actions --------------------------------------------------------------

    def step(self, character_id: str, api: str, args: dict | None = None) -> ActionOutcome:
        args = dict(args or {})
        with self._lock:
            ok, message = self._apply(character_id, api, args)
            spec = next((a for a in _PUBLIC_APIS if a.name == api), None)
            if ok and spec is not None and spec.mutating:
                self.clock += 1
            return ActionOutcome(api, tuple(sorted(args.items())), ok, message, self.clock)

    def check(self, character_id: str, api: str, args: dict) -> bool:
        ok, message = self._apply(character_id, api, dict(args))
        return ok and message == "true"

    def _record(self, location: str, actor: str, kind: str, text: str) -> None:
        self.events.append(Event(self.clock + 1, location, actor, kind, text))

    def _apply(self, cid: str, api: str, args: dict) -> tuple[bool, str]:
        if cid not in self.entities or self.entities[cid].kind != "character":
            return False, f"unknown character {cid!r}"
        spec = next((a for a in _PUBLIC_APIS if a.name == api), None)
        if spec is None:
            return False, f"unknown action {api!r}"
        expected = {n for n, _ in spec.params}
        if set(args) != expected:
            return False, f"{api} expects arguments {sorted(expected)}, got {sorted(args)}"
        me = self.entities[cid]
        here = self.place_of(cid)
        handler = getattr(self, f"_do_{api}")
        return handler(me, here, **args)

    def _item(self, name) -> Entity | None:
        e = self.entities.get(name)
        return e if e is not None and e.kind == "item" else None

    def _do_move(self, me: Entity, here: str, to: str):
        if to not in self.adjacency:
            return False, f"unknown location {to!r}"
        if to == here:
            return False, f"already at {to}"
        if to not in self.adjacency[here]:
            return False, f"{to} is not adjacent to {here}"
        self._record(here, me.id, "action", f"left for {to}")
        me.location = to
        self._record(to, me.id, "action", f"arrived from {here}")
        return True, f"moved to {to}"

    def _do_say(self, me: Entity, here: str, text: str):
        if not str(text).strip():
            return False, "nothing to say"
        self._record(here, me.id, "utterance", str(text))
        return True, "said"

    def _do_pick_up(self, me: Entity, here: str, item: str):
        it = self._item(item)
        if it is None:
            return False, f"no item named {item!r}"
        if it.location == me.id:
            return False, f"already carrying {item}"
        if it.location != here:
            return False, f"{item} is not here"
        if it.fixed:
            return False, f"{item} cannot be picked up"
        it.location = me.id
        self._record(here, me.id, "action", f"picked up {item}")
        return True, f"picked up {item}"

    def _do_drop(self, me: Entity, here: str, item: str):
        it = self._item(item)
        if it is None or it.location != me.id:
            return False, f"not carrying {item}"
        it.location = here
        self._record(here, me.id, "action", f"dropped {item}")
        return True, f"dropped {item}"

    def _do_give(self, me: Entity, here: str, item: str, to: str):
        it = self._item(item)
        if it is None or it.location != me.id:
            return False, f"not carrying {item}"
        other = self.entities.get(to)
        if other is None or other.kind != "character" or other.id == me.id:
            return False, f"{to!r} is not someone you can give to"
        if self.place_of(other.id) != here:
            return False, f"{to} is not here"
        it.location = other.id
        self._record(here, me.id, "action", f"gave {item} to {to}")
        return True, f"gave {item} to {to}"

    def _do_use(self, me: Entity, here: str, item: str, on: str):
        it = self._item(item)
        if it is None or it.location != me.id:
            return False, f"not carrying {item}"
        if on not in self.entities or self.place_of(on) != here:
            return False, f"{on} is not here"
        for rule in self.use_rules:
            if rule.item == item and rule.on == on:
                for target, attr, value in rule.effects:
                    self.entities[target].attributes[attr] = value
                msg = rule.message or f"used {item} on {on}"
                self._record(here, me.id, "action", f"used {item} on {on}")
                return True, msg
        return False, f"cannot use {item} on {on}"

    def _do_wait(self, me: Entity, here: str):
        return True, "waited"

    def _do_has(self, me: Entity, here: str, item: str):
        it = self.entities.get(item)
        return True, "true" if it is not None and it.location == me.id else "false"

    def _do_at(self, me: Entity, here: str, location: str):
        return True, "true" if here == location else "false"

    def _do_sees(self, me: Entity, here: str, entity: str):
        if entity not in self.entities or entity == me.id:
            return True, "false"
        return True, "true" if self.place_of(entity) == here else "false"

    # -- observation ----------------------------------------------------------

    def observe(self, character_id: str) -> Observation:
        me = self.character(character_id)
        here = self.place_of(me.id)
        items = []
        for e in sorted(self.entities.values(), key=lambda e: e.id):
            if e.id == me.id or self.place_of(e.id) != here:
                continue
            attrs = ", ".join(f"{k}={v}" for k, v in sorted(e.attributes.items()))
            if e.location == me.id:
                where = "carried by you"
            elif e.location != here:
                where = f"carried by {e.location}"
            else:
                where = "here"
            detail = f"{e.kind}, {where}" + (f", {attrs}" if attrs else "")
            items.append(ObservationItem("entity_seen", e.id, detail))
        start = self.cursors.get(me.id, 0)
        for ev in self.events[start:]:
            if ev.location != here or ev.actor == me.id:
                continue
            kind = "utterance_heard" if ev.kind == "utterance" else "event"
            items.append(ObservationItem(kind, ev.actor, ev.text))
        self.cursors[me.id] = len(self.events)
        return Observation(me.id, self.clock, here, tuple(items))

    # -- snapshots ------------------------------------------------------------

    def to_state(self) -> dict:
        return {
            "clock": self.clock,
            "locations": [
                {"name": n, "description": self.descriptions.get(n, ""), "adjacent": sorted(adj)}
                for n, adj in sorted(self.adjacency.items())
            ],
            "entities": [
                {
                    "id": e.id,
                    "kind": e.kind,
                    "location": e.location,
                    "attributes": dict(sorted(e.attributes.items())),
                    "fixed": e.fixed,
                }
                for e in sorted(self.entities.values(), key=lambda e: e.id)
            ],
            "use_rules": [
                {"item": r.item, "on": r.on, "effects": [list(x) for x in r.effects], "message": r.message}
                for r in self.use_rules
            ],
            "events": [vars(ev).copy() for ev in self.events],
            "cursors": dict(sorted(self.cursors.items())),
        }

    @classmethod
    def from_state(cls, state: dict) -> "World":
        w = cls()
        for loc in state["locations"]:
            w.add_location(loc["name"], loc["description"])
        for loc in state["locations"]:
            for other in loc["adjacent"]:
                w.adjacency[loc["name"]].add(other)
        for e in state["entities"]:
            w.entities[e["id"]] = Entity(e["id"], e["kind"], e["location"], dict(e["attributes"]), e["fixed"])
        w.use_rules = [
            UseRule(r["item"], r["on"], tuple(tuple(x) for x in r["effects"]), r["message"])
            for r in state["use_rules"]
        ]
        w.events = [Event(**ev) for ev in state["events"]]
        w.cursors = dict(state["cursors"])
        w.clock = state["clock"]
        return w

    def state_hash(self) -> str:
        blob = json.dumps(self.to_state(), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def snapshot(self) -> "World":
        clone = World.__new__(World)
        clone.__dict__.update(copy.deepcopy({k: v for k, v in self.__dict__.items() if k != "_lock"}))
        clone._lock = threading.Lock()
        return clone

    def restore(self, snapshot: "World") -> "World":
        fresh = snapshot.snapshot()
        with self._lock:
            for k, v in fresh.__dict__.items():
                if k != "_lock":
                    setattr(self, k, v)
        return self
