"""A fixture village plus a random action driver for world property tests."""

from __future__ import annotations

import random

from larp.world import World

VILLAGE = {
    "locations": ["forge", "square", "well", "mill"],
    "adjacency": [["forge", "square"], ["square", "well"], ["square", "mill"]],
    "entities": [
        {"id": "smith", "kind": "character", "location": "forge"},
        {"id": "baker", "kind": "character", "location": "mill"},
        {"id": "guard", "kind": "character", "location": "square"},
        {"id": "bucket", "kind": "item", "location": "forge", "attributes": {"contents": "empty"}},
        {"id": "hammer", "kind": "item", "location": "smith"},
        {"id": "loaf", "kind": "item", "location": "mill"},
        {"id": "coin", "kind": "item", "location": "guard"},
        {"id": "well_pump", "kind": "item", "location": "well", "fixed": True},
    ],
    "use_rules": [
        {"item": "bucket", "on": "well_pump", "set": {"bucket": {"contents": "water"}}, "message": "filled"}
    ],
}


def village() -> World:
    return World.from_spec(VILLAGE)


def random_valid_action(world: World, rng: random.Random) -> tuple[str, str, dict]:
    """Pick a character and an action whose preconditions currently hold."""
    who = rng.choice(world.characters())
    here = world.place_of(who)
    carried = world.inventory(who)
    loose = [
        i for i in world.items()
        if world.entities[i].location == here and not world.entities[i].fixed
    ]
    others = [c for c in world.characters() if c != who and world.place_of(c) == here]
    nearby = [e for e in world.entities if e != who and world.place_of(e) == here]
    options = [("move", {"to": rng.choice(sorted(world.adjacency[here]))}), ("wait", {})]
    options.append(("say", {"text": f"hello from {who} #{rng.randint(0, 999)}"}))
    if loose:
        options.append(("pick_up", {"item": rng.choice(loose)}))
    if carried:
        options.append(("drop", {"item": rng.choice(carried)}))
        if others:
            options.append(("give", {"item": rng.choice(carried), "to": rng.choice(others)}))
        if "bucket" in carried and "well_pump" in nearby:
            options.append(("use", {"item": "bucket", "on": "well_pump"}))
    api, args = rng.choice(options)
    return who, api, args
