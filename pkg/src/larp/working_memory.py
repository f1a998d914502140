"""Bounded, short-lived cache that feeds every decision unit.

Defaults mirror the human short-term memory limits: seven items, held for
thirty ticks. When the cache fills past capacity the least salient entry is
evicted and reported back so reflection can still see it.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class WorkingMemoryEntry:
    key: str
    value: str
    producer: str = "perception"
    created_at: int = 0
    salience: float = 0.5

    def __post_init__(self):
        if not self.key:
            raise ValueError("entry key must be non-empty")
        if not 0.0 <= self.salience <= 1.0:
            raise ValueError(f"salience must lie in [0, 1], got {self.salience}")
        if not (
            self.producer in ("perception", "recall") or self.producer.startswith("unit:")
        ):
            raise ValueError(f"unknown producer {self.producer!r}")


@dataclass(frozen=True)
class WorkingMemoryConfig:
    capacity: int = 7
    ttl: int = 30
    reflection_threshold: int | None = None

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        if self.ttl < 0:
            raise ValueError("ttl must be >= 0")
        if self.reflection_threshold is not None and self.reflection_threshold < 1:
            raise ValueError("reflection threshold must be >= 1")

    @property
    def threshold(self) -> int:
        return self.capacity if self.reflection_threshold is None else self.reflection_threshold


def _eviction_key(e: WorkingMemoryEntry):
    return (e.salience, e.created_at, e.key)


def _display_key(e: WorkingMemoryEntry):
    return (-e.salience, -e.created_at, e.key)


class WorkingMemory:
    def __init__(self, config: WorkingMemoryConfig | None = None):
        self.config = config or WorkingMemoryConfig()
        self._entries: dict[str, WorkingMemoryEntry] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    def get(self, key: str) -> WorkingMemoryEntry | None:
        return self._entries.get(key)

    def put(self, entry: WorkingMemoryEntry) -> list[WorkingMemoryEntry]:
        """Insert or overwrite; returns the entries evicted to make room.

        The incoming entry always lands; the victim is the least salient of
        the entries already cached.
        """
        if entry.key in self._entries:
            self._entries[entry.key] = entry
            return []
        evicted = []
        while len(self._entries) >= self.config.capacity:
            victim = min(self._entries.values(), key=_eviction_key)
            del self._entries[victim.key]
            evicted.append(victim)
        self._entries[entry.key] = entry
        return evicted

    def expire(self, now: int) -> list[WorkingMemoryEntry]:
        gone = [e for e in self._entries.values() if now - e.created_at > self.config.ttl]
        for e in gone:
            del self._entries[e.key]
        return sorted(gone, key=_display_key)

    def remove(self, keys) -> list[WorkingMemoryEntry]:
        out = []
        for k in keys:
            e = self._entries.pop(k, None)
            if e is not None:
                out.append(e)
        return out

    def clear(self) -> list[WorkingMemoryEntry]:
        return self.remove(list(self._entries))

    def snapshot(self) -> list[WorkingMemoryEntry]:
        return sorted(self._entries.values(), key=_display_key)

    def should_reflect(self) -> bool:
        return len(self._entries) >= self.config.threshold

    def dump(self) -> str:
        if not self._entries:
            return "(working memory empty)"
        return "\n".join(
            f"{e.salience:.2f}  t={e.created_at:<4d} {e.key} [{e.producer}] {e.value}"
            for e in self.snapshot()
        )

    # serialisation for save bundles
    def to_state(self) -> list[dict]:
        return [
            {
                "key": e.key,
                "value": e.value,
                "producer": e.producer,
                "created_at": e.created_at,
                "salience": e.salience,
            }
            for e in self._entries.values()
        ]

    @classmethod
    def from_state(cls, state: list[dict], config: WorkingMemoryConfig | None = None) -> "WorkingMemory":
        wm = cls(config)
        for item in state:
            e = WorkingMemoryEntry(**item)
            wm._entries[e.key] = e
        return wm
