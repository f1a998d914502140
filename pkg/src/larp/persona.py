from __future__ import annotations

from dataclasses import dataclass, field

from .ltm import DecayParams
from .prompts import render


@dataclass
class Persona:
    character_id: str
    name: str
    background: str = ""
    traits: list[str] = field(default_factory=list)
    style: str = ""
    relationships: list[tuple[str, str]] = field(default_factory=list)
    worldview: list[str] = field(default_factory=list)
    decay: DecayParams = field(default_factory=DecayParams)

    def __post_init__(self):
        if not self.character_id:
            raise ValueError("persona needs a character id")
        if self.decay.psi < 0:
            raise ValueError("forgetting rate must be >= 0")

    def system_prompt(self) -> str:
        return render(
            "system",
            name=self.name,
            background=self.background or "",
            traits=", ".join(self.traits) or "none given",
            style=self.style or "plain",
            relationships="; ".join(f"{other}: {desc}" for other, desc in self.relationships) or "none",
            worldview=", ".join(self.worldview) or "none",
        )

    def summary(self) -> str:
        traits = ", ".join(self.traits) or "no listed traits"
        return f"{self.name} ({self.character_id}); traits: {traits}; {self.background}".strip()
