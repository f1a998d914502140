"""Versioned prompt templates, one file per pipeline role.

Templates use ``string.Template`` placeholders (``$name``) so that braces in
scripts and logic programs never need escaping.
"""

from __future__ import annotations

from functools import lru_cache
from importlib import resources
from string import Template

PROMPT_VERSION = "v1"


@lru_cache(maxsize=None)
def _template(role: str, version: str) -> Template:
    path = resources.files(__package__).joinpath(version, f"{role}.txt")
    return Template(path.read_text(encoding="utf-8"))


def render(role: str, version: str = PROMPT_VERSION, **fields) -> str:
    text = _template(role, version).substitute(**fields)
    return "\n".join(line.rstrip() for line in text.strip().splitlines()) + "\n"
