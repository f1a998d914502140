"""Terse builders for scripted bridges used across the tests."""

from __future__ import annotations

from larp.bridge import LLMBridge, ScriptedBackend, TranscriptEntry


def reply(role: str, text: str, match: str | None = None, times: int = 1) -> TranscriptEntry:
    return TranscriptEntry(role, text, match, times)


def always(role: str, text: str, match: str | None = None) -> TranscriptEntry:
    return TranscriptEntry(role, text, match, 0)


def bridge_from(*entries: TranscriptEntry) -> LLMBridge:
    return LLMBridge(ScriptedBackend(list(entries)))
