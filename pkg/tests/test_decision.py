from __future__ import annotations

import pytest

from larp.agent import Character
from larp.decision import (
    FALLBACK_UTTERANCE,
    ConflictVerdict,
    Decision,
    DecisionConfig,
    DecisionEngine,
    UnitDescriptor,
    affect_valence,
    apply_verdict,
    parse_final_output,
    parse_verdict,
)
from larp.errors import DuplicateUnitId, MalformedFinalOutput
from larp.persona import Persona
from larp.working_memory import WorkingMemory, WorkingMemoryConfig, WorkingMemoryEntry
from scripting import always, bridge_from, reply

PERSONA = Persona("smith", "Brana", traits=["pacifist"], worldview=["the king is never discussed"])


def engine(*entries, **cfg):
    bridge = bridge_from(*entries)
    return DecisionEngine(PERSONA, bridge, DecisionConfig(**cfg)), bridge


def test_builtins_and_registration():
    eng, _ = engine()
    assert [u.id for u in eng.units()] == ["affect", "intent", "format"]
    probe = UnitDescriptor("probe", "pure", writes=("probe",))
    eng.register_unit(probe, lambda ctx: {"probe": "x"})
    with pytest.raises(DuplicateUnitId):
        eng.register_unit(probe, lambda ctx: {})
    with pytest.raises(ValueError):
        UnitDescriptor("bad", "llm")


def test_affect_lexicon():
    assert affect_valence("") == 0.0
    assert affect_valence("Good morning, friend!") == 1.0
    assert affect_valence("The thief stole my bucket, good grief") == pytest.approx(-1 / 3)
    assert -1.0 <= affect_valence("fire fire fire hello") <= 1.0


def test_llm_ordering_with_fallback():
    eng, bridge = engine(
        reply("unit_order", "intent,affect,format"),
        reply("unit_order", "intent,affect"),
        order_mode="llm",
        static_order=("format", "affect", "intent"),
    )
    assert eng.order_units("obs") == ["intent", "affect", "format"]
    assert eng.order_units("obs") == ["format", "affect", "intent"]
    static, _ = engine(order_mode="static", static_order=("intent", "affect", "format"))
    assert static.order_units("obs") == ["intent", "affect", "format"]


def test_final_output_forms():
    assert parse_final_output("SAY: Good morning, traveler.") == ("dialogue", [], "Good morning, traveler.")
    assert parse_final_output("TASKS:\n1. fetch water\n2. return to forge") == (
        "task_plan", ["fetch water", "return to forge"], "")
    for bad in ["hello", "SAY:", "TASKS:\nnothing numbered"]:
        with pytest.raises(MalformedFinalOutput):
            parse_final_output(bad)


def test_pipeline_writes_are_visible_downstream():
    eng, bridge = engine(always("intent", "wants water"), reply("format", "SAY: Hello."), order_mode="static")
    seen = {}
    eng.register_unit(
        UnitDescriptor("probe", "pure"),
        lambda ctx: seen.setdefault("keys", [e.key for e in ctx.snapshot]) and {},
    )
    eng.config.static_order = ("affect", "intent", "probe", "format")
    wm = WorkingMemory()
    decision = eng.run_pipeline("Good morning", wm, now=3)
    assert decision.kind == "dialogue" and decision.utterance == "Hello."
    assert {"affect", "intent"} <= set(seen["keys"])
    assert [s.unit_id for s in decision.trace] == ["affect", "intent", "probe", "format"]
    assert decision.trace[-1].keys_written == ["decision"]
    assert "intent: wants water" in bridge.prompts_for("format")[0]
    assert wm.get("intent").producer == "unit:intent"


def test_disabled_units_never_run():
    eng, bridge = engine(reply("format", "SAY: Hi."), order_mode="static", disabled=("intent",))
    decision = eng.run_pipeline("obs", WorkingMemory())
    assert "intent" not in [s.unit_id for s in decision.trace]
    assert bridge.call_count("intent") == 0
    silent, _ = engine(always("intent", "x"), order_mode="static", disabled=("format",))
    with pytest.raises(MalformedFinalOutput):
        silent.run_pipeline("obs", WorkingMemory())


def test_evictions_show_up_in_trace():
    eng, _ = engine(always("intent", "x"), reply("format", "SAY: Hi."), order_mode="static")
    wm = WorkingMemory(WorkingMemoryConfig(capacity=2))
    wm.put(WorkingMemoryEntry("old", "v", salience=0.1))
    wm.put(WorkingMemoryEntry("older", "v", salience=0.05))
    decision = eng.run_pipeline("obs", wm)
    evicted = [k for s in decision.trace for k in s.evicted]
    assert evicted == ["older", "old", "affect"]
    assert [e.key for e in eng.evicted] == evicted


def test_pure_units_are_repeatable():
    eng, _ = engine(always("intent", "x"), always("format", "SAY: Hi."), order_mode="static")
    a = eng.run_pipeline("Good morning friend", WorkingMemory())
    b = eng.run_pipeline("Good morning friend", WorkingMemory())
    assert a.trace[0].keys_written == b.trace[0].keys_written


def test_verdict_grammar():
    assert parse_verdict("PASS") == ConflictVerdict("pass")
    assert parse_verdict("REJECT: breaks pacifist trait") == ConflictVerdict("reject", "breaks pacifist trait")
    assert parse_verdict("REWRITE: I must not speak of the king.").rewritten == "I must not speak of the king."
    assert parse_verdict("maybe?") is None
    with pytest.raises(ValueError):
        ConflictVerdict("rewrite")


def test_apply_verdict():
    say = Decision("dialogue", utterance="The king is a fool.")
    assert apply_verdict(say, ConflictVerdict("pass")) is say
    assert apply_verdict(say, ConflictVerdict("reject", "no")) is None
    out = apply_verdict(say, ConflictVerdict("rewrite", rewritten="I must not speak of the king."))
    assert out.utterance == "I must not speak of the king." and out.kind == "dialogue"
    plan = Decision("task_plan", tasks=["burn the inn"])
    out = apply_verdict(plan, ConflictVerdict("rewrite", rewritten="TASKS:\n1. fetch water"))
    assert out.tasks == ["fetch water"]


def test_unparseable_verdict_policy():
    eng, _ = engine(reply("conflict", "hmm"))
    assert eng.check_conflict(Decision("dialogue", utterance="hi")).status == "pass"
    closed, _ = engine(reply("conflict", "hmm"), fail_closed=True)
    assert closed.check_conflict(Decision("dialogue", utterance="hi")).status == "reject"


def character(*entries):
    bridge = bridge_from(*entries)
    return Character.build(PERSONA, bridge, decision=DecisionConfig(order_mode="static")), bridge


def test_reject_then_retry():
    ch, bridge = character(
        always("intent", "x"),
        reply("format", "SAY: The king is a fool."),
        reply("format", "SAY: Good day."),
        reply("conflict", "REJECT: the king is never discussed"),
        reply("conflict", "PASS"),
    )
    events = []
    final = ch.decide("obs", 0, events)
    assert final.utterance == "Good day."
    assert [e["status"] for e in events if e["event"] == "conflict_check"] == ["reject", "pass"]


def test_double_reject_falls_back():
    ch, _ = character(
        always("intent", "x"),
        always("format", "SAY: The king is a fool."),
        always("conflict", "REJECT: no"),
    )
    final = ch.decide("obs", 0, [])
    assert final.utterance == FALLBACK_UTTERANCE


def test_newer_observation_reaches_later_units():
    eng, bridge = engine(always("intent", "x"), reply("format", "SAY: Hi."), order_mode="static")
    eng.run_pipeline("the square is quiet", WorkingMemory(), refresh=lambda: "a cart overturned")
    assert "a cart overturned" in bridge.prompts_for("format")[0]
    assert "the square is quiet" not in bridge.prompts_for("format")[0]
