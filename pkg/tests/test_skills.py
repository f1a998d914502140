from __future__ import annotations

import pytest

from larp.actions import (
    ActionSpace,
    SkillLibrary,
    TrainingLog,
    check_schema,
    execute,
    parse_script,
    verify,
)
from larp.errors import IoFailure, RetriesExhausted, WorldDesync
from larp.ltm import cosine, embed
from larp.persona import Persona
from larp.working_memory import WorkingMemory
from larp.world import public_api_registry
from oracles import hashed_embedding, py_cosine
from scripting import always, bridge_from, reply
from worldgen import village

GOOD = 'seq { call pick_up(item="bucket") call move(to="square") call move(to="well") call use(item="bucket", on="well_pump") }'
BAD_SCHEMA = 'seq { call fly(to="well") }'
BAD_DRY = 'seq { call move(to="well") }'  # not adjacent to the forge


def space(*entries, log=None):
    bridge = bridge_from(*entries)
    return ActionSpace(Persona("smith", "Brana"), bridge, training_log=log), bridge


# -- verification ------------------------------------------------------------


def test_schema_stage():
    w = village()
    rep = verify(parse_script(BAD_SCHEMA), public_api_registry(), w, "smith")
    assert (rep.parse_ok, rep.schema_ok, rep.failure_stage) == (True, False, "schema")
    assert "fly" in rep.message
    assert check_schema(parse_script('seq { call move(place="x") }'), public_api_registry())
    assert check_schema(parse_script('seq { call move(to=3) }'), public_api_registry())
    assert check_schema(parse_script('seq { if wait() { call wait() } }'), public_api_registry())
    assert check_schema(parse_script('seq { call has(item="bucket") }'), public_api_registry())


def test_parse_stage():
    rep = verify("seq { call wait(", public_api_registry(), village(), "smith")
    assert (rep.parse_ok, rep.schema_ok, rep.dry_run_ok, rep.failure_stage) == (False, False, False, "parse")


def test_dry_run_stage_names_failing_call():
    w = village()
    w.step("guard", "move", {"to": "well"})
    # the guard now stands at the well, whose only neighbour is the square
    assert verify(parse_script('seq { call move(to="square") call move(to="forge") }'), public_api_registry(), w, "guard").ok
    rep = verify(parse_script('seq { call move(to="forge") }'), public_api_registry(), w, "guard")
    assert rep.failure_stage == "dry_run" and "not adjacent" in rep.message
    rep = verify(parse_script('seq { call pick_up(item="loaf") }'), public_api_registry(), village(), "smith")
    assert rep.failure_stage == "dry_run" and 'pick_up(item="loaf")' in rep.message


def test_verification_never_touches_live_world():
    w = village()
    h = w.state_hash()
    assert verify(parse_script(GOOD), public_api_registry(), w, "smith").ok
    assert w.state_hash() == h


def test_execute_updates_world_and_skips_false_branches():
    w = village()
    outcomes = execute(parse_script(GOOD), w, "smith")
    assert [o.api for o in outcomes] == ["pick_up", "move", "move", "use"]
    assert w.place_of("smith") == "well" and w.entities["bucket"].attributes["contents"] == "water"
    w2 = village()
    assert execute(parse_script('seq { if has(item="bucket") { call drop(item="bucket") } }'), w2, "smith") == []


def test_desync_between_verify_and_execute():
    w = village()
    script = parse_script(GOOD)
    assert verify(script, public_api_registry(), w, "smith").ok
    w.step("guard", "move", {"to": "forge"})
    w.step("guard", "pick_up", {"item": "bucket"})
    with pytest.raises(WorldDesync) as err:
        execute(script, w, "smith")
    assert err.value.outcomes[0].api == "pick_up" and len(err.value.skipped) == 3


# -- lookup ------------------------------------------------------------------


def test_lookup_rules():
    lib = SkillLibrary("smith")
    assert lib.lookup("fetch water") is None
    lib.add("fetch water", parse_script(GOOD), 0)
    entry, sim = lib.lookup("fetch water")
    assert sim == pytest.approx(1.0)
    other = "sharpen the old sword"
    assert py_cosine(hashed_embedding(other), hashed_embedding("fetch water")) < 0.85
    assert lib.lookup(other) is None
    assert cosine(embed(other), embed("fetch water")) < 0.85


def test_lookup_prefers_proven_then_newer_entries():
    lib = SkillLibrary("smith")
    a = lib.add("fetch water", parse_script("seq { call wait() }"), 0)
    b = lib.add("fetch water", parse_script("seq { call wait() call wait() }"), 1)
    assert lib.lookup("fetch water")[0] is b
    a.success_count = 1
    assert lib.lookup("fetch water")[0] is a
    assert (a.name, b.name) == ("fetch_water", "fetch_water_2")


# -- the loop ----------------------------------------------------------------


def test_decompose_parses_numbered_lines():
    sp, _ = space(reply("decompose", "1. go to well\n2. fill bucket\n3. return"), reply("decompose", "ATOMIC"), reply("decompose", "no idea"))
    assert sp.decompose_task("fetch water") == ["go to well", "fill bucket", "return"]
    assert sp.decompose_task("fetch water") == ["fetch water"]
    assert sp.decompose_task("fetch water") == ["fetch water"]
    with pytest.raises(ValueError):
        sp.decompose_task("  ")


def test_codegen_prompt_lists_every_api():
    sp, bridge = space(reply("codegen", "seq { call wait() }"))
    sp.library.add("fetch water", parse_script("seq { call wait() }"), 0)
    text = sp.generate_script("rest", sp.api_specs())
    assert text == "seq { call wait() }"
    [prompt] = bridge.prompts_for("codegen")
    for spec in public_api_registry():
        assert spec.name + "(" in prompt
    assert "fetch_water()" in prompt
    other, other_bridge = space(reply("codegen", "x"))
    other.generate_script("rest", other.api_specs())
    assert "fetch_water" not in other_bridge.prompts_for("codegen")[0]


def test_repair_then_cache(tmp_path):
    log = TrainingLog(tmp_path / "train.jsonl")
    sp, bridge = space(
        always("decompose", "ATOMIC"),
        reply("codegen", BAD_DRY),
        reply("reflect_code", GOOD),
        log=log,
    )
    w = village()
    first = sp.run_task("fetch water", w)
    assert first.success and first.results[0].attempts == 2
    assert bridge.call_count("codegen") + bridge.call_count("reflect_code") == 2
    [reflect_prompt] = bridge.prompts_for("reflect_code")
    assert "well is not adjacent to forge" in reflect_prompt
    assert [p.outcome for p in log.records] == ["failed", "success"]
    assert [p.role for p in log.records] == ["codegen", "reflect_code"]
    assert [p.round for p in TrainingLog.read(tmp_path / "train.jsonl")] == [1, 2]

    # put the bucket back and walk home; the repeat is served from the cache
    for api, args in [("drop", {"item": "bucket"}), ("pick_up", {"item": "bucket"}), ("move", {"to": "square"}), ("move", {"to": "forge"}), ("drop", {"item": "bucket"})]:
        assert w.step("smith", api, args).success
    before = bridge.call_count("codegen")
    second = sp.run_task("fetch water", w)
    assert second.success and second.results[0].cache_hit
    assert bridge.call_count("codegen") == before
    assert sp.library.entries[0].success_count == 1
    assert len(log.records) == 2


def test_retries_exhausted_reports_to_working_memory():
    sp, bridge = space(always("decompose", "ATOMIC"), always("codegen", BAD_SCHEMA), always("reflect_code", BAD_DRY))
    wm = WorkingMemory()
    w = village()
    h = w.state_hash()
    result = sp.run_task("fetch water", w, wm)
    assert not result.success
    assert "task_failed" in wm
    assert [p.outcome for p in sp.training_log.records] == ["failed"] * 3
    assert len(sp.library) == 0 and w.state_hash() == h
    with pytest.raises(RetriesExhausted):
        sp.run_subtask("fetch water", w)


def test_stale_skill_is_regenerated():
    sp, bridge = space(always("decompose", "ATOMIC"), reply("codegen", 'seq { call drop(item="hammer") }'))
    sp.library.add("fetch water", parse_script('seq { call pick_up(item="loaf") }'), 0)
    result = sp.run_task("fetch water", village())
    assert result.success and bridge.call_count("codegen") == 1
    assert sp.library.entries[0].failure_count == 1
    assert any(e["event"] == "skill_stale" for e in result.events)


def test_unwritable_training_log(tmp_path):
    log = TrainingLog(tmp_path / "missing" / "train.jsonl")
    sp, _ = space(always("decompose", "ATOMIC"), reply("codegen", "seq { call wait() }"), log=log)
    with pytest.raises(IoFailure):
        sp.run_task("rest", village())


def test_library_state_round_trip():
    lib = SkillLibrary("smith")
    lib.add("fetch water", parse_script(GOOD), 3).success_count = 2
    back = SkillLibrary.from_state(lib.to_state())
    assert back.to_state() == lib.to_state()
    assert back.lookup("fetch water")[0].script == parse_script(GOOD)
