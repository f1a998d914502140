from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from larp.actions import Call, If, Repeat, Script, extract_script, format_script, parse_call, parse_script
from larp.actions.dsl import MAX_CALLS
from larp.errors import BoundsExceeded, ParseError


def test_single_call():
    s = parse_script("seq { call wait() }")
    assert s == Script((Call("wait"),))


def test_repeat_and_if():
    s = parse_script('seq { repeat 3 { call wait() } if has(item="bucket") { call drop(item="bucket") } else { call wait() } }')
    rep, cond = s.body
    assert isinstance(rep, Repeat) and rep.count == 3
    assert isinstance(cond, If) and cond.condition == Call("has", (("item", "bucket"),))
    assert cond.orelse == (Call("wait"),)
    assert [c.api for c in s.calls()] == ["wait", "has", "drop", "wait"]


def test_non_literal_repeat_is_a_parse_error():
    with pytest.raises(ParseError) as err:
        parse_script("seq { repeat n { call wait() } }")
    assert not isinstance(err.value, BoundsExceeded)
    assert err.value.column == 14


def test_bounds():
    nested = "seq { " + "repeat 1 { " * 7 + "call wait() " + "} " * 7 + "}"
    parse_script(nested)  # eight levels counting seq
    with pytest.raises(BoundsExceeded):
        parse_script("seq { " + "repeat 1 { " * 8 + "call wait() " + "} " * 8 + "}")
    with pytest.raises(BoundsExceeded):
        parse_script("seq { repeat 33 { call wait() } }")
    parse_script("seq { " + "call wait() " * MAX_CALLS + "}")
    with pytest.raises(BoundsExceeded):
        parse_script("seq { " + "call wait() " * (MAX_CALLS + 1) + "}")


def test_syntax_errors():
    for bad in [
        "call wait()",
        "seq { call wait( }",
        "seq { call move(to=well) }",
        'seq { call move(to="a", to="b") }',
        "seq { call wait() } extra",
        "seq { jump() }",
    ]:
        with pytest.raises(ParseError):
            parse_script(bad)


def test_fences_and_comments():
    reply = 'Here you go:\n```dsl\nseq {\n  # walk\n  call move(to="well")\n}\n```\nthanks'
    assert parse_script(extract_script(reply)).body == (Call("move", (("to", "well"),)),)


def test_parse_call():
    assert parse_call('give(item="coin", to="baker")').arg_dict() == {"item": "coin", "to": "baker"}
    with pytest.raises(ParseError):
        parse_call("give(item=coin)")


ident = st.sampled_from(["move", "wait", "pick_up", "say", "use", "fetch_water"])
value = st.one_of(st.integers(-5, 99), st.text(max_size=8))
calls = st.builds(
    lambda api, args: Call(api, tuple(args.items())),
    ident,
    st.dictionaries(st.sampled_from(["to", "item", "on", "text", "n"]), value, max_size=3),
)


def stmts(depth):
    if depth >= 7:
        return st.lists(calls, max_size=3).map(tuple)
    inner = st.deferred(lambda: stmts(depth + 1))
    node = st.one_of(
        calls,
        st.builds(Repeat, st.integers(0, 32), inner),
        st.builds(If, calls, inner, st.one_of(st.none(), inner)),
    )
    return st.lists(node, max_size=3).map(tuple)


@given(stmts(1))
@settings(max_examples=150, deadline=None)
def test_format_round_trip(body):
    script = Script(body)
    if sum(1 for _ in script.calls()) > MAX_CALLS:
        return
    assert parse_script(format_script(script)) == script
