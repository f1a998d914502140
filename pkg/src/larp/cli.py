"""Command-line entry point: ``larp run|repl|inspect|validate``."""

from __future__ import annotations

import argparse
import logging
import shlex
import sys
from pathlib import Path

from .actions import parse_call
from .errors import LarpError, ParseError, ScenarioParseError, TranscriptExhausted
from .runtime import Simulation, load_bundle, save_bundle
from .scenario import PlayerCommand, load_scenario

STORES = ("wm", "ltm", "kb", "skills")

REPL_USAGE = """commands:
  say <text>                  speak at your location
  do <api>(<arg>=<value>...)  act, e.g. do move(to="well")
  wait                        let a turn pass
  inspect <npc> (wm|ltm|kb|skills)
  save <path>                 write a save bundle
  quit"""


def dump_store(sim: Simulation, character_id: str, store: str) -> str:
    ch = sim.characters.get(character_id)
    if ch is None:
        raise KeyError(f"no NPC called {character_id!r} (known: {', '.join(sorted(sim.characters))})")
    if store == "wm":
        return ch.wm.dump()
    if store == "ltm":
        records = ch.memory.ltm.for_character(character_id)
        if not records:
            return "(long-term memory empty)"
        lines = []
        for r in records:
            head = f"#{r.id} [{r.kind}/{r.provenance}] t={r.created_at} imp={r.importance:.2f} N={r.retrieval_count}"
            if r.parent_id is not None:
                head += f" parent=#{r.parent_id} d={r.distortion_count}"
            text = f"Q: {r.question} A: {r.content}" if r.kind == "episodic_qa" else r.content
            lines.append(f"{head}  {text}")
        return "\n".join(lines)
    if store == "kb":
        return ch.memory.kb.to_text().rstrip() or "(knowledge base empty)"
    if store == "skills":
        return ch.actions.library.dump()
    raise KeyError(f"unknown store {store!r}; choose one of {', '.join(STORES)}")


def render_event(e: dict) -> str | None:
    who, kind = e.get("character", "?"), e.get("event")
    if kind in ("action", "player_action"):
        if e["api"] == "say" and e["success"]:
            return f'{who}: "{e["args"]["text"]}"'
        args = ", ".join(f"{k}={v!r}" for k, v in e["args"].items())
        status = "ok" if e["success"] else "failed"
        return f"{who} {e['api']}({args}) -> {status}: {e['message']}"
    if kind == "task_failed":
        return f"{who} gave up on {e['subtask']!r}: {e['message']}"
    if kind == "skill_learned":
        return f"{who} learned skill {e['skill']}"
    return None


class Repl:
    """Turn-based session: one player command, then one turn for every NPC."""

    def __init__(self, sim: Simulation):
        self.sim = sim
        self.done = False

    def handle(self, line: str) -> str:
        line = line.strip()
        if not line:
            return ""
        verb, _, rest = line.partition(" ")
        rest = rest.strip()
        try:
            if verb == "quit":
                self.done = True
                return "bye"
            if verb == "inspect":
                parts = rest.split()
                if len(parts) != 2:
                    return REPL_USAGE
                return dump_store(self.sim, parts[0], parts[1])
            if verb == "save":
                if not rest:
                    return REPL_USAGE
                digest = save_bundle(self.sim, shlex.split(rest)[0])
                return f"saved ({digest[:12]})"
            if verb == "say" and rest:
                return self._turn(PlayerCommand(say=rest))
            if verb == "do" and rest:
                parse_call(rest)
                return self._turn(PlayerCommand(do=rest))
            if verb == "wait" and not rest:
                return self._turn(PlayerCommand(wait=True))
        except ParseError as exc:
            return f"error: {exc}"
        except (LarpError, KeyError, ValueError, OSError) as exc:
            return f"error: {exc}"
        return REPL_USAGE

    def _turn(self, command: PlayerCommand) -> str:
        if self.sim.player is None:
            return "error: this scenario declares no player character"
        before = self.sim.to_state()
        turn = self.sim.turns + 1
        try:
            events = [self.sim.player_act(command, turn)]
            events += self.sim.npc_turns(turn)
        except Exception:
            # keep turns atomic: put everything back the way it was
            self.sim = Simulation.from_state(before, self.sim.bridge)
            raise
        self.sim.turns = turn
        self.sim.transcript += events
        return "\n".join(filter(None, (render_event(e) for e in events)))

    def loop(self, stdin=sys.stdin, stdout=sys.stdout) -> int:
        print(REPL_USAGE, file=stdout)
        while not self.done:
            stdout.write("> ")
            stdout.flush()
            line = stdin.readline()
            if not line:
                break
            out = self.handle(line)
            if out:
                print(out, file=stdout)
        return 0


def _cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    sim = Simulation(scenario, seed=args.seed)
    sim.run()
    out = Path(args.out) if args.out else Path("out") / scenario.name
    sim.write_outputs(out)
    print(f"{scenario.name}: {len(sim.transcript)} events over {sim.position} ticks; outputs in {out}")
    return 0


def _cmd_validate(args) -> int:
    scenario = load_scenario(args.scenario)
    m = scenario.model
    print(f"ok: {m.name} ({len(m.characters)} NPCs, {len(m.run)} ticks, {m.backend.kind} backend)")
    return 0


def _cmd_inspect(args) -> int:
    sim = load_bundle(args.bundle)
    print(dump_store(sim, args.character, args.store))
    return 0


def _cmd_repl(args) -> int:
    if args.load:
        sim = load_bundle(args.load)
    else:
        sim = Simulation(load_scenario(args.scenario), seed=args.seed)
    return Repl(sim).loop()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="larp", description="Role-playing language-agent runtime.")
    p.add_argument("-v", "--verbose", action="store_true", help="log at debug level")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario's script to completion")
    run.add_argument("scenario")
    run.add_argument("--out", help="output directory (default out/<scenario name>)")
    run.add_argument("--seed", type=int, help="override the scenario seed")
    run.set_defaults(func=_cmd_run)

    repl = sub.add_parser("repl", help="play alongside the NPCs")
    repl.add_argument("scenario")
    repl.add_argument("--load", metavar="BUNDLE", help="resume from a save bundle")
    repl.add_argument("--seed", type=int)
    repl.set_defaults(func=_cmd_repl)

    insp = sub.add_parser("inspect", help="print one store from a save bundle")
    insp.add_argument("bundle")
    insp.add_argument("character")
    insp.add_argument("store", choices=STORES)
    insp.set_defaults(func=_cmd_inspect)

    val = sub.add_parser("validate", help="check a scenario file without running it")
    val.add_argument("scenario")
    val.set_defaults(func=_cmd_validate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ScenarioParseError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 2
    except TranscriptExhausted as exc:
        print(f"transcript exhausted: {exc}", file=sys.stderr)
        return 3
    except (LarpError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
