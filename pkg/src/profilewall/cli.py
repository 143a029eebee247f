"""Command-line front end.

Exit codes: 0 success, 1 validation failure (invalid profile, verdict
mismatch), 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import yaml

from . import __version__
from .engine import Engine, EngineConfig, verdict_log
from .errors import ProfilewallError, ValidationError
from .fsm import compile_profile, fsm_to_dict, fsm_to_dot
from .harness import FIXTURES, HOME_CONFIG, AttackParams, fuzz_trace, gen_attack, label_trace
from .harness.labeled import read_sidecar
from .packets import Trace, load_trace
from .parser import load_profile

OUTPUT_VERSION = 1
EXIT_OK, EXIT_INVALID, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _emit(obj):
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _err(msg):
    sys.stderr.write(f"profilewall: {msg}\n")


def profile_files(paths):
    """Expand directories to the YAML files in them that describe a device."""
    out = []
    for raw in paths:
        p = Path(raw)
        if p.is_dir():
            for f in sorted(p.iterdir()):
                if f.suffix in (".yaml", ".yml") and f.is_file() and _is_profile_file(f):
                    out.append(f)
        elif p.is_file():
            out.append(p)
        else:
            raise UsageError(f"no such profile file or directory: {raw}")
    if not out:
        raise UsageError("no profiles found")
    return out


def _is_profile_file(path):
    # cheap test that tolerates custom tags
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.startswith("device-info:"):
            return True
    return False


def load_config(path):
    if path is None:
        return None
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise UsageError(f"cannot parse config {path}: {exc}") from None
    return EngineConfig.from_dict(data or {})


def _engine(profile_paths, config):
    engine = Engine(config)
    for f in profile_files(profile_paths):
        engine.register_profile(load_profile(f))
    return engine


# ---------------------------------------------------------------------------
# commands


def cmd_check(args):
    status = EXIT_OK
    for f in profile_files(args.profiles):
        try:
            load_profile(f)
        except ValidationError as exc:
            status = EXIT_INVALID
            for d in exc.diagnostics:
                _err(f"{f}: {d}")
    return status


def cmd_compile(args):
    profile = load_profile(args.profile)
    machines = compile_profile(profile)
    if args.interaction:
        machines = [m for m in machines if m.interaction.name == args.interaction]
        if not machines:
            raise UsageError(f"no interaction named {args.interaction!r}")
    for m in machines:
        if args.format == "dot":
            sys.stdout.write(fsm_to_dot(m))
        else:
            sys.stdout.write(json.dumps(fsm_to_dict(m), sort_keys=True) + "\n")
    return EXIT_OK


def cmd_run(args):
    sidecar = None
    if args.expected:
        try:
            sidecar = read_sidecar(args.expected)
        except OSError as exc:
            raise UsageError(f"cannot read {args.expected}: {exc.strerror}") from None
    config = load_config(args.config)
    if config is None and sidecar and sidecar.get("config"):
        config = EngineConfig.from_dict(sidecar["config"])
    engine = _engine(args.profiles, config)
    trace = _load_trace(args.trace)
    report = engine.run_replay(trace, timing=not args.no_timing)
    if args.log:
        Path(args.log).write_text(verdict_log(report.verdicts, trace.packets), encoding="utf-8")
    summary = report.summary()
    status = EXIT_OK
    if sidecar is not None:
        expected = sidecar["expected"]
        got = [v.decision for v in report.verdicts]
        if len(expected) != len(got):
            raise UsageError(f"{args.expected} labels {len(expected)} packets, trace has {len(got)}")
        mismatches = [i for i, (a, b) in enumerate(zip(got, expected)) if a != b]
        summary["mismatches"] = mismatches
        if mismatches:
            status = EXIT_INVALID
            _err(f"{len(mismatches)} verdict(s) differ from expectations at packet(s) "
                 + ", ".join(map(str, mismatches[:50])) + (" ..." if len(mismatches) > 50 else ""))
    _emit(summary)
    return status


def _load_trace(path):
    try:
        return load_trace(path)
    except OSError as exc:
        raise UsageError(f"cannot read trace {path}: {exc.strerror}") from None


def _labeled_summary(kind, lt, out, side):
    return {"v": OUTPUT_VERSION, "kind": kind, "trace": str(out), "sidecar": str(side), "packets": len(lt),
            "expected_accept": len(lt) - len(lt.expected_drops), "expected_drop": len(lt.expected_drops)}


def cmd_fuzz(args):
    if args.fixture:
        fx = FIXTURES.get(args.fixture)
        if fx is None:
            raise UsageError(f"unknown fixture {args.fixture!r} (known: {', '.join(sorted(FIXTURES))})")
        base = fx.trace(args.min_packets)
        profiles = fx.load_profiles(args.profiles_dir)
        config = HOME_CONFIG
        names = fx.profiles
    else:
        if not args.trace or not args.profiles:
            raise UsageError("fuzz needs --fixture, or --trace together with --profiles")
        base = _load_trace(args.trace)
        files = profile_files(args.profiles)
        profiles = [load_profile(f) for f in files]
        config = load_config(args.config) or EngineConfig()
        names = tuple(str(f) for f in files)
    try:
        trace, log = fuzz_trace(base, args.seed, args.edit_fraction)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    lt = label_trace(trace, profiles, config, log)
    lt.profiles = tuple(names)
    lt.scenario = f"fuzz:{args.fixture}" if args.fixture else "fuzz"
    lt.extra["config"] = config.to_dict()
    side = lt.save(args.out, with_raw=args.with_raw)
    _emit({**_labeled_summary("fuzz", lt, args.out, side), "seed": args.seed, "edits": len(log.edits)})
    return EXIT_OK


def cmd_attack(args):
    base = AttackParams(rate=20.0, burst=20) if args.scenario == "A2" else AttackParams()
    overrides = {k: getattr(args, k) for k in ("pps", "duration", "rate", "burst", "count", "spacing")
                 if getattr(args, k) is not None}
    params = replace(base, prelude=args.prelude, **overrides)
    lt = gen_attack(args.scenario, params)
    lt.extra["config"] = HOME_CONFIG.to_dict()
    side = lt.save(args.out, with_raw=args.with_raw)
    _emit({**_labeled_summary("attack", lt, args.out, side), "scenario": args.scenario, "note": lt.note})
    return EXIT_OK


def cmd_bench(args):
    if args.repeat < 1:
        raise UsageError("--repeat must be at least 1")
    config = load_config(args.config)
    trace = _load_trace(args.trace)
    latencies, categories, verdicts = [], [], []
    for _ in range(args.repeat):
        engine = _engine(args.profiles, config)
        report = engine.run_replay(trace)
        latencies += report.latencies_ns
        categories += report.categories
        verdicts += report.verdicts
    from .engine import ReplayReport

    merged = ReplayReport(verdicts, latencies, categories)
    summary = merged.summary()
    summary.pop("diagnostics")
    summary["repeat"] = args.repeat
    _emit(summary)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(prog="profilewall", description="Profile-driven stateful firewall for smart home traffic.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="validate profiles")
    p.add_argument("profiles", nargs="+", help="profile files or directories")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("compile", help="print the state machine of each interaction")
    p.add_argument("profile")
    p.add_argument("--format", choices=("json", "dot"), default="json")
    p.add_argument("--interaction", help="only this interaction")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("run", help="replay a trace and report verdicts")
    p.add_argument("--profiles", nargs="+", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--config")
    p.add_argument("--log", help="write per-packet verdicts as JSON lines")
    p.add_argument("--expected", help="labels sidecar to compare against")
    p.add_argument("--no-timing", action="store_true", help="omit decision-time measurement")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("fuzz", help="fuzz a trace and label it with the reference interpreter")
    p.add_argument("--fixture", help=f"built-in fixture: {', '.join(sorted(FIXTURES))}")
    p.add_argument("--trace", help="base trace (instead of --fixture)")
    p.add_argument("--profiles", nargs="+")
    p.add_argument("--profiles-dir", help="where fixture profiles live (default: bundled profiles/)")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--edit-fraction", type=float, default=0.3)
    p.add_argument("--min-packets", type=int, default=400)
    p.add_argument("--with-raw", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuzz)

    p = sub.add_parser("attack", help="generate an attack trace with expected verdicts")
    p.add_argument("scenario", choices=("A1", "A2", "A3", "A4"))
    p.add_argument("--pps", type=float)
    p.add_argument("--duration", type=float)
    p.add_argument("--rate", type=float)
    p.add_argument("--burst", type=int)
    p.add_argument("--count", type=int)
    p.add_argument("--spacing", type=float)
    p.add_argument("--prelude", action="store_true", help="include the legitimate exchange (A3/A4)")
    p.add_argument("--with-raw", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("bench", help="time per-packet decisions")
    p.add_argument("--profiles", nargs="+", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--config")
    p.add_argument("--repeat", type=int, default=1)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except ValidationError as exc:
        for d in exc.diagnostics:
            _err(str(d))
        return EXIT_INVALID
    except (UsageError, ProfilewallError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    except OSError as exc:
        _err(f"{exc.filename or ''}: {exc.strerror}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
