"""Command line: ``uap generate | run | report``."""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

from .bench.generator import TEMPLATES, GeneratorSpec, generate_scenarios, write_scenarios
from .bench.suite import (
    SUMMARY_COLUMNS,
    emit_results,
    load_suite_config,
    read_episodes,
    run_suite,
    summary_from_records,
)
from .config import ConfigError


def _cmd_generate(args) -> int:
    spec = GeneratorSpec()
    template = None if args.template == "mixed" else args.template
    scs = generate_scenarios(spec, args.n, args.seed, template=template)
    paths = write_scenarios(scs, args.out)
    print(f"wrote {len(paths)} scenarios to {args.out}")
    return 0


def _print_table(rows) -> None:
    print(" ".join(f"{c:>14}" for c in SUMMARY_COLUMNS))
    for r in rows:
        cells = [f"{r[c]:.3f}" if isinstance(r[c], float) else str(r[c]) for c in SUMMARY_COLUMNS]
        print(" ".join(f"{c:>14}" for c in cells))


def _cmd_run(args) -> int:
    cfg = load_suite_config(args.suite)
    out = args.out or cfg.out
    if not out:
        raise ConfigError("no output directory given (--out or the config's 'out')")
    result = run_suite(cfg, workers=args.workers)
    emit_results(result, out)
    _print_table(result.summary())
    if result.errors:
        print(f"{len(result.errors)} episode(s) failed; see {Path(out) / 'errors.json'}", file=sys.stderr)
        return 1
    return 0


def _read_summary(path: Path) -> list[dict]:
    import csv

    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in ("SR", "CR", "AS", "timeout_rate"):
            r[k] = float(r[k])
        r["episodes"] = int(r["episodes"])
        r["errors"] = int(r["errors"])
    return rows


def _cmd_report(args) -> int:
    d = Path(args.inp)
    summary = _read_summary(d / "summary.csv")
    records = read_episodes(d / "episodes.jsonl")
    _print_table(summary)
    recount = {(r["config"], r["injector"]): r for r in summary_from_records(records)}
    bad = []
    for r in summary:
        ref = recount.get((r["config"], r["injector"]))
        if ref is None or r["episodes"] != ref["episodes"] or r["errors"] != ref["errors"]:
            bad.append(r["config"])
            continue
        for k in ("SR", "CR", "AS", "timeout_rate"):
            if not math.isclose(r[k], ref[k], abs_tol=1e-6):
                bad.append(f"{r['config']}:{k}")
    if len(recount) != len(summary):
        bad.append("row count")
    if bad:
        print(f"summary.csv disagrees with episodes.jsonl: {bad}", file=sys.stderr)
        return 1
    print(f"{len(records)} episodes; summary consistent with episodes.jsonl")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uap", description="Uncertainty-aware planning benchmark")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    g = sub.add_parser("generate", help="write synthetic scenario files")
    g.add_argument("--template", required=True, choices=TEMPLATES + ("mixed",))
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_generate)
    r = sub.add_parser("run", help="run a suite config")
    r.add_argument("--suite", required=True)
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--out", default="")
    r.set_defaults(func=_cmd_run)
    s = sub.add_parser("report", help="print and cross-check a results directory")
    s.add_argument("--in", dest="inp", required=True)
    s.set_defaults(func=_cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
