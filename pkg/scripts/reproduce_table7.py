"""Planner robustness under limited perception (occlusion and position noise).

Runs every configuration on the clean suite and under each perception
injector, then reports each configuration's CR change relative to clean.

    python scripts/reproduce_table7.py --out results/table7 [--workers N]
"""

from __future__ import annotations

import argparse
import logging
import time
from pathlib import Path

from uap.bench.analysis import collision_rates, robustness_check
from uap.bench.suite import emit_results, load_suite_config, run_suite

HERE = Path(__file__).resolve().parent


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", default=str(HERE / "configs" / "table7.json"))
    p.add_argument("--out", default="results/table7")
    p.add_argument("--workers", type=int, default=1)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

    cfg = load_suite_config(args.config)
    t0 = time.perf_counter()
    result = run_suite(cfg, workers=args.workers)
    emit_results(result, args.out)
    cr = collision_rates(result.episodes)
    labels = [i.label for i in cfg.injectors]
    print(f"{'CR':>12}  " + "  ".join(f"{j:>18}" for j in labels))
    for pc in cfg.planners:
        print(f"{pc.label:>12}  " + "  ".join(f"{float(cr[(pc.label, j)]):>18.3f}" for j in labels))
    for j in labels[1:]:
        res = robustness_check(result.episodes, perturbed=j)
        print(f"{j}: {'holds' if res.passed else 'violated'}; {res.line()}")
    print(f"{time.perf_counter() - t0:.0f} s; results in {args.out}")


if __name__ == "__main__":
    main()
