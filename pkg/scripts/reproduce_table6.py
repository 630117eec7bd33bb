"""Collision-rate ordering of the planner configurations on the clean suite.

    python scripts/reproduce_table6.py --out results/table6 [--workers N]
"""

from __future__ import annotations

import argparse
import logging
import time
from pathlib import Path

from uap.bench.analysis import ordering_check
from uap.bench.suite import emit_results, load_suite_config, run_suite

HERE = Path(__file__).resolve().parent


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", default=str(HERE / "configs" / "table6.json"))
    p.add_argument("--out", default="results/table6")
    p.add_argument("--workers", type=int, default=1)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

    cfg = load_suite_config(args.config)
    t0 = time.perf_counter()
    result = run_suite(cfg, workers=args.workers)
    emit_results(result, args.out)
    for row in result.summary():
        print(f"{row['config']:>12}  SR {row['SR']:.3f}  CR {row['CR']:.3f}  AS {row['AS']:.2f}")
    res = ordering_check(result.episodes)
    print(f"ordering {'holds' if res.passed else 'violated'}: {res.line()}")
    print(f"{time.perf_counter() - t0:.0f} s; results in {args.out}")


if __name__ == "__main__":
    main()
