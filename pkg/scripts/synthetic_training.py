"""Two-phase training and bootstrapped ensembles on synthetic tracks.

Trains the K=1 regressor with phase 1 only (wMSE) and with both phases
(wMSE then wNLL), plus an M-member bootstrapped ensemble, and reports
displacement and likelihood metrics on held-out tracks.

    python scripts/synthetic_training.py [--n-train 1500] [--n-test 500] [--K 1] [--M 5]
"""

from __future__ import annotations

import argparse
from dataclasses import replace

from uap.prediction.metrics import METRIC_NAMES
from uap.prediction.model import ModelConfig
from uap.prediction.synthetic import TrackSpec, synthetic_tracks
from uap.prediction.train import TrainConfig, evaluate_models, train_ensemble, train_two_phase


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--n-train", type=int, default=1500)
    p.add_argument("--n-test", type=int, default=500)
    p.add_argument("--K", type=int, default=1)
    p.add_argument("--M", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    train = synthetic_tracks(TrackSpec(n=args.n_train), args.seed)
    test = synthetic_tracks(TrackSpec(n=args.n_test), args.seed + 1)
    mc = ModelConfig(K=args.K)
    tc = TrainConfig(seed=args.seed, M=args.M)
    rows = {
        "init": evaluate_models([train_two_phase(train, mc, replace(tc, epochs_phase1=0, epochs_phase2=0))], test),
        "phase 1": evaluate_models([train_two_phase(train, mc, replace(tc, epochs_phase2=0))], test),
        "phase 1+2": evaluate_models([train_two_phase(train, mc, tc)], test),
        f"ensemble M={args.M}": evaluate_models(train_ensemble(train, mc, tc), test),
    }
    print(f"{'':>14}" + "".join(f"{m:>9}" for m in METRIC_NAMES))
    for name, m in rows.items():
        print(f"{name:>14}" + "".join(f"{m[k]:>9.3f}" for k in METRIC_NAMES))


if __name__ == "__main__":
    main()
