#!/usr/bin/env python3
"""Desk-scale end-to-end run: train on synthetic series, compare to persistence.

Defaults mirror the quantitative acceptance setting (8 variables, 4000 rows,
lookback 96, horizon 24, patches 6/4/4). Takes a few minutes on one core.
"""

import argparse

from triforecast.data import SplitSpec, apply_stats, fit_stats, split, synth, windows
from triforecast.model import Forecaster, ModelConfig
from triforecast.training import TrainConfig, evaluate, persistence_baseline, train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=8)
    ap.add_argument("--t", type=int, default=4000)
    ap.add_argument("--heterogeneity", type=float, default=1.0)
    ap.add_argument("--data-seed", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--h", type=int, default=96)
    ap.add_argument("--f", type=int, default=24)
    ap.add_argument("--patch-sizes", default="6,4,4")
    ap.add_argument("--vsm", choices=("off", "naive", "light"), default="light")
    ap.add_argument("--max-epochs", type=int, default=10)
    args = ap.parse_args()

    table = synth(args.n, args.t, seed=args.data_seed, heterogeneity=args.heterogeneity)
    train_seg, val_seg, test_seg = split(table, SplitSpec(0.6, 0.2, 0.2), min_rows=args.h + args.f)
    stats = fit_stats(train_seg.values, train_seg.columns)
    train_w = windows(apply_stats(train_seg.values, stats), args.h, args.f)
    val_w = windows(apply_stats(val_seg.values, stats), args.h, args.f)
    test_w = windows(apply_stats(test_seg.values, stats), args.h, args.f)

    cfg = ModelConfig(
        lookback=args.h, horizon=args.f, n_vars=args.n,
        patch_sizes=tuple(int(s) for s in args.patch_sizes.split(",")),
        vsm=args.vsm, seed=args.seed,
    )
    model = Forecaster(cfg)
    print(f"windows: {len(train_w)} train / {len(val_w)} val / {len(test_w)} test")
    print(f"initial val mse: {evaluate(model, val_w)['mse']:.4f}")

    history = train(model, train_w, val_w, TrainConfig(max_epochs=args.max_epochs, seed=args.seed))
    for i, e in enumerate(history.epochs):
        marker = " *" if i == history.best_epoch else ""
        print(f"epoch {i}: train {e.train_loss:.4f}  val mse {e.val_mse:.4f}  "
              f"val mae {e.val_mae:.4f}  ({e.wall_seconds:.1f}s){marker}")

    baseline = persistence_baseline(test_w)
    final = evaluate(model, test_w)
    print(f"test:        mse {final['mse']:.4f}  mae {final['mae']:.4f}")
    print(f"persistence: mse {baseline['mse']:.4f}  mae {baseline['mae']:.4f}")
    print(f"ratio vs persistence: {final['mse'] / baseline['mse']:.3f}")


if __name__ == "__main__":
    main()
