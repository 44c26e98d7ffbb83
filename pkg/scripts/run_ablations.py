#!/usr/bin/env python3
"""Run the four configurations (no skill / static / unaware / aware) over several seeds.

Writes one run directory per (mode, seed) under --out and prints the mean
final success rate per mode plus per-seed detail.

Usage: python scripts/run_ablations.py --out runs/ablation --seeds 5
"""

import argparse
import statistics
from pathlib import Path

from skillloop.evolution import EvolutionConfig, run_spiral

MODES = ("no_skill", "static_skill", "skill_unaware", "skill_aware")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, help="directory for the run directories")
    parser.add_argument("--seeds", type=int, default=5)
    parser.add_argument("--stages", type=int, default=10)
    args = parser.parse_args()

    out = Path(args.out)
    finals: dict[str, list[float]] = {mode: [] for mode in MODES}
    for mode in MODES:
        for seed in range(args.seeds):
            run_dir = out / f"{mode}-seed{seed}"
            config = EvolutionConfig(mode=mode, master_seed=seed, stages=args.stages)
            result = run_spiral(config, run_dir)
            rate = result.reports[-1].success_rate
            finals[mode].append(rate)
            print(f"{mode:14s} seed={seed} final={rate:.3f} revisions={result.revisions} -> {run_dir}")

    print("\nmode            mean   per-seed")
    for mode in MODES:
        rates = finals[mode]
        print(f"{mode:14s} {statistics.mean(rates):.3f}  {['%.3f' % r for r in rates]}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
