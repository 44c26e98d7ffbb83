#!/usr/bin/env python3
"""One default evolution run, narrated: stage-by-stage success rates and the skill's growth.

Usage: python scripts/demo_spiral.py --out runs/demo
"""

import argparse
from pathlib import Path

from skillloop.evolution import EvolutionConfig, run_spiral
from skillloop.skill import SkillStore, render_skill_text


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    config = EvolutionConfig(master_seed=args.seed)
    result = run_spiral(config, Path(args.out))

    print("stage  version  success  per-family")
    for report in result.reports:
        per = "  ".join(
            f"{family}={s}/{e}" for family, (s, e) in sorted(report.per_family.items())
        )
        print(f"{report.stage:>5}  v{report.skill_version:<6} {report.success_rate:.3f}   {per}")

    store = SkillStore(Path(args.out) / "skills")
    initial = store.load_version(0)
    print(f"\ninitial skill: {len(initial.live_rules())} rules, {len(initial.appendix)} appendix items")
    final = result.final_skill
    print(f"final skill:   {len(final.live_rules())} rules, {len(final.appendix)} appendix items")
    print("\nfinal skill document:\n")
    print(render_skill_text(final))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
