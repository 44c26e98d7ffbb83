"""Operator commands: evolve, eval, replay, report, skill show/diff, serve-env.

Exit codes: 0 success, 1 configuration error, 2 runtime error. Every run
directory is self-describing; `report` needs nothing outside it.
"""

from __future__ import annotations

import argparse
import datetime
import json
import sys
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from . import world as w
from .evolution import (
    ConfigError,
    EvolutionConfig,
    StoreError,
    evaluate,
    replay_trajectory,
    run_spiral,
)
from .protocol import serve_stdio, serve_tcp
from .reflection import MissingSidecar
from .skill import SkillStore, render_skill_text
from .trajectory import read_trajectory


class IncompleteRun(Exception):
    pass


@dataclass(frozen=True)
class RunManifest:
    run_id: str
    config: dict
    tool_version: str
    created_at: str

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "config": self.config,
            "tool_version": self.tool_version,
            "created_at": self.created_at,
        }


def _coerce(value: str):
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value


def _apply_override(doc: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = doc
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override through non-object field {key!r} in {dotted!r}")
    node[keys[-1]] = value


def resolve_config(config_path: str | None, overrides: list[str], flag_overrides: dict) -> EvolutionConfig:
    """Defaults < config file < flags; the resolved result lands in the manifest."""
    doc: dict = {}
    if config_path:
        try:
            doc = json.loads(Path(config_path).read_text("utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {config_path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
    for override in overrides:
        if "=" not in override:
            raise ConfigError(f"--set expects key.path=value, got {override!r}")
        dotted, raw = override.split("=", 1)
        _apply_override(doc, dotted.strip(), _coerce(raw.strip()))
    for dotted, value in flag_overrides.items():
        if value is not None:
            _apply_override(doc, dotted, value)
    config = EvolutionConfig.from_dict(doc)
    config.validate()
    return config


def cmd_evolve(args) -> int:
    config = resolve_config(
        args.config,
        args.set or [],
        {
            "mode": args.mode,
            "master_seed": args.seed,
            "stages": args.stages,
            "executor.provider": args.provider,
            "executor.lapse_rate": args.lapse_rate,
        },
    )
    run_dir = Path(args.run_dir)
    if run_dir.exists() and any(run_dir.iterdir()):
        raise StoreError(f"refusing to write into non-empty run directory {run_dir}")
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        run_id=f"{config.mode}-seed{config.master_seed}",
        config=config.to_dict(),
        tool_version=__version__,
        created_at=datetime.datetime.now(datetime.timezone.utc).isoformat(),
    )
    (run_dir / "manifest.json").write_text(
        json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n", "utf-8"
    )
    result = run_spiral(config, run_dir)
    final = result.reports[-1].success_rate
    print(f"run complete: {result.revisions} revisions, final skill v{result.final_skill.version}, "
          f"final success rate {final if final is not None else 'n/a'}")
    print(f"run directory: {run_dir}")
    return 0


def _load_manifest(run_dir: Path) -> dict:
    path = run_dir / "manifest.json"
    if not path.exists():
        raise IncompleteRun(f"{run_dir} has no manifest.json")
    return json.loads(path.read_text("utf-8"))


def cmd_eval(args) -> int:
    run_dir = Path(args.run_dir)
    manifest = _load_manifest(run_dir)
    config = EvolutionConfig.from_dict(manifest["config"])
    store = SkillStore(run_dir / "skills")
    version = args.version if args.version is not None else store.latest_version()
    skill = store.load_version(version)
    report = evaluate(
        skill,
        config.test,
        config.effective_executor(),
        config.master_seed,
        stage=args.stage,
        horizon=config.horizon,
    )
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return 0


def cmd_replay(args) -> int:
    traj_path = Path(args.trajectory)
    traj = read_trajectory(traj_path)
    if args.run_dir:
        store_root = Path(args.run_dir) / "skills"
    else:
        # trajectory files live under <run>/trajectories/<split>/
        store_root = traj_path.parent.parent.parent / "skills"
    verdict = replay_trajectory(traj, store_root)
    if verdict.identical:
        print("identical")
        return 0
    print(f"divergence at step {verdict.divergence_step}")
    return 2


def _read_reports(run_dir: Path) -> tuple[dict, list[dict]]:
    manifest = _load_manifest(run_dir)
    summary_path = run_dir / "run_summary.json"
    if not summary_path.exists():
        raise IncompleteRun(f"{run_dir} has no run_summary.json")
    summary = json.loads(summary_path.read_text("utf-8"))
    reports = []
    for stage in range(summary["completed_stages"] + 1):
        path = run_dir / "reports" / f"stage_{stage:02d}.json"
        if not path.exists():
            raise IncompleteRun(f"{run_dir} is missing the stage {stage} report")
        reports.append(json.loads(path.read_text("utf-8")))
    return {"manifest": manifest, "summary": summary}, reports


def _format_rate(rate) -> str:
    return f"{rate:.3f}" if isinstance(rate, (int, float)) else "n/a"


def cmd_report(args) -> int:
    run_dirs = [Path(d) for d in args.run_dirs]
    if len(run_dirs) == 1:
        meta, reports = _read_reports(run_dirs[0])
        header = ["stage", "version", "overall"] + list(w.FAMILIES)
        print("\t".join(header))
        for report in reports:
            row = [str(report["stage"]), str(report["skill_version"]), _format_rate(report.get("success_rate"))]
            for family in w.FAMILIES:
                fam = report["per_family"].get(family, {})
                row.append(_format_rate(fam.get("rate")))
            print("\t".join(row))
        csv_path = run_dirs[0] / "stages.csv"
        print(f"csv: {csv_path}")
        return 0
    rows = []
    for run_dir in run_dirs:
        meta, reports = _read_reports(run_dir)
        rows.append((meta["summary"]["mode"], meta["summary"].get("final_rate"), run_dir))
    rows.sort(key=lambda r: (r[1] is None, -(r[1] or 0.0)))
    print("mode\tfinal_rate\trun_dir")
    for mode, rate, run_dir in rows:
        print(f"{mode}\t{_format_rate(rate)}\t{run_dir}")
    return 0


def cmd_skill(args) -> int:
    run_dir = Path(args.run_dir)
    store = SkillStore(run_dir / "skills")
    if args.skill_cmd == "show":
        version = args.version if args.version is not None else store.latest_version()
        print(render_skill_text(store.load_version(version)), end="")
        return 0
    old = store.load_version(args.old)
    new = store.load_version(args.new)
    old_rules = {r.rule_id: r for r in old.body}
    new_rules = {r.rule_id: r for r in new.body}
    for rule in new.body:
        prior = old_rules.get(rule.rule_id)
        if prior is None:
            print(f"+ [{rule.rule_id}] {rule.text}")
        elif (prior.text, prior.tags) != (rule.text, rule.tags):
            print(f"~ [{rule.rule_id}] {prior.text!r} -> {rule.text!r}")
    for rule in old.body:
        if rule.rule_id not in new_rules:
            print(f"- [{rule.rule_id}] {rule.text}")
    old_anchors = {a.anchor_rule_id: a for a in old.appendix}
    new_anchors = {a.anchor_rule_id: a for a in new.appendix}
    for anchor, item in new_anchors.items():
        prior = old_anchors.get(anchor)
        if prior is None:
            print(f"+ appendix[{anchor}] lapses={item.lapse_count}")
        elif prior.lapse_count != item.lapse_count or prior.reminder != item.reminder:
            print(f"~ appendix[{anchor}] lapses={prior.lapse_count}->{item.lapse_count}")
    for anchor in old_anchors:
        if anchor not in new_anchors:
            print(f"- appendix[{anchor}]")
    return 0


def cmd_serve_env(args) -> int:
    if args.tcp is not None:
        serve_tcp("127.0.0.1", args.tcp, default_horizon=args.horizon)
    else:
        serve_stdio(default_horizon=args.horizon)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skillloop", description=__doc__)
    parser.add_argument("--version", action="version", version=f"skillloop {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evolve", help="run the evolution loop into a fresh run directory")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--mode", choices=["no_skill", "static_skill", "skill_unaware", "skill_aware"])
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--stages", type=int)
    p.add_argument("--provider", choices=["rule_based", "remote_model"], help="executor provider")
    p.add_argument("--lapse-rate", type=float, help="executor lapse probability")
    p.add_argument("--set", action="append", metavar="KEY.PATH=VALUE",
                   help="dotted config override, repeatable")
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("eval", help="score a stored skill version on the run's test tasks")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--version", type=int)
    p.add_argument("--stage", type=int, default=0, help="stage label for the report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("replay", help="re-execute a logged trajectory and verify determinism")
    p.add_argument("trajectory")
    p.add_argument("--run-dir")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("report", help="stage table for one run, comparison for several")
    p.add_argument("run_dirs", nargs="+")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("skill", help="inspect stored skill versions")
    skill_sub = p.add_subparsers(dest="skill_cmd", required=True)
    ps = skill_sub.add_parser("show")
    ps.add_argument("run_dir")
    ps.add_argument("--version", type=int)
    ps.set_defaults(func=cmd_skill)
    pd = skill_sub.add_parser("diff")
    pd.add_argument("run_dir")
    pd.add_argument("--old", type=int, required=True)
    pd.add_argument("--new", type=int, required=True)
    pd.set_defaults(func=cmd_skill)

    p = sub.add_parser("serve-env", help="serve the built-in micro-world over the wire protocol")
    p.add_argument("--stdio", action="store_true", default=True)
    p.add_argument("--tcp", type=int, metavar="PORT")
    p.add_argument("--horizon", type=int, default=30)
    p.set_defaults(func=cmd_serve_env)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (StoreError, IncompleteRun, MissingSidecar, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
