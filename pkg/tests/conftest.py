import time

import pytest

from skillloop.evolution import EvolutionConfig, run_spiral


@pytest.fixture(scope="session")
def default_run(tmp_path_factory):
    """One full default run (10 stages, seeded initial skill); shared across acceptance checks."""
    run_dir = tmp_path_factory.mktemp("acceptance") / "default"
    started = time.perf_counter()
    result = run_spiral(EvolutionConfig(), run_dir)
    elapsed = time.perf_counter() - started
    return result, run_dir, elapsed


@pytest.fixture(scope="session")
def default_run_replica(tmp_path_factory):
    """Second run with the identical config and master seed, for determinism comparison."""
    run_dir = tmp_path_factory.mktemp("acceptance") / "replica"
    result = run_spiral(EvolutionConfig(), run_dir)
    return result, run_dir


@pytest.fixture(scope="session")
def ablation_runs(tmp_path_factory, default_run):
    """Final success rates for every mode over 5 master seeds."""
    root = tmp_path_factory.mktemp("ablations")
    default_result, _, _ = default_run
    finals: dict[str, list[float]] = {}
    for mode in ("no_skill", "static_skill", "skill_unaware", "skill_aware"):
        finals[mode] = []
        for seed in range(5):
            if mode == "skill_aware" and seed == 0:
                finals[mode].append(default_result.reports[-1].success_rate)
                continue
            config = EvolutionConfig(mode=mode, master_seed=seed)
            result = run_spiral(config, root / f"{mode}-{seed}")
            finals[mode].append(result.reports[-1].success_rate)
    return finals
