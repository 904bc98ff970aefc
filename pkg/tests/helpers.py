"""Seeded case generators shared by the unit and acceptance suites."""

from __future__ import annotations

import numpy as np

from pipeadapt.catalog import Configuration, StageConfig
from pipeadapt.cli import main
from pipeadapt.optimizer import ObjectiveWeights
from pipeadapt.predictor import LoadSeries
from pipeadapt.simulator import SimConfig
from pipeadapt.synthetic import random_pipeline

SMALL_BATCHES = (1, 2, 4, 8)

SCHEDULE_YAML = """\
- t: 0
  stages:
    - {stage: detect, variant: yolov5n, batch: 1, replicas: 2}
    - {stage: classify, variant: resnet18, batch: 1, replicas: 2}
- t: 30
  stages:
    - {stage: detect, variant: yolov5m, batch: 2, replicas: 6}
    - {stage: classify, variant: resnet50, batch: 4, replicas: 2}
"""


def random_solver_instance(seed: int):
    """Up to 3 stages x 4 variants, sometimes with tied qualities, and a random SLA and weights."""
    rng = np.random.default_rng(seed)
    ties = int(rng.integers(0, 2))
    p = random_pipeline(rng, int(rng.integers(1, 4)), int(rng.integers(1, 5)), 8, quality_levels=3 if ties else None)
    rate = float(rng.uniform(1, 40))
    sla = p.pipeline_sla * float(rng.uniform(0.3, 1.5))
    w = ObjectiveWeights(float(rng.uniform(0, 2)), float(rng.uniform(0, 0.2)), float(rng.uniform(0, 0.01)) + 1e-6)
    return p, w, rate, sla


def random_sim_case(seed: int):
    """Random pipeline, trace, schedule and simulator options."""
    rng = np.random.default_rng(seed)
    p = random_pipeline(rng, int(rng.integers(1, 4)), int(rng.integers(1, 4)), 8)
    length = int(rng.integers(0, 25))
    trace = LoadSeries(0, rng.integers(0, 30, size=length).tolist())
    sched = []
    t = 0
    while t < max(length, 1):
        cfg = Configuration(
            tuple(
                StageConfig(
                    s.id,
                    s.variants[int(rng.integers(len(s.variants)))].id,
                    int(rng.choice(SMALL_BATCHES)),
                    int(rng.integers(1, 5)),
                )
                for s in p.stages
            )
        )
        sched.append((float(t), cfg))
        t += int(rng.integers(3, 15))
    sim = SimConfig(
        trace,
        tuple(sched),
        arrival_mode=str(rng.choice(["uniform_spaced", "poisson"])),
        seed=int(rng.integers(1000)),
        reconfig_latency=float(rng.choice([0.0, 1.5])),
        batch_max_wait=None if rng.random() < 0.5 else float(rng.uniform(0.05, 2.0)),
        drain=bool(rng.random() < 0.8),
        upstream_budget=str(rng.choice(["stage_slas", "pipeline_sla"])),
    )
    return p, sim


def run_every_command(fixtures_dir, out, schedule) -> dict[str, bytes]:
    """Run each CLI command once; return the deterministic output files by relative path."""
    f = fixtures_dir
    cmds = [
        ["fit", "--profiles", str(f / "quadratic_profiles.csv")],
        ["base-alloc", "--profiles", str(f / "yolo_profiles.csv")],
        ["solve", "--pipeline", str(f / "video.yaml"), "--rate", "12"],
        ["simulate", "--pipeline", str(f / "two_stage.yaml"), "--trace", str(f / "alternating.csv"),
         "--schedule", str(schedule), "--arrival", "poisson", "--seed", "3"],
        ["adapt", "--pipeline", str(f / "video.yaml"), "--trace", str(f / "alternating.csv"), "--predictor", "oracle"],
        ["compare", "--pipeline", str(f / "two_stage.yaml"), "--trace", str(f / "step.csv"), "--arrival", "poisson"],
        ["bench-solver", "--stages", "3", "--variants", "3", "--reps", "2"],
    ]
    for c in cmds:
        code = main(c + ["--out", str(out / c[0])])
        if code != 0:
            raise RuntimeError(f"{c[0]} exited with {code}")
    return {str(p.relative_to(out)): p.read_bytes() for p in sorted(out.rglob("*.*")) if "timing" not in p.name}


# (criterion number, title, passed, detail), filled by test_acceptance and printed by conftest
ACCEPTANCE_RESULTS: list[tuple[int, str, bool, str]] = []


def record(number: int, title: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS.append((number, title, bool(passed), detail))
