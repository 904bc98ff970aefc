"""Periodic monitor -> predict -> solve -> apply loop, replayed against the simulator."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .accuracy import heaviest_variant, lightest_variant, pipeline_accuracy
from .catalog import ADMISSIBLE_BATCHES, Configuration, Pipeline, StageConfig
from .optimizer import (
    DEFAULT_REPLICA_CAP,
    ObjectiveWeights,
    SolveInput,
    SolveOutcome,
    feasible,
    solve,
    solve_fixed_replicas,
    solve_fixed_variants,
    total_cores,
)
from .predictor import LoadSeries, PredictorSpec, predict
from .profiler import throughput
from .simulator import SimConfig, SimReport, measure_sla_attainment, simulate

log = logging.getLogger(__name__)

POLICIES = ("ipa", "fa2_low", "fa2_high", "rim_like")
FALLBACKS = ("lightest_max_replicas", "keep_previous")
MIN_REFERENCE_RPS = 1.0


@dataclass(frozen=True)
class AdapterSettings:
    interval_s: int = 10
    history_window_s: int = 120
    predictor: PredictorSpec = field(default_factory=PredictorSpec)
    weights: ObjectiveWeights = field(default_factory=ObjectiveWeights)
    fallback: str = "lightest_max_replicas"
    batch_set: tuple[int, ...] = ADMISSIBLE_BATCHES
    replica_cap: int = DEFAULT_REPLICA_CAP
    policy: str = "ipa"
    rim_replicas: int | None = None
    arrival_mode: str = "uniform_spaced"
    seed: int = 0
    reconfig_latency: float = 0.0
    batch_max_wait: float | None = None
    upstream_budget: str = "stage_slas"

    def __post_init__(self):
        if self.interval_s < 1:
            raise ValueError("interval_s must be >= 1")
        if self.history_window_s < 1:
            raise ValueError("history_window_s must be >= 1")
        if self.fallback not in FALLBACKS:
            raise ValueError(f"fallback must be one of {FALLBACKS}")
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}; expected one of {POLICIES}")


@dataclass(frozen=True)
class Decision:
    time: int
    predicted_load: float
    outcome: SolveOutcome | None
    applied: Configuration
    changed: bool
    fallback: bool = False


@dataclass
class AdaptationTimeline:
    decisions: list[Decision] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)

    def schedule(self) -> list[tuple[float, Configuration]]:
        return [(float(d.time), d.applied) for d in self.decisions if d.changed]

    def distinct_configurations(self) -> list[Configuration]:
        return [c for _, c in self.schedule()]

    def to_csv(self, timing: bool = False) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        stage_ids = [sc.stage_id for sc in self.decisions[0].applied] if self.decisions else []
        w.writerow(["t_s", "predicted_rps", "solve_ms", "changed", *stage_ids])
        for d in self.decisions:
            # wall-clock times break byte-identical reruns, so they are opt-in
            solve_ms = f"{d.outcome.solve_time * 1000:.3f}" if timing and d.outcome is not None else ""
            cells = [f"{s.stage_id}:{s.variant_id}:{s.batch}:{s.replicas}" for s in d.applied]
            w.writerow([d.time, repr(d.predicted_load), solve_ms, int(d.changed), *cells])
        return buf.getvalue()

    def write(self, out_dir: str | Path, prefix: str = "timeline", timing: bool = False) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{prefix}.csv").write_text(self.to_csv(timing))
        (out / f"{prefix}_events.json").write_text(json.dumps(self.events, indent=2, sort_keys=True) + "\n")


def _max_throughput_batch(pipeline: Pipeline, stage_index: int, variant_id: str, batch_set) -> int:
    v = pipeline.stages[stage_index].variant(variant_id)
    batches = [b for b in batch_set if b <= v.max_batch] or [1]
    return max(batches, key=lambda b: (throughput(v.latency, b), -b))


def _fallback_config(
    pipeline: Pipeline, settings: AdapterSettings, previous: Configuration | None
) -> Configuration:
    if settings.fallback == "keep_previous" and previous is not None:
        return previous
    stages = []
    for i, st in enumerate(pipeline.stages):
        if settings.policy == "fa2_high":
            vid = heaviest_variant(st)
        else:
            vid = lightest_variant(st)
        n = _rim_replicas(settings) if settings.policy == "rim_like" else settings.replica_cap
        stages.append(StageConfig(st.id, vid, _max_throughput_batch(pipeline, i, vid, settings.batch_set), n))
    return Configuration(tuple(stages))


def _rim_replicas(settings: AdapterSettings) -> int:
    return settings.rim_replicas if settings.rim_replicas is not None else settings.replica_cap


def solve_for_policy(pipeline: Pipeline, settings: AdapterSettings, load: float) -> SolveOutcome:
    inp = SolveInput(
        pipeline,
        settings.weights,
        load,
        None,
        tuple(settings.batch_set),
        settings.replica_cap,
    )
    if settings.policy == "ipa":
        return solve(inp)
    if settings.policy == "fa2_low":
        return solve_fixed_variants(inp, {st.id: lightest_variant(st) for st in pipeline.stages})
    if settings.policy == "fa2_high":
        return solve_fixed_variants(inp, {st.id: heaviest_variant(st) for st in pipeline.stages})
    n = _rim_replicas(settings)
    return solve_fixed_replicas(inp, {st.id: n for st in pipeline.stages})


def plan(pipeline: Pipeline, trace: LoadSeries, settings: AdapterSettings) -> AdaptationTimeline:
    """Decide a configuration every ``interval_s`` seconds of ``trace``.

    A decision at second ``t`` sees only the trailing ``history_window_s``
    seconds before ``t``; at ``t = 0`` the first second of the trace stands in
    as the bootstrap observation. The oracle predictor additionally reads the
    trace from ``t`` onwards.
    """
    if not len(trace):
        raise ValueError("trace must not be empty")
    timeline = AdaptationTimeline()
    current: Configuration | None = None
    pending_until = -math.inf
    for t in range(0, len(trace), settings.interval_s):
        if t < pending_until:
            timeline.events.append({"t_s": t, "event": "skipped", "reason": "reconfiguration in progress"})
            continue
        history = trace.window(max(0, t - settings.history_window_s), t) if t > 0 else trace.window(0, 1)
        future = trace.window(t, t + settings.predictor.horizon_s)
        load = predict(settings.predictor, history, future, now=t)
        reference = max(load, MIN_REFERENCE_RPS)
        outcome = solve_for_policy(pipeline, settings, reference)
        fallback = not outcome.feasible
        if fallback:
            applied = _fallback_config(pipeline, settings, current)
            timeline.events.append(
                {
                    "t_s": t,
                    "event": "infeasible",
                    "predicted_rps": reference,
                    "violation": outcome.violation,
                    "fallback": settings.fallback,
                    "applied": applied.describe(),
                }
            )
            log.info("t=%s infeasible at %.3g RPS (%s); fallback applied", t, reference, outcome.violation)
        else:
            applied = outcome.configuration
        changed = applied != current
        if changed:
            current = applied
            if t > 0 and settings.reconfig_latency > 0:
                pending_until = t + settings.reconfig_latency
        timeline.decisions.append(Decision(t, reference, outcome, applied, changed, fallback))
    return timeline


def run_adaptation(
    pipeline: Pipeline, trace: LoadSeries, settings: AdapterSettings
) -> tuple[AdaptationTimeline, SimReport]:
    timeline = plan(pipeline, trace, settings)
    sim = SimConfig(
        trace=trace,
        schedule=tuple(timeline.schedule()),
        arrival_mode=settings.arrival_mode,
        seed=settings.seed,
        reconfig_latency=settings.reconfig_latency,
        batch_max_wait=settings.batch_max_wait,
        upstream_budget=settings.upstream_budget,
    )
    return timeline, simulate(pipeline, sim)


def check_timeline(pipeline: Pipeline, timeline: AdaptationTimeline) -> list[str]:
    """Applied configurations that fail the feasibility re-check (fallbacks excluded)."""
    bad = []
    for d in timeline.decisions:
        if d.fallback:
            continue
        ok, problems = feasible(pipeline, d.applied, d.predicted_load, pipeline.pipeline_sla)
        if not ok:
            bad.append(f"t={d.time}: " + "; ".join(problems))
    return bad


@dataclass(frozen=True)
class PolicyResult:
    policy: str
    mean_accuracy: float
    mean_cost: float
    sla_attainment: float
    sla_violations: int
    drops: int
    reconfigurations: int
    infeasible_intervals: int

    def row(self) -> list:
        return [
            self.policy,
            repr(self.mean_accuracy),
            repr(self.mean_cost),
            repr(self.sla_attainment),
            self.sla_violations,
            self.drops,
            self.reconfigurations,
            self.infeasible_intervals,
        ]


COMPARISON_HEADER = [
    "policy",
    "mean_accuracy_rank",
    "mean_cost_cores",
    "sla_attainment",
    "sla_violations",
    "drops",
    "reconfigurations",
    "infeasible_intervals",
]


def compare_policies(
    pipeline: Pipeline, trace: LoadSeries, settings: AdapterSettings, policies: Sequence[str]
) -> list[PolicyResult]:
    unknown = [p for p in policies if p not in POLICIES]
    if unknown:
        raise ValueError(f"unknown policies {unknown}; expected a subset of {POLICIES}")
    results = []
    for policy in policies:
        run_settings = AdapterSettings(**{**settings.__dict__, "policy": policy})
        timeline, report = run_adaptation(pipeline, trace, run_settings)
        results.append(
            PolicyResult(
                policy=policy,
                mean_accuracy=report.mean_accuracy,
                mean_cost=report.mean_cost,
                sla_attainment=measure_sla_attainment(report, pipeline.pipeline_sla),
                sla_violations=report.total_violations,
                drops=report.total_drops,
                reconfigurations=len(timeline.schedule()),
                infeasible_intervals=sum(1 for d in timeline.decisions if d.fallback),
            )
        )
    return results


def comparison_csv(results: Sequence[PolicyResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COMPARISON_HEADER)
    for r in results:
        w.writerow(r.row())
    return buf.getvalue()


def describe_config(pipeline: Pipeline, config: Configuration) -> dict:
    return {
        **config.to_dict(),
        "accuracy_rank": pipeline_accuracy(pipeline, config),
        "cores": total_cores(pipeline, config),
    }
