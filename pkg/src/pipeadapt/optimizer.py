"""Exact joint selection of variant, batch size and replica count per stage.

The objective rewards the summed scaled accuracy of the active variants and
charges for cores (replicas x base cores) and batch sizes::

    f = accuracy_weight * sum(acc) - cost_weight * sum(n * cores) - batch_penalty * sum(b)

subject to the end-to-end latency (inference plus worst-case batching wait,
summed over stages) fitting in the SLA and every stage's replicas covering the
arrival rate.

Solved by branch and bound over per-stage option lists. Each option is a
(variant, batch) pair carrying its minimal replica count; since cost never
decreases with replicas, only the minimal count can be optimal. Options that
are dominated inside their stage are dropped before the search.

Equal-objective optima are broken deterministically: higher accuracy, then
fewer total cores, then smaller total batch, then lower variant index in
pipeline order, then smaller batch in pipeline order.
"""

from __future__ import annotations

import bisect
import math
import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .accuracy import pipeline_accuracy, scaled_accuracies
from .catalog import ADMISSIBLE_BATCHES, Configuration, ModelVariant, Pipeline, StageConfig, validate_configuration
from .profiler import throughput

LATENCY_SLACK = 1e-9
THROUGHPUT_RTOL = 1e-9
DEFAULT_REPLICA_CAP = 32


@dataclass(frozen=True)
class ObjectiveWeights:
    accuracy_weight: float = 1.0
    cost_weight: float = 0.02
    batch_penalty: float = 0.001

    def __post_init__(self):
        ws = (self.accuracy_weight, self.cost_weight, self.batch_penalty)
        if not all(math.isfinite(w) and w >= 0 for w in ws):
            raise ValueError(f"objective weights must be finite and non-negative, got {ws}")
        if not any(ws):
            raise ValueError("objective weights must not all be zero")


@dataclass(frozen=True)
class SolveInput:
    pipeline: Pipeline
    weights: ObjectiveWeights = field(default_factory=ObjectiveWeights)
    arrival_rate: float = 1.0
    sla: float | None = None
    batch_set: tuple[int, ...] = ADMISSIBLE_BATCHES
    replica_cap: int = DEFAULT_REPLICA_CAP

    def __post_init__(self):
        if not self.arrival_rate > 0:
            raise ValueError("arrival_rate must be positive")
        if self.sla is not None and not self.sla > 0:
            raise ValueError("sla must be positive")
        bs = tuple(self.batch_set)
        if not bs or any(b < 1 for b in bs) or list(bs) != sorted(set(bs)):
            raise ValueError("batch_set must be a non-empty ascending set of positive integers")
        if self.replica_cap < 1:
            raise ValueError("replica_cap must be >= 1")

    @property
    def effective_sla(self) -> float:
        return self.pipeline.pipeline_sla if self.sla is None else self.sla


@dataclass(frozen=True)
class SolveOutcome:
    configuration: Configuration | None
    objective: float
    solve_time: float
    nodes_explored: int
    violation: str | None = None

    @property
    def feasible(self) -> bool:
        return self.configuration is not None


def queue_delay(batch: int, arrival_rate: float) -> float:
    """Worst-case wait of the first request of a batch for the rest to arrive."""
    return (batch - 1) / arrival_rate


def stage_latency(variant: ModelVariant, batch: int, arrival_rate: float) -> float:
    return variant.latency(batch) + queue_delay(batch, arrival_rate)


def _covers(replicas: int, per_replica: float, arrival_rate: float) -> bool:
    return replicas * per_replica >= arrival_rate * (1 - THROUGHPUT_RTOL)


def min_replicas(variant: ModelVariant, batch: int, arrival_rate: float) -> int:
    h = throughput(variant.latency, batch)
    n = max(1, math.ceil(arrival_rate * (1 - THROUGHPUT_RTOL) / h))
    # settle float rounding against the same test feasible() applies
    while n > 1 and _covers(n - 1, h, arrival_rate):
        n -= 1
    while not _covers(n, h, arrival_rate):
        n += 1
    return n


def total_cores(pipeline: Pipeline, config: Configuration) -> int:
    return sum(sc.replicas * st.variant(sc.variant_id).base_cores for st, sc in zip(pipeline.stages, config))


def _combine(weights: ObjectiveWeights, accuracy: float, cores: int, batch: int) -> float:
    return weights.accuracy_weight * accuracy - weights.cost_weight * cores - weights.batch_penalty * batch


def objective_value(pipeline: Pipeline, config: Configuration, weights: ObjectiveWeights) -> float:
    return _combine(
        weights,
        pipeline_accuracy(pipeline, config),
        total_cores(pipeline, config),
        sum(sc.batch for sc in config),
    )


def pipeline_latency(pipeline: Pipeline, config: Configuration, arrival_rate: float) -> float:
    return math.fsum(
        stage_latency(st.variant(sc.variant_id), sc.batch, arrival_rate) for st, sc in zip(pipeline.stages, config)
    )


def feasible(pipeline: Pipeline, config: Configuration, arrival_rate: float, sla: float) -> tuple[bool, list[str]]:
    """Check the latency, throughput and one-variant-per-stage constraints."""
    problems = validate_configuration(pipeline, config)
    if problems:
        return False, problems
    total = pipeline_latency(pipeline, config, arrival_rate)
    if total > sla + LATENCY_SLACK:
        problems.append(f"latency: end-to-end {total:.6g}s exceeds SLA {sla:.6g}s")
    for st, sc in zip(pipeline.stages, config):
        h = throughput(st.variant(sc.variant_id).latency, sc.batch)
        if not _covers(sc.replicas, h, arrival_rate):
            problems.append(
                f"throughput: stage {st.id} serves {sc.replicas * h:.6g} RPS < arrival rate {arrival_rate:.6g}"
            )
    return not problems, problems


# -- search -------------------------------------------------------------------


@dataclass(frozen=True)
class _Option:
    variant_index: int
    batch: int
    replicas: int
    latency: float
    accuracy: float
    cores: int
    contribution: float

    def tie_key(self) -> tuple:
        return (self.accuracy, -self.cores, -self.batch, -self.variant_index)


def _tol(x: float) -> float:
    return 1e-9 * (1.0 + abs(x))


def _dominates(a: _Option, b: _Option) -> bool:
    if a.latency > b.latency:
        return False
    if a.contribution > b.contribution + _tol(b.contribution):
        return True
    return a.accuracy >= b.accuracy and a.cores <= b.cores and a.batch <= b.batch and a.tie_key() > b.tie_key()


def _prune_dominated(options: list[_Option]) -> list[_Option]:
    return [o for o in options if not any(_dominates(p, o) for p in options if p is not o)]


def _stage_options(
    inp: SolveInput,
    stage_index: int,
    allowed_variant: str | None,
    fixed_replicas: int | None,
) -> list[_Option]:
    stage = inp.pipeline.stages[stage_index]
    acc = scaled_accuracies(stage)
    w = inp.weights
    sla = inp.effective_sla
    out = []
    for vi, v in enumerate(stage.variants):
        if allowed_variant is not None and v.id != allowed_variant:
            continue
        for b in inp.batch_set:
            if b > v.max_batch:
                continue
            lat = stage_latency(v, b, inp.arrival_rate)
            if lat > sla + LATENCY_SLACK:
                continue
            if fixed_replicas is None:
                n = min_replicas(v, b, inp.arrival_rate)
                if n > inp.replica_cap:
                    continue
            else:
                n = fixed_replicas
                if not _covers(n, throughput(v.latency, b), inp.arrival_rate):
                    continue
            cores = n * v.base_cores
            out.append(_Option(vi, b, n, lat, acc[v.id], cores, _combine(w, acc[v.id], cores, b)))
    return out


def _diagnose(inp: SolveInput, allowed: Mapping[str, str], fixed_n: Mapping[str, int]) -> str:
    """Name the tightest violated constraint of an infeasible instance."""
    rate = inp.arrival_rate
    min_total = 0.0
    for st in inp.pipeline.stages:
        best_lat = math.inf
        serves = False
        for v in st.variants:
            if st.id in allowed and v.id != allowed[st.id]:
                continue
            for b in inp.batch_set:
                if b > v.max_batch:
                    continue
                n = fixed_n.get(st.id, inp.replica_cap)
                if _covers(n, throughput(v.latency, b), rate):
                    serves = True
                    best_lat = min(best_lat, stage_latency(v, b, rate))
        if not serves:
            n = fixed_n.get(st.id, inp.replica_cap)
            return f"throughput: stage {st.id} cannot serve {rate:.6g} RPS with {n} replicas"
        min_total += best_lat
    return f"latency: smallest end-to-end latency {min_total:.6g}s exceeds SLA {inp.effective_sla:.6g}s"


def _search(
    inp: SolveInput,
    allowed: Mapping[str, str] | None = None,
    fixed_n: Mapping[str, int] | None = None,
) -> SolveOutcome:
    started = time.perf_counter()
    allowed = dict(allowed or {})
    fixed_n = dict(fixed_n or {})
    pipeline = inp.pipeline
    for key in list(allowed) + list(fixed_n):
        pipeline.stage(key)  # KeyError for unknown stages
    for sid, vid in allowed.items():
        pipeline.stage(sid).variant(vid)
    sla = inp.effective_sla
    w = inp.weights

    per_stage = []
    for i, st in enumerate(pipeline.stages):
        opts = _prune_dominated(_stage_options(inp, i, allowed.get(st.id), fixed_n.get(st.id)))
        opts.sort(key=lambda o: (-o.contribution, o.latency, o.variant_index, o.batch))
        per_stage.append(opts)

    if any(not opts for opts in per_stage):
        return SolveOutcome(None, -math.inf, time.perf_counter() - started, 0, _diagnose(inp, allowed, fixed_n))

    order = sorted(range(len(per_stage)), key=lambda i: (len(per_stage[i]), i))
    depth_opts = [per_stage[i] for i in order]
    n_stages = len(order)
    min_lat = [min(o.latency for o in opts) for opts in depth_opts]
    min_lat_after = [0.0] * (n_stages + 1)
    for d in range(n_stages - 1, -1, -1):
        min_lat_after[d] = min_lat_after[d + 1] + min_lat[d]
    # per depth: options by latency with running best contribution, for budget-aware bounds
    by_lat = []
    for opts in depth_opts:
        lats, best, run = [], [], -math.inf
        for o in sorted(opts, key=lambda o: o.latency):
            run = max(run, o.contribution)
            lats.append(o.latency)
            best.append(run)
        by_lat.append((lats, best))
    max_contrib_after = [0.0] * (n_stages + 1)
    for d in range(n_stages - 1, -1, -1):
        max_contrib_after[d] = max_contrib_after[d + 1] + by_lat[d][1][-1]

    def remaining_bound(d: int, slack: float) -> float:
        """Upper bound on contributions of depths >= d given latency slack beyond their minima."""
        total = 0.0
        for k in range(d, n_stages):
            lats, best = by_lat[k]
            i = bisect.bisect_right(lats, min_lat[k] + slack) - 1
            if i < 0:
                return -math.inf
            total += best[i]
        return total

    best_key: tuple | None = None
    best_choice: list[_Option] | None = None
    chosen: list[_Option | None] = [None] * n_stages
    nodes = 0

    def leaf_key(picks: Sequence[_Option]) -> tuple | None:
        in_order = [None] * n_stages
        for d, o in enumerate(picks):
            in_order[order[d]] = o
        if math.fsum(o.latency for o in in_order) > sla + LATENCY_SLACK:
            return None
        acc = math.fsum(o.accuracy for o in in_order)
        cores = sum(o.cores for o in in_order)
        batch = sum(o.batch for o in in_order)
        obj = _combine(w, acc, cores, batch)
        # last resort for equal totals: smaller batches, earlier stages first
        return (obj, acc, -cores, -batch, tuple(-o.variant_index for o in in_order), tuple(-o.batch for o in in_order))

    limit = sla + 2 * LATENCY_SLACK

    def dfs(d: int, lat: float, contrib: float) -> None:
        nonlocal best_key, best_choice, nodes
        nodes += 1
        if d == n_stages:
            key = leaf_key(chosen)
            if key is not None and (best_key is None or key > best_key):
                best_key, best_choice = key, list(chosen)
            return
        budget = limit - min_lat_after[d + 1]
        for o in depth_opts[d]:
            new_lat = lat + o.latency
            if new_lat > budget:
                continue
            if best_key is not None:
                floor = best_key[0] - _tol(best_key[0])
                # options are sorted by contribution, so later ones bound no higher
                if contrib + o.contribution + max_contrib_after[d + 1] < floor:
                    break
                if contrib + o.contribution + remaining_bound(d + 1, budget - new_lat) < floor:
                    continue
            chosen[d] = o
            dfs(d + 1, new_lat, contrib + o.contribution)
        chosen[d] = None

    dfs(0, 0.0, 0.0)
    elapsed = time.perf_counter() - started
    if best_choice is None:
        return SolveOutcome(None, -math.inf, elapsed, nodes, _diagnose(inp, allowed, fixed_n))

    picks = [None] * n_stages
    for d, o in enumerate(best_choice):
        picks[order[d]] = o
    config = Configuration(
        tuple(
            StageConfig(st.id, st.variants[o.variant_index].id, o.batch, o.replicas)
            for st, o in zip(pipeline.stages, picks)
        )
    )
    ok, problems = feasible(pipeline, config, inp.arrival_rate, sla)
    if not ok:
        raise AssertionError(f"solver returned an infeasible configuration: {problems}")
    return SolveOutcome(config, best_key[0], elapsed, nodes)


def solve(inp: SolveInput) -> SolveOutcome:
    """Optimal configuration, or an outcome with ``configuration=None`` and a violation message."""
    return _search(inp)


def solve_fixed_variants(inp: SolveInput, fixed: Mapping[str, str]) -> SolveOutcome:
    """Optimise batch sizes and replicas with the given stage -> variant choices held fixed."""
    return _search(inp, allowed=fixed)


def solve_fixed_replicas(inp: SolveInput, fixed_n: Mapping[str, int]) -> SolveOutcome:
    """Optimise variants and batch sizes with the given stage -> replica counts held fixed."""
    if any(n < 1 for n in fixed_n.values()):
        raise ValueError("fixed replica counts must be >= 1")
    return _search(inp, fixed_n=fixed_n)
