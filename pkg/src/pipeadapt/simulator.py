"""Discrete-event replay of a request trace through a batched, replicated pipeline.

Runtime model:

* one central FIFO queue per stage;
* a batch of exactly ``b`` requests leaves the queue as soon as ``b`` are
  waiting (or, with ``batch_max_wait``, whatever is waiting once the oldest has
  waited that long) and goes to the next replica in round-robin order;
* a replica serves one batch at a time, so a batch handed to a busy replica
  starts when that replica frees up; service takes ``l(batch)``;
* a whole batch completes together and moves to the next stage at once.

Drops: when taken off the queue of stage ``s`` (``s`` > first), a request whose
elapsed time already exceeds its upstream budget is dropped. The budget is the
summed SLAs of the stages before ``s`` by default, or the whole pipeline SLA
with ``upstream_budget="pipeline_sla"``; independently, any request whose elapsed time exceeds twice the
pipeline SLA is dropped while queued or on finishing a stage.

Schedule changes keep queues and let in-flight batches finish under the old
settings; later batches use the new variant, batch size and replica count.
"""

from __future__ import annotations

import heapq
import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .accuracy import pipeline_accuracy
from .catalog import Configuration, LatencyModel, Pipeline, validate_configuration
from .predictor import LoadSeries

ARRIVAL_MODES = ("uniform_spaced", "poisson")
UPSTREAM_BUDGETS = ("stage_slas", "pipeline_sla")

# event kinds; lower value wins at equal timestamps
_ACTIVATE, _COMPLETE, _ARRIVE, _BATCH_TIMER, _DEADLINE = range(5)

_QUEUED, _SERVING, _DONE, _DROPPED = range(4)


@dataclass(frozen=True)
class SimConfig:
    trace: LoadSeries
    schedule: tuple[tuple[float, Configuration], ...]
    arrival_mode: str = "uniform_spaced"
    seed: int = 0
    reconfig_latency: float = 0.0
    batch_max_wait: float | None = None
    drain: bool = True
    upstream_budget: str = "stage_slas"

    def __post_init__(self):
        object.__setattr__(self, "schedule", tuple(self.schedule))
        if self.arrival_mode not in ARRIVAL_MODES:
            raise ValueError(f"arrival_mode must be one of {ARRIVAL_MODES}")
        if self.upstream_budget not in UPSTREAM_BUDGETS:
            raise ValueError(f"upstream_budget must be one of {UPSTREAM_BUDGETS}")
        times = [t for t, _ in self.schedule]
        if not times or times[0] != 0:
            raise ValueError("schedule must start at t=0")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("schedule times must be strictly increasing")
        if self.reconfig_latency < 0:
            raise ValueError("reconfig_latency must be non-negative")
        if self.batch_max_wait is not None and not self.batch_max_wait > 0:
            raise ValueError("batch_max_wait must be positive")


@dataclass
class Request:
    id: int
    arrival: float
    stage: int = 0
    state: int = _QUEUED
    enqueued: list[float] = field(default_factory=list)
    dequeued: list[float] = field(default_factory=list)
    completed: list[float] = field(default_factory=list)
    drop_reason: str | None = None


@dataclass
class _Replica:
    busy_until: float = 0.0


@dataclass
class _StageRuntime:
    index: int
    cum_sla_before: float
    queue: deque = field(default_factory=deque)
    live: int = 0
    batch: int = 1
    latency: LatencyModel | None = None
    replicas: list[_Replica] = field(default_factory=list)
    next_replica: int = 0
    dispatches: list[int] = field(default_factory=list)
    max_depth: int = 0
    max_head_wait: float = 0.0

    def reconfigure(self, latency: LatencyModel, batch: int, n: int, now: float) -> None:
        self.latency = latency
        self.batch = batch
        if n < len(self.replicas):
            del self.replicas[n:]
        while len(self.replicas) < n:
            self.replicas.append(_Replica(now))
        self.next_replica %= n
        while len(self.dispatches) < n:
            self.dispatches.append(0)


@dataclass
class SimReport:
    stage_ids: list[str]
    arrivals: list[int]
    completions: list[int]
    drops: list[int]
    sla_violations: list[int]
    cost: list[float]
    accuracy: list[float]
    latencies: list[float]
    sla: float
    in_flight: int
    p50: float
    p99: float
    mean_cost: float
    mean_accuracy: float
    max_queue_depth: dict[str, int]
    max_head_wait: dict[str, float]
    dispatch_counts: dict[str, list[int]]
    drop_reasons: dict[str, int]

    @property
    def total_arrivals(self) -> int:
        return sum(self.arrivals)

    @property
    def total_completions(self) -> int:
        return sum(self.completions)

    @property
    def total_drops(self) -> int:
        return sum(self.drops)

    @property
    def total_violations(self) -> int:
        return sum(self.sla_violations)

    def summary(self) -> dict:
        return {
            "arrivals": self.total_arrivals,
            "completions": self.total_completions,
            "drops": self.total_drops,
            "in_flight": self.in_flight,
            "sla_s": self.sla,
            "sla_violations": self.total_violations,
            "sla_attainment": measure_sla_attainment(self, self.sla),
            "p50_s": self.p50,
            "p99_s": self.p99,
            "mean_cost_cores": self.mean_cost,
            "mean_accuracy_rank": self.mean_accuracy,
            "max_queue_depth": self.max_queue_depth,
            "max_head_wait_s": self.max_head_wait,
            "drop_reasons": self.drop_reasons,
        }

    def write(self, out_dir: str | Path, prefix: str = "report") -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        lines = ["t_s,arrivals,completions,drops,sla_violations,cost_cores,accuracy_rank"]
        for t in range(len(self.arrivals)):
            lines.append(
                f"{t},{self.arrivals[t]},{self.completions[t]},{self.drops[t]},"
                f"{self.sla_violations[t]},{self.cost[t]!r},{self.accuracy[t]!r}"
            )
        (out / f"{prefix}.csv").write_text("\n".join(lines) + "\n")
        (out / f"{prefix}.json").write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")


def measure_sla_attainment(report: SimReport, sla: float) -> float:
    """Share of arrivals completed within ``sla``; drops count against it."""
    if report.total_arrivals == 0:
        return 1.0
    within = sum(1 for x in report.latencies if x <= sla + 1e-9)
    return within / report.total_arrivals


def arrival_times(trace: LoadSeries, mode: str = "uniform_spaced", seed: int = 0) -> list[float]:
    """Per-request arrival times, relative to the start of the trace."""
    out: list[float] = []
    if mode == "uniform_spaced":
        for sec, k in enumerate(trace.counts):
            out.extend(sec + j / k for j in range(k))
    elif mode == "poisson":
        # given the count, Poisson arrivals within a second are uniform order statistics
        rng = np.random.default_rng(seed)
        for sec, k in enumerate(trace.counts):
            out.extend((sec + np.sort(rng.uniform(0.0, 1.0, size=k))).tolist())
    else:
        raise ValueError(f"unknown arrival mode {mode!r}")
    return out


def _check_schedule(pipeline: Pipeline, schedule: Sequence[tuple[float, Configuration]]) -> None:
    for t, config in schedule:
        problems = validate_configuration(pipeline, config)
        if problems:
            raise ValueError(f"schedule entry at t={t}: " + "; ".join(problems))


def _step_integral(changes: Sequence[tuple[float, float]], horizon: int) -> list[float]:
    """Per-second time averages of a right-continuous step function."""
    out = []
    for sec in range(horizon):
        lo, hi = float(sec), float(sec + 1)
        total = 0.0
        for i, (t, v) in enumerate(changes):
            end = changes[i + 1][0] if i + 1 < len(changes) else math.inf
            a, b = max(lo, t), min(hi, end)
            if b > a:
                total += (b - a) * v
        out.append(total)
    return out


def simulate(pipeline: Pipeline, sim: SimConfig) -> SimReport:
    _check_schedule(pipeline, sim.schedule)
    n_stages = len(pipeline.stages)
    sla = pipeline.pipeline_sla
    drop_after = 2 * sla
    cum = 0.0
    stages = []
    for i, st in enumerate(pipeline.stages):
        stages.append(_StageRuntime(i, cum if sim.upstream_budget == "stage_slas" else sla))
        cum += st.stage_sla

    times = arrival_times(sim.trace, sim.arrival_mode, sim.seed)
    requests: list[Request] = []
    events: list[tuple] = []
    seq = 0

    def push(t: float, kind: int, payload) -> None:
        nonlocal seq
        heapq.heappush(events, (t, kind, seq, payload))
        seq += 1

    activations = []
    for k, (t, config) in enumerate(sim.schedule):
        at = float(t) + (sim.reconfig_latency if k > 0 else 0.0)
        activations.append((at, config))
        push(at, _ACTIVATE, config)
    if times:
        push(times[0], _ARRIVE, 0)

    horizon = len(sim.trace)
    stop_at = math.inf if sim.drain else float(horizon)
    arrivals_at: list[float] = []
    completions_at: list[float] = []
    drops_at: list[float] = []
    violations_at: list[float] = []
    latencies: list[float] = []
    drop_reasons: dict[str, int] = {}
    active = False

    def drop(r: Request, now: float, reason: str) -> None:
        r.state = _DROPPED
        r.drop_reason = reason
        drops_at.append(now)
        violations_at.append(now)
        drop_reasons[reason] = drop_reasons.get(reason, 0) + 1

    def enqueue(r: Request, s: int, now: float) -> None:
        st = stages[s]
        r.stage = s
        r.state = _QUEUED
        r.enqueued.append(now)
        st.queue.append(r)
        st.live += 1
        st.max_depth = max(st.max_depth, st.live)
        if sim.batch_max_wait is not None:
            push(now + sim.batch_max_wait, _BATCH_TIMER, (r, s))
        try_dispatch(s, now)

    def stale(r: Request, s: int, now: float) -> str | None:
        elapsed = now - r.arrival
        if elapsed > drop_after:
            return "over_2x_sla"
        if s > 0 and elapsed > stages[s].cum_sla_before:
            return "upstream_sla"
        return None

    def try_dispatch(s: int, now: float, allow_partial: bool = False) -> None:
        st = stages[s]
        if not active:
            return
        while st.live >= st.batch or (allow_partial and st.live > 0):
            batch: list[Request] = []
            while st.queue and len(batch) < st.batch:
                r = st.queue.popleft()
                if r.state != _QUEUED or r.stage != s:
                    continue  # dropped while waiting
                st.live -= 1
                reason = stale(r, s, now)
                if reason:
                    drop(r, now, reason)
                    continue
                batch.append(r)
            if len(batch) < st.batch and not allow_partial:
                for r in reversed(batch):
                    st.queue.appendleft(r)
                    st.live += 1
                return
            if not batch:
                return
            dispatch(st, batch, now)
            allow_partial = False

    def dispatch(st: _StageRuntime, batch: list[Request], now: float) -> None:
        st.max_head_wait = max(st.max_head_wait, now - batch[0].enqueued[-1])
        idx = st.next_replica
        replica = st.replicas[idx]
        st.next_replica = (idx + 1) % len(st.replicas)
        st.dispatches[idx] += 1
        finish = max(now, replica.busy_until) + st.latency(len(batch))
        replica.busy_until = finish
        for r in batch:
            r.state = _SERVING
            r.dequeued.append(now)
        push(finish, _COMPLETE, (st.index, batch))

    def activate(config: Configuration, now: float) -> None:
        nonlocal active
        for st, stage, sc in zip(stages, pipeline.stages, config):
            st.reconfigure(stage.variant(sc.variant_id).latency, sc.batch, sc.replicas, now)
        active = True
        for s in range(n_stages):
            try_dispatch(s, now)

    while events:
        now, kind, _, payload = heapq.heappop(events)
        if now > stop_at:
            break
        if kind == _ACTIVATE:
            activate(payload, now)
        elif kind == _ARRIVE:
            rid = payload
            r = Request(rid, times[rid])
            requests.append(r)
            arrivals_at.append(now)
            if rid + 1 < len(times):
                push(times[rid + 1], _ARRIVE, rid + 1)
            push(math.nextafter(r.arrival + drop_after, math.inf), _DEADLINE, r)
            enqueue(r, 0, now)
        elif kind == _COMPLETE:
            s, batch = payload
            for r in batch:
                r.completed.append(now)
                if r.state != _SERVING:
                    continue
                if now - r.arrival > drop_after:
                    drop(r, now, "over_2x_sla")
                elif s + 1 < n_stages:
                    enqueue(r, s + 1, now)
                else:
                    r.state = _DONE
                    latency = now - r.arrival
                    latencies.append(latency)
                    completions_at.append(now)
                    if latency > sla + 1e-9:
                        violations_at.append(now)
        elif kind == _BATCH_TIMER:
            r, s = payload
            if r.state == _QUEUED and r.stage == s:
                try_dispatch(s, now, allow_partial=True)
        elif kind == _DEADLINE:
            r = payload
            if r.state == _QUEUED:
                stages[r.stage].live -= 1
                drop(r, now, "over_2x_sla")

    last = max([horizon] + [math.floor(t) + 1 for t in completions_at + drops_at])

    def per_second(ts: list[float]) -> list[int]:
        counts = [0] * last
        for t in ts:
            counts[min(int(math.floor(t)), last - 1)] += 1
        return counts

    cost_steps, acc_steps = [], []
    for at, config in activations:
        cost_steps.append(
            (at, float(sum(sc.replicas * st.variant(sc.variant_id).base_cores for st, sc in zip(pipeline.stages, config))))
        )
        acc_steps.append((at, pipeline_accuracy(pipeline, config)))
    cost = _step_integral(cost_steps, last)
    accuracy = _step_integral(acc_steps, last)
    span = max(horizon, 1)

    n_arr = len(arrivals_at)
    in_flight = n_arr - len(completions_at) - len(drops_at)
    lat = np.asarray(latencies)
    return SimReport(
        stage_ids=[s.id for s in pipeline.stages],
        arrivals=per_second(arrivals_at),
        completions=per_second(completions_at),
        drops=per_second(drops_at),
        sla_violations=per_second(violations_at),
        cost=cost,
        accuracy=accuracy,
        latencies=latencies,
        sla=sla,
        in_flight=in_flight,
        p50=float(np.percentile(lat, 50)) if lat.size else 0.0,
        p99=float(np.percentile(lat, 99)) if lat.size else 0.0,
        mean_cost=math.fsum(cost[:horizon]) / span if horizon else 0.0,
        mean_accuracy=math.fsum(accuracy[:horizon]) / span if horizon else 0.0,
        max_queue_depth={s.id: st.max_depth for s, st in zip(pipeline.stages, stages)},
        max_head_wait={s.id: st.max_head_wait for s, st in zip(pipeline.stages, stages)},
        dispatch_counts={s.id: list(st.dispatches) for s, st in zip(pipeline.stages, stages)},
        drop_reasons=dict(sorted(drop_reasons.items())),
    )


def load_schedule(path: str | Path) -> list[tuple[float, Configuration]]:
    """Read a schedule file: a YAML/JSON list of ``{t, stages: [...]}`` entries."""
    import yaml

    data = yaml.safe_load(Path(path).read_text())
    if isinstance(data, dict) and "schedule" in data:
        data = data["schedule"]
    if isinstance(data, dict) and "stages" in data:
        data = [dict(data, t=0)]
    if not isinstance(data, list) or not data:
        raise ValueError(f"{path}: expected a non-empty list of schedule entries")
    out = []
    for i, entry in enumerate(data):
        if not isinstance(entry, dict) or "t" not in entry:
            raise ValueError(f"{path}: schedule entry {i} needs 't' and 'stages'")
        out.append((float(entry["t"]), Configuration.from_dict(entry)))
    return out
