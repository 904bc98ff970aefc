"""Synthetic pipelines and traces for benchmarks and scripted experiments."""

from __future__ import annotations

import numpy as np

from .catalog import LatencyModel, ModelVariant, Pipeline, QualityScore, Stage
from .predictor import LoadSeries
from .profiler import derive_pipeline_sla, derive_stage_sla


def linear_through(b1: float, l1: float, b2: float, l2: float) -> LatencyModel:
    slope = (l2 - l1) / (b2 - b1)
    return LatencyModel(0.0, slope, l1 - slope * b1)


def random_pipeline(
    rng: np.random.Generator,
    n_stages: int,
    n_variants: int,
    max_batch: int = 64,
    quality_levels: int | None = None,
) -> Pipeline:
    """Stages whose variants trade accuracy against latency and cores.

    ``quality_levels`` draws qualities from a small integer range so that ties
    occur; by default qualities are distinct and grow with variant weight.
    """
    stages = []
    for s in range(n_stages):
        weights = np.sort(rng.uniform(0.5, 4.0, size=n_variants))
        if quality_levels:
            qualities = rng.integers(0, quality_levels, size=n_variants).astype(float)
        else:
            qualities = np.sort(rng.uniform(40.0, 90.0, size=n_variants))
        variants = []
        for m in range(n_variants):
            const = float(rng.uniform(0.02, 0.08) * weights[m])
            lin = float(rng.uniform(0.005, 0.03) * weights[m])
            quad = float(rng.uniform(0.0, 2e-4) * weights[m])
            cores = int(rng.choice([1, 1, 2, 4, 8])) if quality_levels else int(min(16, 2 ** int(weights[m])))
            variants.append(
                ModelVariant(
                    id=f"s{s}m{m}",
                    quality=QualityScore(float(qualities[m]), "accuracy"),
                    latency=LatencyModel(quad, lin, const),
                    base_cores=cores,
                    max_batch=max_batch,
                )
            )
        stages.append(Stage(f"stage{s}", tuple(variants), derive_stage_sla(variants), 1.0))
    pipeline = Pipeline(f"synthetic-{n_stages}x{n_variants}", tuple(stages), 1.0)
    return Pipeline(pipeline.id, pipeline.stages, derive_pipeline_sla(pipeline))


def step_trace(low: int, high: int, step_at: int, length: int) -> LoadSeries:
    return LoadSeries(0, [low] * step_at + [high] * (length - step_at))


def alternating_trace(low: int, high: int, period: int, length: int) -> LoadSeries:
    return LoadSeries(0, [high if (t // period) % 2 else low for t in range(length)])


def bursty_trace(rng: np.random.Generator, base: int, burst: int, length: int, n_bursts: int, burst_len: int) -> LoadSeries:
    counts = rng.poisson(base, size=length)
    starts = np.sort(rng.choice(np.arange(30, length - burst_len), size=n_bursts, replace=False))
    for s in starts:
        counts[s : s + burst_len] += burst
    return LoadSeries(0, [int(c) for c in counts])
