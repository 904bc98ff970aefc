"""Rank-based accuracy normalisation for pipeline stages.

Each stage's variants are ordered by quality (worst first) and spaced evenly
on [0, 1] by rank; the pipeline score is the sum over stages.
"""

from __future__ import annotations

import math

from .catalog import Configuration, Pipeline, Stage


def _direction_adjusted(stage: Stage) -> list[float]:
    return [v.quality.value if v.quality.higher_is_better else -v.quality.value for v in stage.variants]


def scaled_accuracies(stage: Stage) -> dict[str, float]:
    """Map variant id to its scaled accuracy in [0, 1].

    Tied qualities share the mean of the ranks they span. A single-variant
    stage scores 1.0.
    """
    k = len(stage.variants)
    if k == 1:
        return {stage.variants[0].id: 1.0}
    scores = _direction_adjusted(stage)
    order = sorted(range(k), key=lambda i: scores[i])
    ranks = [0.0] * k
    pos = 0
    while pos < k:
        end = pos
        while end + 1 < k and scores[order[end + 1]] == scores[order[pos]]:
            end += 1
        mean_rank = (pos + end) / 2
        for idx in order[pos : end + 1]:
            ranks[idx] = mean_rank
        pos = end + 1
    return {v.id: ranks[i] / (k - 1) for i, v in enumerate(stage.variants)}


def pipeline_accuracy(pipeline: Pipeline, config: Configuration) -> float:
    total = []
    for stage, sc in zip(pipeline.stages, config):
        table = scaled_accuracies(stage)
        if sc.variant_id not in table:
            raise KeyError(f"stage {stage.id!r} has no variant {sc.variant_id!r}")
        total.append(table[sc.variant_id])
    return math.fsum(total)


def lightest_variant(stage: Stage) -> str:
    """Least accurate variant (ties: fewer cores, then catalog order)."""
    acc = scaled_accuracies(stage)
    return min(stage.variants, key=lambda v: (acc[v.id], v.base_cores)).id


def heaviest_variant(stage: Stage) -> str:
    """Most accurate variant (ties: fewer cores, then catalog order)."""
    acc = scaled_accuracies(stage)
    return min(stage.variants, key=lambda v: (-acc[v.id], v.base_cores)).id
