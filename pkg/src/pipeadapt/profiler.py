"""Latency-model fitting, base core allocation and SLA derivation.

Profiles are CSV files with the header
``variant_id,cores,batch,latency_s[,throughput_rps]``, one row per measurement.
"""

from __future__ import annotations

import csv
import math
import os
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .catalog import (
    DEFAULT_MAX_BATCH,
    LatencyModel,
    ModelVariant,
    Pipeline,
    QualityScore,
    admissible_batches,
)

SLA_MULTIPLIER = 5
MAX_SLA_ROUNDS = 3


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class ProfileSample:
    variant_id: str
    cores: int
    batch: int
    latency: float
    throughput: float | None = None


def load_profiles(path: str | os.PathLike) -> list[ProfileSample]:
    """Read a profile CSV; raises ``ValueError`` naming the bad line."""
    path = Path(path)
    out = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"variant_id", "cores", "batch", "latency_s"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise ValueError(f"{path}: header must contain {sorted(required)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                tp = row.get("throughput_rps")
                sample = ProfileSample(
                    variant_id=row["variant_id"].strip(),
                    cores=int(row["cores"]),
                    batch=int(row["batch"]),
                    latency=float(row["latency_s"]),
                    throughput=float(tp) if tp not in (None, "") else None,
                )
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed row ({exc})") from exc
            if not sample.variant_id or sample.cores < 1 or sample.batch < 1 or not sample.latency > 0:
                raise ValueError(f"{path}:{lineno}: cores/batch must be >= 1 and latency > 0")
            out.append(sample)
    return out


def group_by_cores(samples: Iterable[ProfileSample]) -> dict[int, list[ProfileSample]]:
    groups: dict[int, list[ProfileSample]] = defaultdict(list)
    for s in samples:
        groups[s.cores].append(s)
    return dict(sorted(groups.items()))


def group_by_variant(samples: Iterable[ProfileSample]) -> dict[str, list[ProfileSample]]:
    groups: dict[str, list[ProfileSample]] = defaultdict(list)
    for s in samples:
        groups[s.variant_id].append(s)
    return dict(groups)


def fit_latency(samples: Sequence[ProfileSample], max_batch: int = DEFAULT_MAX_BATCH) -> LatencyModel:
    """Least-squares quadratic in batch size through one (variant, cores) profile.

    Raises ``FitError`` with fewer than three distinct batch sizes, or when the
    fitted curve is not positive on every batch from 1 to ``max_batch``.
    """
    if len({(s.variant_id, s.cores) for s in samples}) > 1:
        raise FitError("samples must come from a single (variant, cores) profile")
    batches = np.array([s.batch for s in samples], dtype=float)
    if len(set(batches.tolist())) < 3:
        raise FitError(f"need at least 3 distinct batch sizes, got {len(set(batches.tolist()))}")
    lat = np.array([s.latency for s in samples], dtype=float)
    design = np.column_stack([batches**2, batches, np.ones_like(batches)])
    coef, *_ = np.linalg.lstsq(design, lat, rcond=None)
    model = LatencyModel(float(coef[0]), float(coef[1]), float(coef[2]))

    top = max(max_batch, int(batches.max()))
    for b in range(1, top + 1):
        if not model(b) > 0:
            raise FitError(
                f"fit for {samples[0].variant_id!r} at {samples[0].cores} cores predicts "
                f"non-positive latency {model(b):.3g}s at batch {b}"
            )
    return model


def predict_latency(model: LatencyModel, batch: int) -> float:
    return model(batch)


def throughput(model: LatencyModel, batch: int) -> float:
    """Per-replica requests/second when serving back-to-back batches of ``batch``."""
    return batch / model(batch)


def base_allocation(
    profiles: Mapping[int, Sequence[ProfileSample]],
    threshold_rps: float,
    stage_sla: float | None,
    max_batch: int = DEFAULT_MAX_BATCH,
    measured_throughput: bool = False,
) -> int | None:
    """Smallest profiled core count meeting the throughput threshold and SLA.

    The throughput test passes when some admissible batch reaches
    ``threshold_rps``; the latency test requires the latency at ``max_batch``
    to fit in ``stage_sla`` (skipped when ``stage_sla`` is None). Returns None
    when no profiled core count satisfies both.
    """
    if not profiles:
        raise ValueError("no profiles given")
    for cores in sorted(profiles):
        group = profiles[cores]
        model = fit_latency(group, max_batch)
        if measured_throughput and all(s.throughput is not None for s in group):
            best = max(s.throughput for s in group if s.batch <= max_batch)
        else:
            best = max(throughput(model, b) for b in admissible_batches(max_batch))
        if best < threshold_rps:
            continue
        if stage_sla is not None and model(max_batch) > stage_sla:
            continue
        return cores
    return None


def derive_stage_sla(variants: Sequence[ModelVariant]) -> float:
    """Mean batch-1 latency over the stage's variants, times five."""
    if not variants:
        raise ValueError("cannot derive a stage SLA without variants")
    return math.fsum(v.latency(1) for v in variants) / len(variants) * SLA_MULTIPLIER


def derive_pipeline_sla(pipeline: Pipeline) -> float:
    # Summing the shortest decimal forms keeps table values exact: 4.62 + 2.27 -> 6.89.
    return float(sum((Fraction(repr(float(s.stage_sla))) for s in pipeline.stages), Fraction(0)))


def resolve_profiled_variants(
    fixed: Sequence[ModelVariant],
    profiled: Mapping[int, tuple[dict, Sequence[ProfileSample]]],
    threshold_rps: float,
    stage_sla: float | None,
) -> tuple[dict[int, ModelVariant], float]:
    """Fit latency models and base allocations for catalog variants backed by samples.

    ``profiled`` maps variant position to (variant fields, samples). When the
    stage SLA is unknown it is settled by fixed-point iteration: first allocate
    on throughput alone, derive the SLA, then re-allocate under that SLA, for at
    most ``MAX_SLA_ROUNDS`` rounds. A variant that cannot meet the derived SLA
    at any profiled core count keeps its previous allocation.
    """
    groups = {j: group_by_cores(samples) for j, (_, samples) in profiled.items()}

    def allocate(sla: float | None, previous: dict[int, int] | None) -> dict[int, int]:
        cores = {}
        for j, (fields, _) in profiled.items():
            if fields.get("base_cores") is not None:
                cores[j] = int(fields["base_cores"])
                continue
            c = base_allocation(groups[j], threshold_rps, sla, fields["max_batch"])
            if c is None:
                if previous is None:
                    raise ValueError(
                        f"variant {fields['id']!r} cannot reach {threshold_rps} RPS at any profiled core count"
                    )
                c = previous[j]
            cores[j] = c
        return cores

    def build(cores: dict[int, int]) -> dict[int, ModelVariant]:
        out = {}
        for j, (fields, _) in profiled.items():
            if cores[j] not in groups[j]:
                raise ValueError(f"variant {fields['id']!r} has no profile at {cores[j]} cores")
            model = fit_latency(groups[j][cores[j]], fields["max_batch"])
            out[j] = ModelVariant(
                id=fields["id"],
                quality=fields["quality"],
                latency=model,
                base_cores=cores[j],
                max_batch=fields["max_batch"],
                memory=fields["memory"],
            )
        return out

    if stage_sla is not None:
        return build(allocate(stage_sla, None)), stage_sla

    cores = allocate(None, None)
    variants = build(cores)
    sla = derive_stage_sla(list(fixed) + list(variants.values()))
    for _ in range(MAX_SLA_ROUNDS):
        new_cores = allocate(sla, cores)
        if new_cores == cores:
            break
        cores = new_cores
        variants = build(cores)
        sla = derive_stage_sla(list(fixed) + list(variants.values()))
    return variants, sla


def base_allocation_table(
    samples: Sequence[ProfileSample],
    thresholds: Sequence[float],
    stage_sla: float | None = None,
    max_batch: int = DEFAULT_MAX_BATCH,
) -> list[dict]:
    """One row per threshold: variant id -> cores (None when uncappable).

    Without ``stage_sla`` each row treats all profiled variants as one stage and
    derives its SLA the same way catalog loading does.
    """
    by_variant = group_by_variant(samples)
    names = list(by_variant)
    rows = []
    for th in thresholds:
        sla = stage_sla
        if sla is None:
            cappable = [
                n for n in names if base_allocation(group_by_cores(by_variant[n]), th, None, max_batch) is not None
            ]
            if cappable:
                fields = {
                    j: ({"id": n, "quality": QualityScore(0.0), "max_batch": max_batch, "memory": 0.0}, by_variant[n])
                    for j, n in enumerate(cappable)
                }
                _, sla = resolve_profiled_variants([], fields, th, None)
        row = {"threshold_rps": th}
        for n in names:
            row[n] = base_allocation(group_by_cores(by_variant[n]), th, sla, max_batch)
        rows.append(row)
    return rows
