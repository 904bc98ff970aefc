"""Pipeline / model-variant data model and the catalog file format.

A catalog file is YAML (JSON is accepted too, being a YAML subset)::

    pipeline:
      id: video
      sla: 6.89                 # optional, derived as the sum of stage SLAs
      stages:
        - id: detect
          sla: 4.62             # optional, derived from variant latencies
          threshold_rps: 4
          variants:
            - id: yolov5n
              quality: {value: 45.7, measure: mAP, higher_is_better: true}
              latency: {a: 0.0, b: 0.012, c: 0.07}
              base_cores: 1
              max_batch: 64
              memory: 0

Instead of ``latency`` a variant may carry ``samples_ref: <profiles.csv>``
(path relative to the catalog file, optionally ``profile_id``); the latency
model is then fitted from the samples and, when ``base_cores`` is omitted,
the base allocation is searched as well.

Values are constructed without checks so that :func:`validate` can report
every problem at once; :func:`load_pipeline` validates before returning.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

import yaml

ADMISSIBLE_BATCHES = (1, 2, 4, 8, 16, 32, 64)
DEFAULT_MAX_BATCH = 64


class CatalogError(ValueError):
    """Malformed or invalid catalog input. ``field`` names the offending entry."""

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


@dataclass(frozen=True)
class QualityScore:
    value: float
    measure_name: str = "accuracy"
    higher_is_better: bool = True


@dataclass(frozen=True)
class LatencyModel:
    """Batch latency ``quad_coeff*b**2 + lin_coeff*b + const_coeff`` in seconds."""

    quad_coeff: float
    lin_coeff: float
    const_coeff: float

    def __call__(self, batch: float) -> float:
        return self.quad_coeff * batch * batch + self.lin_coeff * batch + self.const_coeff


@dataclass(frozen=True)
class ModelVariant:
    id: str
    quality: QualityScore
    latency: LatencyModel
    base_cores: int = 1
    max_batch: int = DEFAULT_MAX_BATCH
    memory: float = 0.0


@dataclass(frozen=True)
class Stage:
    id: str
    variants: tuple[ModelVariant, ...]
    stage_sla: float
    threshold_rps: float = 1.0

    def variant(self, variant_id: str) -> ModelVariant:
        for v in self.variants:
            if v.id == variant_id:
                return v
        raise KeyError(f"stage {self.id!r} has no variant {variant_id!r}")

    def variant_index(self, variant_id: str) -> int:
        for i, v in enumerate(self.variants):
            if v.id == variant_id:
                return i
        raise KeyError(f"stage {self.id!r} has no variant {variant_id!r}")


@dataclass(frozen=True)
class Pipeline:
    id: str
    stages: tuple[Stage, ...]
    pipeline_sla: float

    def stage(self, stage_id: str) -> Stage:
        for s in self.stages:
            if s.id == stage_id:
                return s
        raise KeyError(f"pipeline {self.id!r} has no stage {stage_id!r}")


@dataclass(frozen=True)
class StageConfig:
    stage_id: str
    variant_id: str
    batch: int
    replicas: int


@dataclass(frozen=True)
class Configuration:
    """One ``StageConfig`` per pipeline stage, in pipeline order."""

    stages: tuple[StageConfig, ...] = field(default_factory=tuple)

    def __iter__(self) -> Iterator[StageConfig]:
        return iter(self.stages)

    def __len__(self) -> int:
        return len(self.stages)

    def for_stage(self, stage_id: str) -> StageConfig:
        for sc in self.stages:
            if sc.stage_id == stage_id:
                return sc
        raise KeyError(f"configuration has no entry for stage {stage_id!r}")

    def to_dict(self) -> dict:
        return {
            "stages": [
                {"stage": s.stage_id, "variant": s.variant_id, "batch": s.batch, "replicas": s.replicas}
                for s in self.stages
            ]
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Configuration":
        try:
            return cls(
                tuple(
                    StageConfig(str(s["stage"]), str(s["variant"]), int(s["batch"]), int(s["replicas"]))
                    for s in data["stages"]
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise CatalogError(f"malformed configuration entry ({exc})", "stages") from exc

    def describe(self) -> str:
        return " ".join(f"{s.stage_id}:{s.variant_id}:{s.batch}:{s.replicas}" for s in self.stages)


def admissible_batches(max_batch: int) -> tuple[int, ...]:
    return tuple(b for b in ADMISSIBLE_BATCHES if b <= max_batch)


def _finite(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _positive_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool) and x >= 1


def _latency_violations(model: LatencyModel, max_batch: int, where: str) -> list[str]:
    coeffs = (model.quad_coeff, model.lin_coeff, model.const_coeff)
    if not all(_finite(c) for c in coeffs):
        return [f"{where}.latency: coefficients must be finite"]
    if not _positive_int(max_batch):
        return []
    bad = [b for b in range(1, max_batch + 1) if not model(b) > 0]
    if bad:
        return [f"{where}.latency: predicted latency must be positive (fails at batch {bad[0]})"]
    return []


def validate(pipeline: Pipeline, max_batch_limit: int = DEFAULT_MAX_BATCH) -> list[str]:
    """Return every invariant violation in ``pipeline``; an empty list means ok."""
    out: list[str] = []
    if not pipeline.id:
        out.append("pipeline.id: must be non-empty")
    if not (_finite(pipeline.pipeline_sla) and pipeline.pipeline_sla > 0):
        out.append("pipeline.sla: pipeline_sla must be positive")
    if not pipeline.stages:
        out.append("pipeline.stages: at least one stage required")
    seen_stages: set[str] = set()
    for i, stage in enumerate(pipeline.stages):
        where = f"stages[{i}]"
        if not stage.id:
            out.append(f"{where}.id: must be non-empty")
        elif stage.id in seen_stages:
            out.append(f"{where}.id: duplicate stage id {stage.id!r}")
        seen_stages.add(stage.id)
        if not (_finite(stage.stage_sla) and stage.stage_sla > 0):
            out.append(f"{where}.sla: stage_sla must be positive")
        if not (_finite(stage.threshold_rps) and stage.threshold_rps > 0):
            out.append(f"{where}.threshold_rps: threshold_rps must be positive")
        if not stage.variants:
            out.append(f"{where}.variants: at least one variant required")
        seen_variants: set[str] = set()
        for j, v in enumerate(stage.variants):
            vw = f"{where}.variants[{j}]"
            if not v.id:
                out.append(f"{vw}.id: must be non-empty")
            elif v.id in seen_variants:
                out.append(f"{vw}.id: duplicate variant id {v.id!r}")
            seen_variants.add(v.id)
            if not _finite(v.quality.value):
                out.append(f"{vw}.quality.value: must be finite")
            if not v.quality.measure_name:
                out.append(f"{vw}.quality.measure: must be non-empty")
            if not _positive_int(v.base_cores):
                out.append(f"{vw}.base_cores: must be an integer >= 1")
            if not _positive_int(v.max_batch):
                out.append(f"{vw}.max_batch: must be an integer >= 1")
            elif v.max_batch > max_batch_limit:
                out.append(f"{vw}.max_batch: exceeds limit {max_batch_limit}")
            if not (_finite(v.memory) and v.memory >= 0):
                out.append(f"{vw}.memory: must be non-negative")
            out.extend(_latency_violations(v.latency, v.max_batch, vw))
    return out


def validate_configuration(pipeline: Pipeline, config: Configuration) -> list[str]:
    """Structural checks of a configuration against a pipeline."""
    out: list[str] = []
    if [s.stage_id for s in config] != [s.id for s in pipeline.stages]:
        out.append("configuration must list exactly one entry per stage, in pipeline order")
        return out
    for stage, sc in zip(pipeline.stages, config):
        try:
            variant = stage.variant(sc.variant_id)
        except KeyError:
            out.append(f"{stage.id}: unknown variant {sc.variant_id!r}")
            continue
        if not _positive_int(sc.batch):
            out.append(f"{stage.id}: batch must be >= 1")
        elif sc.batch > variant.max_batch:
            out.append(f"{stage.id}: batch {sc.batch} exceeds max_batch {variant.max_batch}")
        if not _positive_int(sc.replicas):
            out.append(f"{stage.id}: replicas must be >= 1")
    return out


# -- parsing -----------------------------------------------------------------


def _require(d: dict, key: str, where: str):
    if not isinstance(d, dict) or key not in d:
        raise CatalogError("missing required field", f"{where}.{key}")
    return d[key]


def _number(x, where: str) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise CatalogError(f"expected a number, got {x!r}", where)
    return float(x)


def _integer(x, where: str) -> int:
    if isinstance(x, bool) or not isinstance(x, int):
        raise CatalogError(f"expected an integer, got {x!r}", where)
    return x


def _parse_quality(raw, where: str) -> QualityScore:
    if isinstance(raw, (int, float)) and not isinstance(raw, bool):
        return QualityScore(float(raw))
    return QualityScore(
        value=_number(_require(raw, "value", where), f"{where}.value"),
        measure_name=str(raw.get("measure", "accuracy")),
        higher_is_better=bool(raw.get("higher_is_better", True)),
    )


def _parse_latency(raw, where: str) -> LatencyModel:
    if not isinstance(raw, dict):
        raise CatalogError("expected a mapping {a, b, c}", where)
    return LatencyModel(
        _number(raw.get("a", 0.0), f"{where}.a"),
        _number(raw.get("b", 0.0), f"{where}.b"),
        _number(_require(raw, "c", where), f"{where}.c"),
    )


def _check_linear(raw_pipeline: dict, stage_ids: list[str]) -> None:
    edges = raw_pipeline.get("edges")
    if edges is not None:
        expected = [[a, b] for a, b in zip(stage_ids, stage_ids[1:])]
        if [list(e) for e in edges] != expected:
            raise CatalogError("only linear chains of stages are supported", "pipeline.edges")
    for i, raw in enumerate(raw_pipeline.get("stages", [])):
        inputs = raw.get("inputs") if isinstance(raw, dict) else None
        if inputs is None:
            continue
        expected = [] if i == 0 else [stage_ids[i - 1]]
        if list(inputs) != expected:
            raise CatalogError("only linear chains of stages are supported", f"stages[{i}].inputs")


def parse_pipeline(data: dict, base_dir: str | os.PathLike | None = None) -> Pipeline:
    """Build a pipeline from parsed catalog data and validate it."""
    from . import profiler  # profiler depends on the types above

    raw = data.get("pipeline", data) if isinstance(data, dict) else None
    if not isinstance(raw, dict):
        raise CatalogError("top level must be a mapping", "pipeline")
    pid = str(_require(raw, "id", "pipeline"))
    raw_stages = _require(raw, "stages", "pipeline")
    if not isinstance(raw_stages, list) or not raw_stages:
        raise CatalogError("at least one stage required", "pipeline.stages")

    stage_ids = [str(_require(s, "id", f"stages[{i}]")) for i, s in enumerate(raw_stages)]
    _check_linear(raw, stage_ids)

    stages = []
    sample_cache: dict[Path, list] = {}
    for i, rs in enumerate(raw_stages):
        where = f"stages[{i}]"
        threshold = _number(rs.get("threshold_rps", 1.0), f"{where}.threshold_rps")
        raw_variants = rs.get("variants")
        if not isinstance(raw_variants, list) or not raw_variants:
            raise CatalogError("at least one variant required", f"{where}.variants")
        sla = rs.get("sla")
        sla = None if sla is None else _number(sla, f"{where}.sla")

        seen: set[str] = set()
        fixed: dict[int, ModelVariant] = {}
        profiled: dict[int, tuple[dict, list]] = {}
        for j, rv in enumerate(raw_variants):
            vw = f"{where}.variants[{j}]"
            vid = str(_require(rv, "id", vw))
            if vid in seen:
                raise CatalogError(f"duplicate variant id {vid!r}", f"{vw}.id")
            seen.add(vid)
            common = dict(
                id=vid,
                quality=_parse_quality(_require(rv, "quality", vw), f"{vw}.quality"),
                max_batch=_integer(rv.get("max_batch", DEFAULT_MAX_BATCH), f"{vw}.max_batch"),
                memory=_number(rv.get("memory", 0.0), f"{vw}.memory"),
            )
            if "latency" in rv:
                fixed[j] = ModelVariant(
                    latency=_parse_latency(rv["latency"], f"{vw}.latency"),
                    base_cores=_integer(rv.get("base_cores", 1), f"{vw}.base_cores"),
                    **common,
                )
            elif "samples_ref" in rv:
                path = Path(base_dir or ".") / str(rv["samples_ref"])
                if path not in sample_cache:
                    try:
                        sample_cache[path] = profiler.load_profiles(path)
                    except (OSError, ValueError) as exc:
                        raise CatalogError(str(exc), f"{vw}.samples_ref") from exc
                key = str(rv.get("profile_id", vid))
                samples = [s for s in sample_cache[path] if s.variant_id == key]
                if not samples:
                    raise CatalogError(f"no profile samples for {key!r} in {path}", f"{vw}.samples_ref")
                profiled[j] = (dict(common, base_cores=rv.get("base_cores")), samples)
            else:
                raise CatalogError("variant needs 'latency' or 'samples_ref'", vw)

        variants: list[ModelVariant | None] = [fixed.get(j) for j in range(len(raw_variants))]
        if profiled:
            try:
                resolved, sla = profiler.resolve_profiled_variants(
                    list(fixed.values()), profiled, threshold, sla
                )
            except ValueError as exc:
                raise CatalogError(str(exc), f"{where}.variants") from exc
            for j, v in resolved.items():
                variants[j] = v
        if sla is None:
            sla = profiler.derive_stage_sla(variants)
        stages.append(Stage(stage_ids[i], tuple(variants), sla, threshold))

    psla = raw.get("sla")
    pipeline = Pipeline(pid, tuple(stages), 0.0)
    psla = profiler.derive_pipeline_sla(pipeline) if psla is None else _number(psla, "pipeline.sla")
    pipeline = replace(pipeline, pipeline_sla=psla)
    problems = validate(pipeline)
    if problems:
        raise CatalogError("; ".join(problems))
    return pipeline


def load_pipeline(file_path: str | os.PathLike) -> Pipeline:
    path = Path(file_path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise CatalogError(f"cannot read catalog: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise CatalogError(f"parse error in {path}: {exc}") from exc
    return parse_pipeline(data, base_dir=path.parent)


def pipeline_to_dict(pipeline: Pipeline) -> dict:
    """Fully explicit form (fitted coefficients, SLAs) that reloads identically."""
    return {
        "pipeline": {
            "id": pipeline.id,
            "sla": pipeline.pipeline_sla,
            "stages": [
                {
                    "id": s.id,
                    "sla": s.stage_sla,
                    "threshold_rps": s.threshold_rps,
                    "variants": [
                        {
                            "id": v.id,
                            "quality": {
                                "value": v.quality.value,
                                "measure": v.quality.measure_name,
                                "higher_is_better": v.quality.higher_is_better,
                            },
                            "latency": {
                                "a": v.latency.quad_coeff,
                                "b": v.latency.lin_coeff,
                                "c": v.latency.const_coeff,
                            },
                            "base_cores": v.base_cores,
                            "max_batch": v.max_batch,
                            "memory": v.memory,
                        }
                        for v in s.variants
                    ],
                }
                for s in pipeline.stages
            ],
        }
    }


def dump_pipeline(pipeline: Pipeline, file_path: str | os.PathLike) -> None:
    Path(file_path).write_text(yaml.safe_dump(pipeline_to_dict(pipeline), sort_keys=False))
