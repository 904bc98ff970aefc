"""Reference-load prediction over per-second request counts."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

PREDICTOR_KINDS = ("reactive_max", "window_max_headroom", "oracle", "external")


@dataclass(frozen=True)
class LoadSeries:
    """Requests per second; ``counts[i]`` covers ``[start_time + i, start_time + i + 1)``."""

    start_time: int = 0
    counts: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        if any(c < 0 for c in self.counts):
            raise ValueError("load counts must be non-negative")

    def __len__(self) -> int:
        return len(self.counts)

    def window(self, start: int, end: int) -> "LoadSeries":
        """Entries for absolute seconds in ``[start, end)``."""
        lo = max(0, start - self.start_time)
        hi = max(lo, min(len(self.counts), end - self.start_time))
        return LoadSeries(self.start_time + lo, self.counts[lo:hi])


def load_trace(path: str | os.PathLike) -> LoadSeries:
    """Read a ``t_s,rps`` CSV; seconds must be consecutive."""
    path = Path(path)
    times, counts = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return LoadSeries()
        if [h.strip() for h in header[:2]] != ["t_s", "rps"]:
            raise ValueError(f"{path}:1: expected header 't_s,rps'")
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            try:
                t, c = int(row[0]), int(float(row[1]))
            except (IndexError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed trace row {row!r}") from exc
            if c < 0:
                raise ValueError(f"{path}:{lineno}: negative request count {c}")
            if times and t != times[-1] + 1:
                raise ValueError(f"{path}:{lineno}: seconds must be consecutive (got {t} after {times[-1]})")
            times.append(t)
            counts.append(c)
    return LoadSeries(times[0] if times else 0, counts)


def write_trace(series: LoadSeries, path: str | os.PathLike) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_s", "rps"])
        for i, c in enumerate(series.counts):
            w.writerow([series.start_time + i, c])


def load_external_predictions(path: str | os.PathLike) -> dict[int, float]:
    out = {}
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"t", "predicted_rps"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: header must be 't,predicted_rps'")
        for lineno, row in enumerate(reader, start=2):
            try:
                out[int(row["t"])] = float(row["predicted_rps"])
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed row") from exc
    return out


@dataclass(frozen=True)
class PredictorSpec:
    kind: str = "reactive_max"
    window_s: int = 120
    horizon_s: int = 20
    headroom: float = 0.1
    external: dict[int, float] | None = field(default=None, compare=False, hash=False)

    def __post_init__(self):
        if self.kind not in PREDICTOR_KINDS:
            raise ValueError(f"unknown predictor kind {self.kind!r}; expected one of {PREDICTOR_KINDS}")
        if self.window_s < 1 or self.horizon_s < 1:
            raise ValueError("window_s and horizon_s must be >= 1")
        if self.headroom < 0:
            raise ValueError("headroom must be non-negative")
        if self.kind == "external" and self.external is None:
            raise ValueError("external predictor needs a predictions table")


def predict(
    spec: PredictorSpec,
    history: LoadSeries,
    future: LoadSeries | None = None,
    now: int | None = None,
) -> float:
    """Reference load for the coming horizon.

    ``reactive_max`` takes the peak of the trailing window; ``window_max_headroom``
    scales that peak by ``1 + headroom``; ``oracle`` returns the true peak of the
    next ``horizon_s`` seconds of ``future``; ``external`` returns the supplied
    prediction for the latest time at or before ``now``.
    """
    if spec.kind == "oracle":
        if future is None:
            raise ValueError("oracle predictor needs the future series")
        ahead = future.counts[: spec.horizon_s]
        if not ahead:
            raise ValueError("oracle predictor needs at least one future entry")
        return float(max(ahead))
    if spec.kind == "external":
        t = now if now is not None else history.start_time + len(history)
        known = [k for k in spec.external if k <= t]
        if not known:
            raise ValueError(f"no external prediction at or before t={t}")
        return float(spec.external[max(known)])
    if not history.counts:
        raise ValueError("prediction needs a non-empty history")
    peak = float(max(history.counts[-spec.window_s :]))
    if spec.kind == "window_max_headroom":
        return peak * (1 + spec.headroom)
    return peak


def smape(predicted: Sequence[float], actual: Sequence[float]) -> float:
    """Symmetric mean absolute percentage error in [0, 200]; 0/0 terms count as 0."""
    if len(predicted) != len(actual):
        raise ValueError(f"length mismatch: {len(predicted)} predicted vs {len(actual)} actual")
    if not predicted:
        raise ValueError("smape needs at least one point")
    total = 0.0
    for p, a in zip(predicted, actual):
        denom = (abs(p) + abs(a)) / 2
        if denom:
            total += abs(p - a) / denom
    return 100.0 * total / len(predicted)
