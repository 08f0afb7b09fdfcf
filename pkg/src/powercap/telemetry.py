"""Job-level telemetry model and aggregation of raw GPU samples."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

from .errors import EmptySeries, MalformedSeries, MixedJobs, RowError

SAMPLE_INTERVAL_MS = 100.0
PERCENTILES = (10, 25, 50, 75, 90)
STAT_FIELDS = ("mean", "sd", "min", "p10", "p25", "p50", "p75", "p90", "max")
METRICS = ("utilization", "temperature", "power")

# Sanity floor for temperatures; anything colder is a sensor fault.
MIN_TEMPERATURE_C = -50.0


class Sample(NamedTuple):
    timestamp: float  # ms since job start
    utilization: float  # percent
    temperature: float  # Celsius
    power: float  # Watts


def _check_sample_values(util, temp, power):
    util = np.asarray(util, dtype=float)
    temp = np.asarray(temp, dtype=float)
    power = np.asarray(power, dtype=float)
    for name, arr in (("utilization", util), ("temperature", temp), ("power", power)):
        if not np.all(np.isfinite(arr)):
            raise MalformedSeries(f"non-finite {name} sample")
    if np.any((util < 0) | (util > 100)):
        raise MalformedSeries("utilization outside [0, 100]")
    if np.any(power <= 0):
        raise MalformedSeries("power must be > 0 W")
    if np.any(temp <= MIN_TEMPERATURE_C):
        raise MalformedSeries(f"temperature below {MIN_TEMPERATURE_C} C")
    return util, temp, power


@dataclass(frozen=True, eq=False)
class SampleSeries:
    """Time-ordered samples from one GPU of one job.

    Stored column-wise; ``samples`` gives the row view.
    """

    job_id: str
    gpu_index: int
    timestamps: np.ndarray
    utilization: np.ndarray
    temperature: np.ndarray
    power: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=float)
        if t.size == 0:
            raise EmptySeries(f"job {self.job_id!r} gpu {self.gpu_index}: no samples")
        if int(self.gpu_index) < 0:
            raise MalformedSeries("gpu_index must be non-negative")
        util, temp, power = _check_sample_values(self.utilization, self.temperature, self.power)
        if not (t.shape == util.shape == temp.shape == power.shape) or t.ndim != 1:
            raise MalformedSeries("sample columns differ in length")
        if not np.all(np.isfinite(t)):
            raise MalformedSeries("non-finite timestamp")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise MalformedSeries(
                f"job {self.job_id!r} gpu {self.gpu_index}: timestamps not strictly increasing"
            )
        for name, arr in (("timestamps", t), ("utilization", util), ("temperature", temp), ("power", power)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_samples(cls, job_id, gpu_index, samples: Iterable[Sample]) -> "SampleSeries":
        rows = list(samples)
        if not rows:
            raise EmptySeries(f"job {job_id!r} gpu {gpu_index}: no samples")
        cols = np.array(rows, dtype=float).T
        return cls(job_id, int(gpu_index), cols[0], cols[1], cols[2], cols[3])

    @property
    def samples(self) -> list[Sample]:
        return [
            Sample(*row)
            for row in zip(
                self.timestamps.tolist(),
                self.utilization.tolist(),
                self.temperature.tolist(),
                self.power.tolist(),
            )
        ]

    def __len__(self):
        return self.timestamps.size

    def __eq__(self, other):
        if not isinstance(other, SampleSeries):
            return NotImplemented
        return (
            self.job_id == other.job_id
            and self.gpu_index == other.gpu_index
            and all(
                np.array_equal(getattr(self, c), getattr(other, c))
                for c in ("timestamps", "utilization", "temperature", "power")
            )
        )


@dataclass(frozen=True)
class StatSummary:
    mean: float
    sd: float | None
    min: float
    p10: float | None
    p25: float
    p50: float
    p75: float
    p90: float | None
    max: float
    n: int | None = None  # sample count; unknown for records read from file

    def __post_init__(self):
        if self.n is not None and self.n < 1:
            raise RowError("summary needs n >= 1", field="n")
        order = [("min", self.min)]
        if self.p10 is not None:
            order.append(("p10", self.p10))
        order += [("p25", self.p25), ("p50", self.p50), ("p75", self.p75)]
        if self.p90 is not None:
            order.append(("p90", self.p90))
        order.append(("max", self.max))
        for (a, va), (b, vb) in zip(order, order[1:]):
            if not va <= vb:
                raise RowError(f"{a}={va!r} exceeds {b}={vb!r}", field=b)
        if not self.min <= self.mean <= self.max:
            raise RowError(f"mean={self.mean!r} outside [min, max]", field="mean")
        if self.sd is not None and not self.sd >= 0:
            raise RowError(f"sd={self.sd!r} is negative", field="sd")

    @classmethod
    def from_values(cls, values) -> "StatSummary":
        """Summary statistics of raw values; percentiles interpolate linearly."""
        x = np.asarray(values, dtype=float)
        if x.size == 0:
            raise EmptySeries("cannot summarize zero values")
        q = np.percentile(x, PERCENTILES, method="linear")
        lo, hi = float(x.min()), float(x.max())
        if x.size > 1:
            if lo == hi:
                mean, sd = lo, 0.0
            else:
                mean = min(max(float(x.mean()), lo), hi)
                sd = float(x.std(ddof=1))
        else:
            mean, sd = lo, None
        return cls(
            mean=mean, sd=sd, min=lo,
            p10=float(q[0]), p25=float(q[1]), p50=float(q[2]), p75=float(q[3]), p90=float(q[4]),
            max=hi, n=int(x.size),
        )

    @classmethod
    def _prevalidated(cls, **values) -> "StatSummary":
        """Build without the per-object checks; the caller has already checked
        the same invariants on whole arrays."""
        obj = object.__new__(cls)
        obj.__dict__.update(values)
        return obj

    @property
    def has_tails(self) -> bool:
        """False for summary-lite records without p10/p90."""
        return self.p10 is not None and self.p90 is not None

    def get(self, stat: str) -> float | None:
        if stat not in STAT_FIELDS:
            raise KeyError(f"unknown statistic {stat!r}")
        return getattr(self, stat)


@dataclass(frozen=True)
class JobRecord:
    job_id: str
    capped: bool
    runtime: float  # minutes
    utilization: StatSummary
    temperature: StatSummary
    power: StatSummary

    def __post_init__(self):
        if not (math.isfinite(self.runtime) and self.runtime > 0):
            raise RowError(f"runtime must be > 0 minutes, got {self.runtime!r}", field="runtime_min")
        u = self.utilization
        if u.min < 0 or u.max > 100:
            raise RowError("utilization outside [0, 100]", field="util")
        if self.power.min <= 0:
            raise RowError("power must be > 0 W", field="power_min")

    def value(self, selector: str) -> float:
        """Look up a field by dotted selector, e.g. ``"power.p90"`` or ``"runtime"``."""
        if selector in ("runtime", "runtime_min"):
            return self.runtime
        metric, _, stat = selector.partition(".")
        if metric not in METRICS or not stat:
            raise KeyError(f"unknown field selector {selector!r}")
        out = getattr(self, metric).get(stat)
        if out is None:
            raise KeyError(f"{selector!r} is absent from this record (summary-lite)")
        return out


@dataclass(frozen=True)
class Cohort:
    records: tuple[JobRecord, ...] = field(default_factory=tuple)
    label: str = ""

    def __post_init__(self):
        recs = tuple(self.records)
        seen = set()
        for r in recs:
            if r.job_id in seen:
                raise RowError(f"duplicate job_id {r.job_id!r} in cohort {self.label!r}", field="job_id")
            seen.add(r.job_id)
        object.__setattr__(self, "records", recs)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def values(self, selector: str) -> np.ndarray:
        return np.array([r.value(selector) for r in self.records], dtype=float)


class Aggregate(NamedTuple):
    utilization: StatSummary
    temperature: StatSummary
    power: StatSummary
    runtime: float


def aggregate(series: SampleSeries, interval_ms: float = SAMPLE_INTERVAL_MS) -> Aggregate:
    """Collapse a sample series into per-field summaries and a runtime in minutes."""
    if series is None or len(series) == 0:
        raise EmptySeries("empty series")
    t = series.timestamps
    if t.size > 1 and np.any(np.diff(t) < 0):
        # pooled multi-GPU series may repeat timestamps but never go backwards
        raise MalformedSeries("timestamps decrease")
    span = float(t[-1] - t[0])
    runtime = max(span, interval_ms) / 60_000.0
    return Aggregate(
        StatSummary.from_values(series.utilization),
        StatSummary.from_values(series.temperature),
        StatSummary.from_values(series.power),
        runtime,
    )


class _PooledSeries(SampleSeries):
    """Merged series; equal timestamps from different GPUs are allowed."""

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=float)
        if t.size == 0:
            raise EmptySeries(f"job {self.job_id!r}: no samples")
        if t.size > 1 and np.any(np.diff(t) < 0):
            raise MalformedSeries("pooled timestamps decrease")
        for name in ("timestamps", "utilization", "temperature", "power"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


def merge_gpu_series(series_list: list[SampleSeries]) -> SampleSeries:
    """Pool every GPU's samples of one job into a single timestamp-ordered series.

    Ties on timestamp are broken by ``gpu_index``.
    """
    if not series_list:
        raise EmptySeries("no series to merge")
    job_ids = {s.job_id for s in series_list}
    if len(job_ids) != 1:
        raise MixedJobs(f"series belong to several jobs: {sorted(map(str, job_ids))}")
    if len(series_list) == 1:
        return series_list[0]
    t = np.concatenate([s.timestamps for s in series_list])
    gpu = np.concatenate([np.full(len(s), s.gpu_index) for s in series_list])
    order = np.lexsort((gpu, t))
    cols = {
        c: np.concatenate([getattr(s, c) for s in series_list])[order]
        for c in ("utilization", "temperature", "power")
    }
    return _PooledSeries(
        series_list[0].job_id,
        min(s.gpu_index for s in series_list),
        t[order],
        cols["utilization"],
        cols["temperature"],
        cols["power"],
    )


def job_record_from_series(series_list, capped: bool, interval_ms=SAMPLE_INTERVAL_MS) -> JobRecord:
    pooled = merge_gpu_series(list(series_list))
    agg = aggregate(pooled, interval_ms)
    return JobRecord(pooled.job_id, bool(capped), agg.runtime, agg.utilization, agg.temperature, agg.power)
