"""Reading and writing job-record and raw-sample CSV files.

Job records
    ``job_id, capped, runtime_min`` then, for each of ``util``, ``temp`` and
    ``power``: ``_mean, _sd, _min, _p10, _p25, _p50, _p75, _p90, _max``.
    The *summary-lite* profile omits every ``_p10``/``_p90`` column.

Raw samples
    ``job_id, gpu_index, t_ms, util_pct, temp_c, power_w``.

Files are UTF-8 with LF line endings, a mandatory header and ``.`` as the
decimal separator. Floats are written with 6 significant digits
(``format(x, ".6g")``) except raw timestamps, which are exact; rows are
sorted by ``job_id``.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import (
    DataError,
    EmptyDataset,
    IoError,
    MalformedSeries,
    RowError,
    SchemaError,
)
from .telemetry import (
    SAMPLE_INTERVAL_MS,
    Cohort,
    JobRecord,
    SampleSeries,
    StatSummary,
    job_record_from_series,
)

SCHEMA_FULL = "jobs/1"
SCHEMA_LITE = "jobs-lite/1"
PREFIXES = {"utilization": "util", "temperature": "temp", "power": "power"}
FULL_STATS = ("mean", "sd", "min", "p10", "p25", "p50", "p75", "p90", "max")
LITE_STATS = ("mean", "sd", "min", "p25", "p50", "p75", "max")
TAIL_STATS = ("p10", "p90")
RAW_COLUMNS = ("job_id", "gpu_index", "t_ms", "util_pct", "temp_c", "power_w")
FLOAT_FORMAT = ".6g"


def job_columns(lite: bool = False) -> list[str]:
    stats = LITE_STATS if lite else FULL_STATS
    cols = ["job_id", "capped", "runtime_min"]
    for prefix in PREFIXES.values():
        cols += [f"{prefix}_{s}" for s in stats]
    return cols


JOB_COLUMNS = job_columns()
LITE_COLUMNS = job_columns(lite=True)


@dataclass(frozen=True)
class DatasetManifest:
    record_count: int
    capped_count: int
    schema_version: str = SCHEMA_FULL
    source: str = ""

    def __post_init__(self):
        if not 0 <= self.capped_count <= self.record_count:
            raise ValueError("capped_count must be within [0, record_count]")

    @property
    def is_lite(self) -> bool:
        return self.schema_version == SCHEMA_LITE


def fmt(x: float) -> str:
    return format(float(x), FLOAT_FORMAT)


def fmt_time(t: float) -> str:
    """Timestamps are written losslessly; 6 digits would merge samples of long jobs."""
    t = float(t)
    return str(int(t)) if t.is_integer() else repr(t)


def _parse_float(text, line, column):
    try:
        val = float(text)
    except (TypeError, ValueError):
        raise RowError(f"line {line}: column {column!r}: {text!r} is not a number", row=line, field=column) from None
    if not math.isfinite(val):
        raise RowError(f"line {line}: column {column!r} is not finite", row=line, field=column)
    return val


def _open_reader(path):
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot open {path}: {exc}") from None
    return fh


def _read_header(reader, path):
    try:
        header = next(reader)
    except StopIteration:
        raise EmptyDataset(f"{path} is empty") from None
    return [h.strip() for h in header]


def _detect_profile(header, path) -> bool:
    """Return True for summary-lite, raise SchemaError on anything else."""
    present = set(header)
    missing = [c for c in LITE_COLUMNS if c not in present]
    if missing:
        raise SchemaError(f"{path}: missing required column(s) {missing}")
    tails = [f"{p}_{s}" for p in PREFIXES.values() for s in TAIL_STATS]
    have = [c for c in tails if c in present]
    if have and len(have) != len(tails):
        raise SchemaError(
            f"{path}: partial percentile columns; either all of {tails} or none (summary-lite)"
        )
    unknown = present - set(JOB_COLUMNS)
    if unknown:
        raise SchemaError(f"{path}: unknown column(s) {sorted(unknown)}")
    if len(header) != len(present):
        raise SchemaError(f"{path}: duplicate column names")
    return not have


def _parse_summary(row, prefix, lite, line):
    vals = {}
    for s in LITE_STATS if lite else FULL_STATS:
        vals[s] = _parse_float(row[f"{prefix}_{s}"], line, f"{prefix}_{s}")
    if lite:
        vals["p10"] = vals["p90"] = None
    try:
        return StatSummary(**vals)
    except RowError as exc:
        col = f"{prefix}_{exc.field}" if exc.field else prefix
        raise RowError(f"line {line}: {prefix}: {exc}", row=line, field=col) from None


def _parse_record(row, lite, line) -> JobRecord:
    job_id = row["job_id"].strip()
    if not job_id:
        raise RowError(f"line {line}: empty job_id", row=line, field="job_id")
    capped_txt = row["capped"].strip()
    if capped_txt not in ("0", "1"):
        raise RowError(f"line {line}: capped must be 0 or 1, got {capped_txt!r}", row=line, field="capped")
    runtime = _parse_float(row["runtime_min"], line, "runtime_min")
    if runtime < SAMPLE_INTERVAL_MS / 60_000.0:
        raise RowError(
            f"line {line}: runtime_min={runtime!r} is shorter than one sampling interval",
            row=line, field="runtime_min",
        )
    summaries = {m: _parse_summary(row, p, lite, line) for m, p in PREFIXES.items()}
    u = summaries["utilization"]
    for stat in ("min", "max", "mean"):
        v = getattr(u, stat)
        if not 0.0 <= v <= 100.0:
            raise RowError(
                f"line {line}: util_{stat}={v!r} outside [0, 100]", row=line, field=f"util_{stat}"
            )
    if summaries["power"].min <= 0:
        raise RowError(f"line {line}: power_min must be > 0 W", row=line, field="power_min")
    try:
        return JobRecord(job_id, capped_txt == "1", runtime, **summaries)
    except RowError as exc:
        raise RowError(f"line {line}: {exc}", row=line, field=exc.field) from None


def load_job_records(path) -> tuple[Cohort, Cohort, DatasetManifest]:
    """Load a job-record file, split by the capped flag.

    Every bad row is reported; the first one's line number is on the raised
    :class:`RowError`.
    """
    path = Path(path)
    with _open_reader(path) as fh:
        reader = csv.reader(fh)
        header = _read_header(reader, path)
        lite = _detect_profile(header, path)
        records: list[JobRecord] = []
        errors: list[RowError] = []
        seen: dict[str, int] = {}
        for line, raw in enumerate(reader, start=2):
            if not raw or all(not c.strip() for c in raw):
                errors.append(RowError(f"line {line}: blank row", row=line))
                continue
            if len(raw) != len(header):
                errors.append(RowError(
                    f"line {line}: expected {len(header)} fields, got {len(raw)}", row=line))
                continue
            row = dict(zip(header, raw))
            try:
                rec = _parse_record(row, lite, line)
            except RowError as exc:
                errors.append(exc)
                continue
            if rec.job_id in seen:
                errors.append(RowError(
                    f"line {line}: duplicate job_id {rec.job_id!r} (first on line {seen[rec.job_id]})",
                    row=line, field="job_id"))
                continue
            seen[rec.job_id] = line
            records.append(rec)
    if errors:
        first = errors[0]
        msg = "\n".join(str(e) for e in errors[:20])
        if len(errors) > 20:
            msg += f"\n... {len(errors) - 20} more"
        raise RowError(f"{path}: {len(errors)} invalid row(s):\n{msg}", row=first.row, field=first.field)
    if not records:
        raise EmptyDataset(f"{path} has a header but no records")
    capped = Cohort(tuple(r for r in records if r.capped), label="capped")
    uncapped = Cohort(tuple(r for r in records if not r.capped), label="uncapped")
    manifest = DatasetManifest(len(records), len(capped), SCHEMA_LITE if lite else SCHEMA_FULL, str(path))
    return capped, uncapped, manifest


def _flatten(cohorts) -> list[JobRecord]:
    if isinstance(cohorts, (Cohort, JobRecord)):
        cohorts = [cohorts]
    out = []
    for c in cohorts:
        if isinstance(c, JobRecord):
            out.append(c)
        else:
            out.extend(c)
    return out


def _record_row(rec: JobRecord, lite: bool) -> list[str]:
    stats = LITE_STATS if lite else FULL_STATS
    row = [rec.job_id, "1" if rec.capped else "0", fmt(rec.runtime)]
    for metric in PREFIXES:
        summary = getattr(rec, metric)
        for s in stats:
            v = summary.get(s)
            if v is None:
                raise DataError(f"job {rec.job_id!r}: {metric}.{s} missing; cannot write the full schema")
            row.append(fmt(v))
    return row


def write_job_records(cohorts, path, lite: bool | None = None) -> DatasetManifest:
    """Write records sorted by job_id; the profile defaults to full unless a record lacks p10/p90."""
    records = sorted(_flatten(cohorts), key=lambda r: r.job_id)
    ids = [r.job_id for r in records]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate job_id across cohorts")
    if lite is None:
        lite = any(not getattr(r, m).has_tails for r in records for m in PREFIXES)
    path = Path(path)
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(LITE_COLUMNS if lite else JOB_COLUMNS)
            for rec in records:
                writer.writerow(_record_row(rec, lite))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from None
    return DatasetManifest(len(records), sum(r.capped for r in records),
                           SCHEMA_LITE if lite else SCHEMA_FULL, str(path))


def load_sample_series(path) -> list[SampleSeries]:
    """Load raw samples, one series per (job_id, gpu_index), sorted by that key.

    Within a key, rows must already be in strictly increasing ``t_ms`` order.
    """
    path = Path(path)
    cols: dict[tuple[str, int], list[list[float]]] = defaultdict(list)
    with _open_reader(path) as fh:
        reader = csv.reader(fh)
        header = _read_header(reader, path)
        missing = [c for c in RAW_COLUMNS if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing required column(s) {missing}")
        extra = set(header) - set(RAW_COLUMNS)
        if extra:
            raise SchemaError(f"{path}: unknown column(s) {sorted(extra)}")
        last_t: dict[tuple[str, int], tuple[float, int]] = {}
        for line, raw in enumerate(reader, start=2):
            if len(raw) != len(header):
                raise RowError(f"line {line}: expected {len(header)} fields, got {len(raw)}", row=line)
            row = dict(zip(header, raw))
            job = row["job_id"].strip()
            if not job:
                raise RowError(f"line {line}: empty job_id", row=line, field="job_id")
            gpu_txt = row["gpu_index"].strip()
            if not gpu_txt.isdigit():
                raise RowError(f"line {line}: gpu_index must be a non-negative integer", row=line, field="gpu_index")
            key = (job, int(gpu_txt))
            t = _parse_float(row["t_ms"], line, "t_ms")
            util = _parse_float(row["util_pct"], line, "util_pct")
            temp = _parse_float(row["temp_c"], line, "temp_c")
            power = _parse_float(row["power_w"], line, "power_w")
            if not 0.0 <= util <= 100.0:
                raise RowError(f"line {line}: util_pct={util!r} outside [0, 100]", row=line, field="util_pct")
            if power <= 0:
                raise RowError(f"line {line}: power_w must be > 0", row=line, field="power_w")
            if key in last_t and t <= last_t[key][0]:
                prev_t, prev_line = last_t[key]
                kind = "duplicate" if t == prev_t else "decreasing"
                raise MalformedSeries(
                    f"line {line}: {kind} timestamp {t!r} for job {job!r} gpu {key[1]} (previous on line {prev_line})"
                )
            last_t[key] = (t, line)
            cols[key].append([t, util, temp, power])
    if not cols:
        raise EmptyDataset(f"{path} has no samples")
    out = []
    for key in sorted(cols):
        arr = np.array(cols[key], dtype=float)
        out.append(SampleSeries(key[0], key[1], arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3]))
    return out


def write_sample_series(series: Iterable[SampleSeries], path) -> int:
    """Write raw samples ordered by (job_id, gpu_index, t_ms); returns the row count."""
    rows = 0
    path = Path(path)
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(RAW_COLUMNS)
            for s in sorted(series, key=lambda s: (s.job_id, s.gpu_index)):
                for t, u, c, p in zip(s.timestamps.tolist(), s.utilization.tolist(),
                                      s.temperature.tolist(), s.power.tolist()):
                    writer.writerow([s.job_id, s.gpu_index, fmt_time(t), fmt(u), fmt(c), fmt(p)])
                    rows += 1
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from None
    return rows


def job_records_from_series(series: Iterable[SampleSeries], capped_jobs) -> list[JobRecord]:
    """Aggregate raw series (pooling GPUs per job) into job records.

    Jobs whose sampled span is shorter than one polling interval are rejected.
    """
    capped_jobs = set(capped_jobs)
    by_job: dict[str, list[SampleSeries]] = defaultdict(list)
    for s in series:
        by_job[s.job_id].append(s)
    out = []
    for job_id in sorted(by_job):
        group = by_job[job_id]
        span = max(s.timestamps[-1] for s in group) - min(s.timestamps[0] for s in group)
        if span < SAMPLE_INTERVAL_MS:
            raise RowError(f"job {job_id!r} spans less than one sampling interval", field="t_ms")
        out.append(job_record_from_series(group, job_id in capped_jobs))
    return out
