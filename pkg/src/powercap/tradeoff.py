"""Energy/performance verdicts for power-cap levels.

A cap is *optimal* when it saves at least 10 % energy while costing strictly
less than 10 % speed, both relative to the uncapped run of the same workload.
Savings and impacts are rounded to 12 decimals before comparison so that,
e.g., ``relative_energy = 0.9`` counts as exactly 10 % saved.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path

from .errors import DataError, EmptyRuns, IoError, MalformedRun, MissingBaseline, SchemaError

MIN_ENERGY_SAVING = 0.10
MAX_PERF_IMPACT = 0.10
RATIO_CEILING = 1.5
_DECIMALS = 12
CONTEXTS = ("training", "inference")
POINT_COLUMNS = ("workload", "context", "cap_w", "output_length", "relative_speed", "relative_energy")
RUN_COLUMNS = ("workload", "context", "cap_w", "output_length", "runtime_s", "energy_j")
BUNDLED = {
    "llama-inference": "llama65b_inference.csv",
    "training-midpoints": "training_midpoints.csv",
}


@dataclass(frozen=True)
class TradeoffPoint:
    cap: float | None  # Watts; None is the uncapped reference
    relative_speed: float
    relative_energy: float
    workload: str = ""
    context: str = "training"
    output_length: int | None = None

    def __post_init__(self):
        for name in ("relative_speed", "relative_energy"):
            v = getattr(self, name)
            if not (math.isfinite(v) and 0 < v <= RATIO_CEILING):
                raise MalformedRun(f"{name}={v!r} outside (0, {RATIO_CEILING}]")
        if self.context not in CONTEXTS:
            raise MalformedRun(f"context must be one of {CONTEXTS}, got {self.context!r}")
        if self.cap is not None and not (math.isfinite(self.cap) and self.cap > 0):
            raise MalformedRun(f"cap must be a positive wattage, got {self.cap!r}")
        if self.cap is None and (self.relative_speed != 1.0 or self.relative_energy != 1.0):
            raise MalformedRun("the uncapped reference must have relative speed and energy 1.0")

    @property
    def is_baseline(self) -> bool:
        return self.cap is None

    @property
    def cap_label(self) -> str:
        return "uncapped" if self.cap is None else f"{self.cap:g}W"


@dataclass(frozen=True)
class CapVerdict:
    point: TradeoffPoint
    energy_saving: float
    perf_impact: float
    optimal: bool

    def to_dict(self) -> dict:
        d = asdict(self)
        d["point"] = asdict(self.point)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "CapVerdict":
        return cls(TradeoffPoint(**data["point"]), data["energy_saving"], data["perf_impact"], data["optimal"])


def classify(point: TradeoffPoint) -> CapVerdict:
    saving = round(1.0 - point.relative_energy, _DECIMALS)
    impact = round(1.0 - point.relative_speed, _DECIMALS)
    optimal = saving >= MIN_ENERGY_SAVING and impact < MAX_PERF_IMPACT
    return CapVerdict(point, saving, impact, optimal)


@dataclass(frozen=True)
class SweepReport:
    workload: str
    verdicts: tuple[CapVerdict, ...]
    ranked_optimal: tuple[CapVerdict, ...]


def sweep(points) -> SweepReport:
    """Classify every point and rank the optimal ones.

    Ranking is by energy saving (descending), then cap (descending); the
    sort is stable so identical points keep their input order.
    """
    points = list(points)
    if not points:
        raise MissingBaseline("no tradeoff points given")
    workloads = {p.workload for p in points}
    if len(workloads) != 1:
        raise DataError(f"sweep expects one workload, got {sorted(workloads)}")
    if not any(p.is_baseline for p in points):
        raise MissingBaseline(f"workload {points[0].workload!r} has no uncapped reference point")
    verdicts = tuple(classify(p) for p in points)
    ranked = sorted(
        (v for v in verdicts if v.optimal),
        key=lambda v: (-v.energy_saving, -(v.point.cap or 0.0)),
    )
    return SweepReport(points[0].workload, verdicts, tuple(ranked))


def _check_runs(runs, side):
    runs = list(runs)
    if not runs:
        raise EmptyRuns(f"no {side} runs")
    for rt, en in runs:
        if not (math.isfinite(rt) and math.isfinite(en) and rt > 0 and en > 0):
            raise MalformedRun(f"{side} run has non-positive runtime or energy: ({rt!r}, {en!r})")
    return runs


def estimate_relative(capped_runs, uncapped_runs, cap: float | None = None, workload: str = "",
                      context: str = "training", output_length: int | None = None) -> TradeoffPoint:
    """Relative speed and energy from repeated ``(runtime, energy)`` runs.

    Runs are averaged before taking ratios (ratio of means).
    """
    capped = _check_runs(capped_runs, "capped")
    base = _check_runs(uncapped_runs, "uncapped")
    mean_rt_c = math.fsum(r for r, _ in capped) / len(capped)
    mean_en_c = math.fsum(e for _, e in capped) / len(capped)
    mean_rt_u = math.fsum(r for r, _ in base) / len(base)
    mean_en_u = math.fsum(e for _, e in base) / len(base)
    speed = mean_rt_u / mean_rt_c
    energy = mean_en_c / mean_en_u
    if cap is None:
        if not (math.isclose(speed, 1.0, rel_tol=1e-12) and math.isclose(energy, 1.0, rel_tol=1e-12)):
            raise MalformedRun("an uncapped point must compare uncapped runs with themselves")
        speed = energy = 1.0
    return TradeoffPoint(cap, speed, energy, workload, context, output_length)


# --- files -----------------------------------------------------------------


def _read_rows(path, required, optional=("output_length",)):
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot open {path}: {exc}") from None
    with fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header and c not in optional]
        if missing:
            raise SchemaError(f"{path}: missing required column(s) {missing}")
        extra = [c for c in header if c not in required and c != "note"]
        if extra:
            raise SchemaError(f"{path}: unknown column(s) {extra}")
        return list(enumerate(reader, start=2))


def _parse_common(row, line):
    cap_txt = (row.get("cap_w") or "").strip()
    ol_txt = (row.get("output_length") or "").strip()
    try:
        cap = float(cap_txt) if cap_txt else None
        output_length = int(ol_txt) if ol_txt else None
    except ValueError:
        raise MalformedRun(f"line {line}: bad cap_w or output_length") from None
    return row["workload"].strip(), row["context"].strip(), cap, output_length


def load_points(path) -> list[TradeoffPoint]:
    out = []
    for line, row in _read_rows(path, POINT_COLUMNS):
        workload, context, cap, ol = _parse_common(row, line)
        try:
            speed = float(row["relative_speed"])
            energy = float(row["relative_energy"])
            out.append(TradeoffPoint(cap, speed, energy, workload, context, ol))
        except (ValueError, MalformedRun) as exc:
            raise MalformedRun(f"{path} line {line}: {exc}") from None
    if not out:
        raise EmptyRuns(f"{path} has no points")
    return out


def load_runs(path) -> list[TradeoffPoint]:
    """Turn a raw-runs file into points, pairing each cap with the uncapped runs
    of the same (workload, context, output_length)."""
    groups: dict[tuple, list[tuple[float, float]]] = defaultdict(list)
    for line, row in _read_rows(path, RUN_COLUMNS):
        workload, context, cap, ol = _parse_common(row, line)
        try:
            groups[(workload, context, ol, cap)].append((float(row["runtime_s"]), float(row["energy_j"])))
        except ValueError:
            raise MalformedRun(f"{path} line {line}: runtime_s and energy_j must be numbers") from None
    if not groups:
        raise EmptyRuns(f"{path} has no runs")
    points = []
    for (workload, context, ol, cap), runs in groups.items():
        base = groups.get((workload, context, ol, None))
        if base is None:
            raise MissingBaseline(
                f"no uncapped runs for workload {workload!r} ({context}, output_length={ol})"
            )
        points.append(estimate_relative(runs, base, cap, workload, context, ol))
    return points


def load_tradeoff_file(path) -> list[TradeoffPoint]:
    """Dispatch on the header: relative points or raw runs."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            header = next(csv.reader(fh), [])
    except OSError as exc:
        raise IoError(f"cannot open {path}: {exc}") from None
    if "runtime_s" in header:
        return load_runs(path)
    return load_points(path)


def bundled_path(name: str) -> Path:
    if name not in BUNDLED:
        raise KeyError(f"unknown bundled dataset {name!r}; choose from {sorted(BUNDLED)}")
    return Path(str(resources.files("powercap") / "data" / BUNDLED[name]))


def group_points(points) -> dict[tuple[str, str], list[TradeoffPoint]]:
    """Points keyed by (workload, context), in first-seen order."""
    out: dict[tuple[str, str], list[TradeoffPoint]] = {}
    for p in points:
        out.setdefault((p.workload, p.context), []).append(p)
    return out
