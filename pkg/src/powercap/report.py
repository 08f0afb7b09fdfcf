"""Distribution summaries for capped vs. uncapped cohorts (plot-ready bins)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import SchemaError, SpecError
from .inference.features import validate_selector
from .telemetry import Cohort

DEFAULT_BINS = 50
SCALES = ("linear", "log_count")
HIST_COLUMNS = ("field", "cohort", "bin_left", "bin_right", "count")


@dataclass(frozen=True)
class HistogramSpec:
    """Bins for one field.

    Values below the first edge fall in the first bin and values above the
    last edge in the last one, so counts always add up to the cohort size.
    """

    field: str
    bin_edges: tuple[float, ...]
    scale: str = "linear"

    def __post_init__(self):
        try:
            validate_selector(self.field)
        except ValueError as exc:
            raise SpecError(str(exc)) from None
        edges = tuple(float(e) for e in self.bin_edges)
        if len(edges) < 2:
            raise SpecError("a histogram needs at least 2 bin edges")
        if not all(math.isfinite(e) for e in edges):
            raise SpecError("bin edges must be finite")
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise SpecError("bin edges must be strictly increasing")
        if self.scale not in SCALES:
            raise SpecError(f"scale must be one of {SCALES}")
        object.__setattr__(self, "bin_edges", edges)

    @classmethod
    def uniform(cls, field: str, lo: float, hi: float, n_bins: int = DEFAULT_BINS, scale="linear"):
        if n_bins < 1:
            raise SpecError("n_bins must be >= 1")
        if not hi > lo:
            raise SpecError("upper bound must exceed lower bound")
        return cls(field, tuple(np.linspace(lo, hi, n_bins + 1).tolist()), scale)

    @classmethod
    def shared(cls, field: str, cohorts: Mapping[str, Cohort], n_bins: int = DEFAULT_BINS, scale="linear"):
        """Equal-width bins over the pooled range of every cohort."""
        values = np.concatenate([c.values(field) for c in cohorts.values()] or [np.array([])])
        if values.size == 0:
            raise SpecError("cannot derive bins from empty cohorts")
        lo, hi = float(values.min()), float(values.max())
        if lo == hi:
            lo, hi = lo - 0.5, hi + 0.5
        return cls.uniform(field, lo, hi, n_bins, scale)


@dataclass(frozen=True)
class Histogram:
    spec: HistogramSpec
    counts: dict[str, np.ndarray]

    def rows(self):
        e = self.spec.bin_edges
        for label, c in self.counts.items():
            for i, n in enumerate(c.tolist()):
                yield {"field": self.spec.field, "cohort": label, "bin_left": e[i], "bin_right": e[i + 1], "count": n}

    def mean(self, label: str) -> float:
        """Bin-centre estimate of the mean for one cohort."""
        e = np.asarray(self.spec.bin_edges)
        centres = (e[:-1] + e[1:]) / 2
        c = self.counts[label]
        return float((centres * c).sum() / c.sum())


def _as_mapping(cohorts) -> dict[str, Cohort]:
    if isinstance(cohorts, Cohort):
        return {cohorts.label or "all": cohorts}
    if isinstance(cohorts, Mapping):
        return dict(cohorts)
    out = {}
    for i, c in enumerate(cohorts):
        out[c.label or f"cohort{i}"] = c
    return out


def bin_counts(values, edges) -> np.ndarray:
    edges = np.asarray(edges, dtype=float)
    idx = np.searchsorted(edges[1:-1], np.asarray(values, dtype=float), side="right")
    return np.bincount(idx, minlength=edges.size - 1).astype(np.int64)


def histogram(cohorts, spec: HistogramSpec | None = None, field: str | None = None) -> Histogram:
    """Per-cohort bin counts on shared edges."""
    cohorts = _as_mapping(cohorts)
    if spec is None:
        if field is None:
            raise SpecError("give a HistogramSpec or a field")
        spec = HistogramSpec.shared(field, cohorts)
    counts = {label: bin_counts(c.values(spec.field), spec.bin_edges) for label, c in cohorts.items()}
    return Histogram(spec, counts)


@dataclass(frozen=True)
class SpreadSummary:
    metric: str
    mean_sd: dict[str, float]
    histogram: Histogram

    def ratio(self, numerator="capped", denominator="uncapped") -> float:
        return self.mean_sd[numerator] / self.mean_sd[denominator]


def spread_summary(cohorts, n_bins: int = DEFAULT_BINS) -> dict[str, SpreadSummary]:
    """Distribution of within-job sd of temperature and power, per cohort."""
    cohorts = _as_mapping(cohorts)
    out = {}
    for metric in ("temperature", "power"):
        selector = f"{metric}.sd"
        for label, c in cohorts.items():
            if any(getattr(r, metric).sd is None for r in c):
                raise SchemaError(f"cohort {label!r}: records lack {selector}")
        means = {label: float(c.values(selector).mean()) if len(c) else math.nan for label, c in cohorts.items()}
        non_empty = {k: v for k, v in cohorts.items() if len(v)}
        spec = HistogramSpec.shared(selector, non_empty, n_bins)
        out[metric] = SpreadSummary(metric, means, histogram(cohorts, spec))
    return out
