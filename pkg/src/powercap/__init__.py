"""Power-capping analysis for GPU job telemetry."""

__version__ = "0.1.0"

from .errors import PowerCapError  # noqa: E402
from .telemetry import (  # noqa: E402
    Cohort,
    JobRecord,
    Sample,
    SampleSeries,
    StatSummary,
    aggregate,
    merge_gpu_series,
)

__all__ = [
    "Cohort",
    "JobRecord",
    "PowerCapError",
    "Sample",
    "SampleSeries",
    "StatSummary",
    "aggregate",
    "merge_gpu_series",
]
