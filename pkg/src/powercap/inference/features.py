"""Field selection from job records and estimator input validation."""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_consistent_length

from ..errors import InsufficientData
from ..telemetry import METRICS, STAT_FIELDS, Cohort, JobRecord

DEFAULT_COVARIATES = ("runtime", "utilization.mean", "utilization.p50")


def validate_selector(selector: str) -> str:
    if selector in ("runtime", "runtime_min"):
        return "runtime"
    metric, _, stat = selector.partition(".")
    if metric not in METRICS or stat not in STAT_FIELDS:
        raise ValueError(
            f"unknown field {selector!r}; use 'runtime' or <metric>.<stat> with metric in "
            f"{METRICS} and stat in {STAT_FIELDS}"
        )
    return selector


def metric_of(selector: str) -> str:
    return validate_selector(selector).partition(".")[0]


def pool(*groups: Iterable[JobRecord]) -> list[JobRecord]:
    """Concatenate cohorts, record lists, or lists of cohorts into one list."""
    out: list[JobRecord] = []
    for g in groups:
        for item in (g.records if isinstance(g, Cohort) else g):
            if isinstance(item, Cohort):
                out.extend(item.records)
            else:
                out.append(item)
    return out


class JobFeatures(TransformerMixin, BaseEstimator):
    """Project job records onto a numeric feature matrix.

    Parameters
    ----------
    fields : sequence of str
        Dotted selectors such as ``"utilization.mean"`` or ``"runtime"``.
    """

    def __init__(self, fields: Sequence[str] = DEFAULT_COVARIATES):
        self.fields = fields

    def fit(self, records=None, y=None):
        self.fields_ = tuple(validate_selector(f) for f in self.fields)
        self.n_features_in_ = len(self.fields_)
        return self

    def transform(self, records) -> np.ndarray:
        fields = getattr(self, "fields_", None) or tuple(validate_selector(f) for f in self.fields)
        recs = pool(records)
        out = np.empty((len(recs), len(fields)), dtype=float)
        for i, r in enumerate(recs):
            for j, f in enumerate(fields):
                out[i, j] = r.value(f)
        return out

    def get_feature_names_out(self, input_features=None):
        return np.asarray(self.fields_, dtype=object)


def records_to_arrays(records, outcome: str, covariates: Sequence[str] = ()):
    """Return ``(X, treatment, y)`` for a list of records."""
    recs = pool(records)
    validate_selector(outcome)
    y = np.array([r.value(outcome) for r in recs], dtype=float)
    t = np.array([r.capped for r in recs], dtype=int)
    X = JobFeatures(covariates).fit().transform(recs) if covariates else np.empty((len(recs), 0))
    return X, t, y


def check_treatment_outcome(treatment, y, X=None, min_per_group=2):
    """Validate a binary treatment vector against outcomes (and covariates)."""
    if np.asarray(y).size == 0:
        raise InsufficientData("no records to compare")
    y = check_array(np.asarray(y, dtype=float).reshape(-1, 1), ensure_min_samples=1).ravel()
    t = np.asarray(treatment).ravel()
    if X is not None:
        X = check_array(X, ensure_min_features=0, ensure_min_samples=1)
        check_consistent_length(X, t, y)
    else:
        check_consistent_length(t, y)
    if not np.all(np.isin(t, (0, 1))):
        raise ValueError("treatment must be binary 0/1")
    t = t.astype(int)
    n1 = int(t.sum())
    n0 = int(t.size - n1)
    if n1 < min_per_group or n0 < min_per_group:
        raise InsufficientData(
            f"need at least {min_per_group} treated and {min_per_group} control records, "
            f"got {n1} and {n0}"
        )
    return X, t, y
