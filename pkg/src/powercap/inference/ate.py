"""Average treatment effect estimators.

``OLSEffect`` regresses the outcome on an intercept and the treatment flag.
``MatchingEffect`` imputes each record's missing potential outcome from its
nearest neighbour in the other treatment arm and averages the signed
differences; with ``bias_adjust=True`` every imputed outcome is corrected by
a within-arm linear outcome model evaluated at the two covariate vectors.

Both follow the scikit-learn estimator protocol, ``fit(X, treatment, y)``,
and expose the result as ``estimate_`` (an :class:`AteEstimate`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..errors import (
    ConfigError,
    ConstantCovariate,
    DegenerateRegression,
    InsufficientData,
    SingularOutcomeModel,
)
from ..telemetry import Cohort
from .distributions import Z_975, normal_sf
from .features import (
    DEFAULT_COVARIATES,
    check_treatment_outcome,
    metric_of,
    pool,
    records_to_arrays,
    validate_selector,
)

METHODS = ("ols", "matching", "matching_bias_adjusted")


@dataclass(frozen=True)
class AteEstimate:
    estimate: float
    std_error: float | None
    p_value: float | None
    ci95: tuple[float, float] | None
    method: str
    n_treated: int
    n_control: int
    se_type: str | None = None
    covariates: tuple[str, ...] = ()
    outcome: str | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.n_treated < 2 or self.n_control < 2:
            raise InsufficientData("an ATE needs at least 2 treated and 2 control records")
        if self.ci95 is not None:
            lo, hi = self.ci95
            if not lo <= self.estimate <= hi:
                raise ValueError(f"estimate {self.estimate} outside its interval {self.ci95}")


def _normal_inference(estimate, se):
    if se == 0.0:
        p = 0.0 if estimate != 0.0 else 1.0
    else:
        p = min(1.0, 2.0 * normal_sf(abs(estimate) / se))
    half = Z_975 * se
    return p, (estimate - half, estimate + half)


class OLSEffect(BaseEstimator):
    """ATE as the treatment coefficient of ``y ~ 1 + T``.

    Parameters
    ----------
    se_type : {"HC1", "classical"}
        Heteroskedasticity-robust (HC1) or homoskedastic standard errors.
    """

    def __init__(self, se_type: str = "HC1"):
        self.se_type = se_type

    def fit(self, X, treatment, y):
        if self.se_type not in ("HC1", "classical"):
            raise ConfigError(f"se_type must be 'HC1' or 'classical', got {self.se_type!r}")
        _, t, y = check_treatment_outcome(treatment, y)
        n = y.size
        if np.all(y == y[0]):
            raise DegenerateRegression("outcome has zero variance")
        design = np.column_stack([np.ones(n), t.astype(float)])
        # centring the response only moves the intercept and keeps lstsq well conditioned
        shift = y.mean()
        beta, *_ = np.linalg.lstsq(design, y - shift, rcond=None)
        resid = (y - shift) - design @ beta
        xtx_inv = np.linalg.inv(design.T @ design)
        k = design.shape[1]
        if self.se_type == "HC1":
            meat = (design * resid[:, None] ** 2).T @ design
            cov = n / (n - k) * xtx_inv @ meat @ xtx_inv
        else:
            cov = float(resid @ resid) / (n - k) * xtx_inv
        self.coef_ = np.array([beta[0] + shift, beta[1]])
        self.cov_ = cov
        est = float(beta[1])
        se = math.sqrt(max(float(cov[1, 1]), 0.0))
        p, ci = _normal_inference(est, se)
        self.estimate_ = AteEstimate(
            estimate=est, std_error=se, p_value=p, ci95=ci, method="ols",
            n_treated=int(t.sum()), n_control=int(n - t.sum()), se_type=self.se_type,
        )
        return self

    @property
    def ate_(self) -> float:
        check_is_fitted(self, "estimate_")
        return self.estimate_.estimate


def nearest_opposite(Z: np.ndarray, t: np.ndarray, k: int = 1, chunk: int = 512) -> np.ndarray:
    """Indices of the ``k`` nearest opposite-arm rows for every row of ``Z``.

    Squared Euclidean distances are accumulated column by column in a fixed
    order; ties go to the lowest row index.
    """
    n = Z.shape[0]
    out = np.empty((n, k), dtype=np.intp)
    for arm in (0, 1):
        src = np.flatnonzero(t == arm)
        dst = np.flatnonzero(t != arm)
        if dst.size < k:
            raise InsufficientData(f"arm {1 - arm} has fewer than k={k} records")
        Zd = Z[dst]
        for start in range(0, src.size, chunk):
            rows = src[start:start + chunk]
            d2 = np.zeros((rows.size, dst.size))
            for j in range(Z.shape[1]):
                diff = Z[rows, j][:, None] - Zd[:, j][None, :]
                d2 += diff * diff
            if k == 1:
                nearest = np.argmin(d2, axis=1)[:, None]
            else:
                nearest = np.argsort(d2, axis=1, kind="stable")[:, :k]
            out[rows] = dst[nearest]
    return out


def _outcome_slopes(Z, y, mask, names):
    """Least-squares slopes of y on Z within one arm (intercept dropped)."""
    Zm, ym = Z[mask], y[mask]
    p = Z.shape[1]
    if ym.size and np.all(ym == ym[0]):
        # a flat outcome has flat slopes whatever the design's rank
        return np.zeros(p)
    if Zm.shape[0] < p + 1:
        raise SingularOutcomeModel(
            f"outcome model needs at least {p + 1} records per arm, got {Zm.shape[0]}"
        )
    design = np.column_stack([np.ones(Zm.shape[0]), Zm])
    if np.linalg.matrix_rank(design) < p + 1:
        raise SingularOutcomeModel(f"outcome model design is rank-deficient for covariates {list(names)}")
    coef, *_ = np.linalg.lstsq(design, ym - ym.mean(), rcond=None)
    return coef[1:]


class MatchingEffect(BaseEstimator):
    """Nearest-neighbour matching ATE, optionally bias-adjusted.

    Parameters
    ----------
    n_neighbors : int
        Matches per record; the imputed outcome averages them.
    standardize : bool
        z-score covariates with pooled mean and sample sd before matching.
    bias_adjust : bool
        Apply the within-arm linear regression correction.
    n_bootstrap : int or None
        Bootstrap replicates for a standard error and interval; ``None`` skips it.
    random_state : int
        Seed for the bootstrap substreams.
    covariate_names : sequence of str, optional
        Used only in error messages and reports.
    """

    def __init__(
        self,
        n_neighbors: int = 1,
        standardize: bool = True,
        bias_adjust: bool = False,
        n_bootstrap: int | None = None,
        random_state: int = 0,
        covariate_names: Sequence[str] | None = None,
    ):
        self.n_neighbors = n_neighbors
        self.standardize = standardize
        self.bias_adjust = bias_adjust
        self.n_bootstrap = n_bootstrap
        self.random_state = random_state
        self.covariate_names = covariate_names

    def _names(self, p):
        if self.covariate_names is not None:
            return tuple(self.covariate_names)
        return tuple(f"x{j}" for j in range(p))

    def _scaled(self, X, names):
        if not self.standardize:
            return X
        mu = X.mean(axis=0)
        sd = X.std(axis=0, ddof=1)
        for j, s in enumerate(sd):
            if not s > 0:
                raise ConstantCovariate(names[j])
        return (X - mu) / sd

    def _point(self, X, t, y, names):
        Z = self._scaled(X, names)
        idx = nearest_opposite(Z, t, self.n_neighbors)
        counterfactual = y[idx].mean(axis=1) if self.n_neighbors > 1 else y[idx[:, 0]]
        if self.bias_adjust:
            slopes = {arm: _outcome_slopes(Z, y, t == arm, names) for arm in (0, 1)}
            for arm in (0, 1):
                rows = np.flatnonzero(t != arm)  # records imputed from arm `arm`
                shift = (Z[rows][:, None, :] - Z[idx[rows]]) @ slopes[arm]
                counterfactual[rows] = counterfactual[rows] + shift.mean(axis=1)
        signed = (2 * t - 1) * (y - counterfactual)
        return math.fsum(signed.tolist()) / y.size, idx

    def fit(self, X, treatment, y):
        if int(self.n_neighbors) < 1:
            raise ConfigError("n_neighbors must be >= 1")
        X, t, y = check_treatment_outcome(treatment, y, X)
        if X.shape[1] == 0:
            raise ConfigError("matching needs at least one covariate")
        names = self._names(X.shape[1])
        est, idx = self._point(X, t, y, names)
        self.matches_ = idx
        method = "matching_bias_adjusted" if self.bias_adjust else "matching"
        se = p = ci = None
        if self.n_bootstrap:
            reps = self._bootstrap(X, t, y, names)
            self.bootstrap_estimates_ = reps
            se = float(np.std(reps, ddof=1))
            p, ci = _normal_inference(est, se)
        self.estimate_ = AteEstimate(
            estimate=est, std_error=se, p_value=p, ci95=ci, method=method,
            n_treated=int(t.sum()), n_control=int(t.size - t.sum()),
            se_type="bootstrap" if se is not None else None, covariates=names,
        )
        return self

    def _bootstrap(self, X, t, y, names):
        """Stratified resampling: each arm is resampled with replacement at its own size."""
        B = int(self.n_bootstrap)
        if B < 2:
            raise ConfigError("n_bootstrap must be >= 2")
        arms = [np.flatnonzero(t == a) for a in (0, 1)]
        streams = np.random.SeedSequence(self.random_state).spawn(B)
        out = np.empty(B)
        for b, ss in enumerate(streams):
            rng = np.random.default_rng(ss)
            pick = np.concatenate([rng.choice(a, size=a.size, replace=True) for a in arms])
            pick.sort()
            try:
                out[b], _ = self._point(X[pick], t[pick], y[pick], names)
            except (ConstantCovariate, SingularOutcomeModel):
                out[b] = np.nan
        out = out[np.isfinite(out)]
        if out.size < 2:
            raise InsufficientData("too few usable bootstrap replicates")
        return out

    @property
    def ate_(self) -> float:
        check_is_fitted(self, "estimate_")
        return self.estimate_.estimate


# --- record-level API ------------------------------------------------------


@dataclass(frozen=True)
class MatchingSpec:
    covariates: tuple[str, ...] = DEFAULT_COVARIATES
    k: int = 1
    distance: str = "euclidean"
    standardize: bool = True
    with_replacement: bool = True
    bias_adjust: bool = False
    n_bootstrap: int | None = None
    seed: int = 0

    def __post_init__(self):
        covs = tuple(validate_selector(c) for c in self.covariates)
        if not covs:
            raise ConfigError("matching needs at least one covariate")
        object.__setattr__(self, "covariates", covs)
        if self.distance != "euclidean":
            raise ConfigError(f"unsupported distance {self.distance!r}")
        if not self.with_replacement:
            raise ConfigError("only matching with replacement is supported")
        if self.k < 1:
            raise ConfigError("k must be >= 1")

    def check_outcome(self, outcome: str):
        clash = [c for c in self.covariates if c != "runtime" and metric_of(c) == metric_of(outcome)]
        if metric_of(outcome) == "runtime" and "runtime" in self.covariates:
            clash.append("runtime")
        if clash:
            raise ConfigError(f"covariates {clash} describe the outcome {outcome!r}")


def _sorted_records(records):
    return sorted(pool(records), key=lambda r: r.job_id)


def ols_ate(records, outcome: str = "power.mean", se_type: str = "HC1") -> AteEstimate:
    """OLS ATE of the capped flag on ``outcome`` over the pooled records."""
    recs = pool(records)
    _, t, y = records_to_arrays(recs, outcome)
    est = OLSEffect(se_type=se_type).fit(None, t, y).estimate_
    return _with(est, outcome=outcome)


def matching_ate(records, outcome: str = "power.mean", spec: MatchingSpec | None = None) -> AteEstimate:
    """Nearest-neighbour matching ATE; records are ordered by job_id first."""
    spec = spec or MatchingSpec()
    spec.check_outcome(outcome)
    recs = _sorted_records(records)
    X, t, y = records_to_arrays(recs, outcome, spec.covariates)
    model = MatchingEffect(
        n_neighbors=spec.k, standardize=spec.standardize, bias_adjust=spec.bias_adjust,
        n_bootstrap=spec.n_bootstrap, random_state=spec.seed, covariate_names=spec.covariates,
    )
    return _with(model.fit(X, t, y).estimate_, outcome=outcome)


def bias_adjusted_matching_ate(records, outcome: str = "power.mean", spec: MatchingSpec | None = None) -> AteEstimate:
    spec = spec or MatchingSpec()
    if not spec.bias_adjust:
        spec = MatchingSpec(**{**spec.__dict__, "bias_adjust": True})
    return matching_ate(records, outcome, spec)


def naive_difference(records, outcome: str = "power.mean") -> float:
    _, t, y = records_to_arrays(records, outcome)
    return float(y[t == 1].mean() - y[t == 0].mean())


def filter_efficient(records, threshold: float = 70.0) -> Cohort:
    """Records whose mean GPU utilization is strictly above ``threshold`` percent."""
    recs = pool(records)
    return Cohort(tuple(r for r in recs if r.utilization.mean > threshold), label=f"util>{threshold:g}")


def _with(est: AteEstimate, **changes) -> AteEstimate:
    return AteEstimate(**{**est.__dict__, **changes})
