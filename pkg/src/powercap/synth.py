"""Synthetic job cohorts with known treatment effects.

The default configuration is calibrated so that job-level means land near
the production summary (runtime ~595 min, utilization ~32 %, temperature
~40 C, power ~70 W) with a long right tail on runtime and power.

Randomness
----------
All draws come from numpy's PCG64. Jobs are generated in blocks of
``BLOCK_SIZE``; block ``b`` uses ``SeedSequence(seed, spawn_key=(b,))`` and
draws its columns in a fixed order, so any block can be produced
independently of the others. Raw sample series for a job use
``SeedSequence(seed, spawn_key=(RAW_STREAM, crc32(job_id), gpu_index))``.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy import special, stats

from .errors import ConfigError
from .telemetry import (
    PERCENTILES,
    SAMPLE_INTERVAL_MS,
    Cohort,
    JobRecord,
    SampleSeries,
    StatSummary,
)

BLOCK_SIZE = 1024
RAW_STREAM = 0x5A3C
MIN_RUNTIME_MIN = 1.0
MIN_POWER_W = 1.0
# near-idle utilization component: Beta(0.5, 150), mean ~0.33 %
_IDLE_A, _IDLE_B = 0.5, 150.0
FAMILIES = ("lognormal", "truncnormal", "betamix", "normal")


@dataclass(frozen=True)
class DistSpec:
    """A baseline distribution.

    ``lognormal``: location = median, scale = log-sd.
    ``truncnormal`` / ``normal``: location = mean, scale = sd of the parent
    normal; ``lower`` truncates from below.
    ``betamix`` (percent): a near-idle component of weight ``idle_fraction``
    plus a Beta body with mean ``location`` percent and concentration ``scale``.
    """

    family: str
    location: float
    scale: float
    lower: float | None = None
    idle_fraction: float = 0.0

    def validate(self, name):
        if self.family not in FAMILIES:
            raise ConfigError(f"{name}: unknown distribution family {self.family!r}")
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise ConfigError(f"{name}: scale must be > 0")
        if self.family == "lognormal" and not self.location > 0:
            raise ConfigError(f"{name}: lognormal median must be > 0")
        if self.family == "betamix":
            if not 0 < self.location < 100:
                raise ConfigError(f"{name}: betamix body mean must be in (0, 100)")
            if not 0 <= self.idle_fraction < 1:
                raise ConfigError(f"{name}: idle_fraction must be in [0, 1)")
        if self.family == "truncnormal" and self.lower is None:
            raise ConfigError(f"{name}: truncnormal needs a lower bound")

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.family == "lognormal":
            return self.location * np.exp(self.scale * rng.standard_normal(n))
        if self.family == "normal":
            return self.location + self.scale * rng.standard_normal(n)
        if self.family == "truncnormal":
            a = (self.lower - self.location) / self.scale
            u = rng.random(n)
            lo = special.ndtr(a)
            return self.location + self.scale * special.ndtri(lo + u * (1.0 - lo))
        # betamix
        m = self.location / 100.0
        body = rng.beta(m * self.scale, (1 - m) * self.scale, n)
        idle = rng.beta(_IDLE_A, _IDLE_B, n)
        pick = rng.random(n) < self.idle_fraction
        return 100.0 * np.where(pick, idle, body)

    def moments(self) -> tuple[float, float]:
        """Population mean and sd."""
        if self.family == "lognormal":
            s2 = self.scale**2
            mean = self.location * math.exp(s2 / 2)
            return mean, mean * math.sqrt(math.expm1(s2))
        if self.family == "normal":
            return self.location, self.scale
        if self.family == "truncnormal":
            d = stats.truncnorm((self.lower - self.location) / self.scale, np.inf,
                                loc=self.location, scale=self.scale)
            return float(d.mean()), float(d.std())
        w = self.idle_fraction
        comps = [
            (w, _IDLE_A / (_IDLE_A + _IDLE_B), _IDLE_A, _IDLE_B),
            (1 - w, self.location / 100.0, self.location / 100.0 * self.scale,
             (1 - self.location / 100.0) * self.scale),
        ]
        mean = sum(p * m for p, m, _, _ in comps)
        second = sum(p * (a * b / ((a + b) ** 2 * (a + b + 1)) + m * m) for p, m, a, b in comps)
        return 100 * mean, 100 * math.sqrt(second - mean * mean)


def _default_runtime():
    return DistSpec("lognormal", 145.36, 1.679)


def _default_utilization():
    return DistSpec("betamix", 44.4, 2.41, idle_fraction=0.29)


def _default_power():
    # residual on top of power_floor + power_util_slope * utilization
    return DistSpec("lognormal", 16.9, 1.03)


def _default_temperature():
    return DistSpec("truncnormal", 33.0, 7.9, lower=18.0)


@dataclass(frozen=True)
class SynthConfig:
    n_jobs: int = 10_000
    cap_fraction: float = 19_676 / 123_204
    true_ate_power: float = -10.1
    true_ate_temp: float = -4.78
    selection_bias_strength: float = 0.0
    variance_shrink_under_cap: float = 0.7
    seed: int = 0
    runtime: DistSpec = field(default_factory=_default_runtime)
    utilization: DistSpec = field(default_factory=_default_utilization)
    power: DistSpec = field(default_factory=_default_power)
    temperature: DistSpec = field(default_factory=_default_temperature)
    power_floor: float = 22.0
    power_util_slope: float = 0.6  # W per utilization percent
    temp_util_slope: float = 0.2  # C per utilization percent
    power_within_sd: float = 10.0  # mean within-job sd, W
    temp_within_sd: float = 3.0  # mean within-job sd, C
    # effect_i = ate * (1 + gradient * z_util); 0 gives a homogeneous effect
    effect_util_gradient: float = 0.0

    def __post_init__(self):
        if int(self.n_jobs) != self.n_jobs or self.n_jobs < 4:
            raise ConfigError(f"n_jobs must be an integer >= 4, got {self.n_jobs!r}")
        if not 0 < self.cap_fraction < 1:
            raise ConfigError("cap_fraction must be in (0, 1)")
        if not 0 < self.variance_shrink_under_cap <= 1:
            raise ConfigError("variance_shrink_under_cap must be in (0, 1]")
        for name in ("true_ate_power", "true_ate_temp", "selection_bias_strength",
                     "power_floor", "power_util_slope", "temp_util_slope", "effect_util_gradient"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")
        for name in ("power_within_sd", "temp_within_sd"):
            if not getattr(self, name) >= 0:
                raise ConfigError(f"{name} must be >= 0")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        for name in ("runtime", "utilization", "power", "temperature"):
            spec = getattr(self, name)
            if isinstance(spec, dict):
                try:
                    spec = DistSpec(**spec)
                except TypeError as exc:
                    raise ConfigError(f"{name}: {exc}") from None
                object.__setattr__(self, name, spec)
            spec.validate(name)
        if self.utilization.family != "betamix":
            raise ConfigError("utilization must use the betamix family (bounded to [0, 100])")

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_file(cls, path) -> "SynthConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            from .errors import IoError

            raise IoError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if "synth" in data:
            data = data["synth"]
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def assignment_mechanism(self) -> str:
        return "randomized" if self.selection_bias_strength == 0 else "covariate-dependent"


@dataclass(frozen=True)
class GroundTruth:
    true_ate_power: float
    true_ate_temp: float
    assignment_mechanism: str
    effect_util_gradient: float = 0.0
    seed: int = 0
    n_jobs: int = 0

    @classmethod
    def from_config(cls, config: SynthConfig) -> "GroundTruth":
        return cls(config.true_ate_power, config.true_ate_temp, config.assignment_mechanism,
                   config.effect_util_gradient, config.seed, config.n_jobs)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**{k: data[k] for k in ("true_ate_power", "true_ate_temp", "assignment_mechanism")},
                   **{k: data[k] for k in ("effect_util_gradient", "seed", "n_jobs") if k in data})

    def true_ate(self, outcome: str) -> float | None:
        """Injected effect for an outcome selector, when it has one."""
        metric = outcome.partition(".")[0]
        if metric == "power":
            return self.true_ate_power
        if metric == "temperature":
            return self.true_ate_temp
        return None


# --- within-job distributions ---------------------------------------------

_QS = np.array(PERCENTILES) / 100.0


def _lognormal_summary(mean, sd, n):
    cv2 = (sd / mean) ** 2
    s = np.sqrt(np.log1p(cv2))
    mu = np.log(mean) - s * s / 2
    q = _quantile_grid(n)
    vals = np.exp(mu[:, None] + s[:, None] * special.ndtri(q))
    return vals


def _normal_summary(mean, sd, n):
    q = _quantile_grid(n)
    return mean[:, None] + sd[:, None] * special.ndtri(q)


def _beta_summary(mean_pct, sd_pct, n):
    m = mean_pct / 100.0
    v = (sd_pct / 100.0) ** 2
    conc = m * (1 - m) / v - 1
    q = _quantile_grid(n)
    return 100.0 * special.betaincinv((m * conc)[:, None], ((1 - m) * conc)[:, None], q)


def _quantile_grid(n):
    """Per-job probability levels for (min, p10..p90, max) over n samples."""
    n = np.asarray(n, dtype=float)
    lo = (0.5 / n)[:, None]
    return np.hstack([lo, np.broadcast_to(_QS, (n.size, _QS.size)), 1.0 - lo])


def _summaries(mean, sd, grid, n):
    g = np.sort(grid, axis=1)
    m = np.clip(mean, g[:, 0], g[:, -1])
    sd = np.asarray(sd, dtype=float)
    n = np.asarray(n)
    # the invariants StatSummary enforces, checked once for the whole batch
    if not (np.all(np.isfinite(g)) and np.all(sd >= 0) and np.all(n >= 1)):
        raise ConfigError("configuration produced invalid within-job summaries")
    make = StatSummary._prevalidated
    return [
        make(mean=mi, sd=si, min=r[0], p10=r[1], p25=r[2], p50=r[3], p75=r[4], p90=r[5], max=r[6], n=ni)
        for mi, si, r, ni in zip(m.tolist(), sd.tolist(), g.tolist(), n.tolist())
    ]


def _block(config: SynthConfig, b: int, start: int, stop: int, u_mu: float, u_sd: float) -> dict:
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(b,)))
    m = stop - start
    cols = {}
    cols["runtime"] = np.maximum(config.runtime.draw(rng, m), MIN_RUNTIME_MIN)
    cols["util"] = np.clip(config.utilization.draw(rng, m), 0.0, 100.0)
    cols["power_resid"] = config.power.draw(rng, m)
    cols["temp_base"] = config.temperature.draw(rng, m)
    cols["gumbel"] = rng.gumbel(size=m)
    cols["power_sd"] = rng.gamma(2.0, config.power_within_sd / 2.0, m) if config.power_within_sd else np.zeros(m)
    cols["temp_sd"] = rng.gamma(2.0, config.temp_within_sd / 2.0, m) if config.temp_within_sd else np.zeros(m)
    cols["util_sd_frac"] = rng.uniform(0.1, 0.5, m)
    cols["z_util"] = (cols["util"] - u_mu) / u_sd
    return cols


def _assign(config: SynthConfig, z_util, gumbel) -> np.ndarray:
    """Treat exactly round(n * cap_fraction) jobs, chosen by Gumbel top-k.

    With ``selection_bias_strength = s`` this samples without replacement with
    odds proportional to ``exp(s * z_util)``; ``s = 0`` is a uniform draw.
    """
    n = z_util.size
    k = min(max(int(round(n * config.cap_fraction)), 2), n - 2)
    keys = config.selection_bias_strength * z_util + gumbel
    order = np.argsort(-keys, kind="stable")
    treated = np.zeros(n, dtype=bool)
    treated[order[:k]] = True
    return treated


def generate_cohorts(config: SynthConfig) -> tuple[Cohort, Cohort, GroundTruth]:
    """Draw a capped and an uncapped cohort with the configured effects."""
    n = int(config.n_jobs)
    u_mu, u_sd = config.utilization.moments()
    blocks = [
        _block(config, b, s, min(s + BLOCK_SIZE, n), u_mu, u_sd)
        for b, s in enumerate(range(0, n, BLOCK_SIZE))
    ]
    cols = {k: np.concatenate([blk[k] for blk in blocks]) for k in blocks[0]}
    treated = _assign(config, cols["z_util"], cols["gumbel"])
    tf = treated.astype(float)

    scale = 1.0 + config.effect_util_gradient * cols["z_util"]
    util = cols["util"]
    power = config.power_floor + config.power_util_slope * util + cols["power_resid"]
    power = power + tf * config.true_ate_power * scale
    power = np.maximum(power, MIN_POWER_W)
    temp = cols["temp_base"] + config.temp_util_slope * util + tf * config.true_ate_temp * scale

    shrink = np.where(treated, config.variance_shrink_under_cap, 1.0)
    power_sd = cols["power_sd"] * shrink
    temp_sd = cols["temp_sd"] * shrink
    runtime = cols["runtime"]
    n_samples = np.floor(runtime * 60_000.0 / SAMPLE_INTERVAL_MS).astype(np.int64)

    # utilization sd as a fraction of its Bernoulli bound keeps the beta proper
    m = np.clip(util / 100.0, 1e-6, 1 - 1e-6)
    util_mean = 100.0 * m
    util_sd = 100.0 * cols["util_sd_frac"] * np.sqrt(m * (1 - m))

    p_grid = _lognormal_summary(power, np.maximum(power_sd, 1e-12), n_samples)
    p_grid[power_sd == 0] = power[power_sd == 0, None]
    t_grid = _normal_summary(temp, temp_sd, n_samples)
    u_grid = np.clip(_beta_summary(util_mean, util_sd, n_samples), 0.0, 100.0)

    p_sum = _summaries(power, power_sd, p_grid, n_samples)
    t_sum = _summaries(temp, temp_sd, t_grid, n_samples)
    u_sum = _summaries(util_mean, util_sd, u_grid, n_samples)

    width = max(6, len(str(n - 1)))
    capped, uncapped = [], []
    for i in range(n):
        rec = JobRecord(f"job{i:0{width}d}", bool(treated[i]), float(runtime[i]), u_sum[i], t_sum[i], p_sum[i])
        (capped if treated[i] else uncapped).append(rec)
    return (
        Cohort(tuple(capped), label="capped"),
        Cohort(tuple(uncapped), label="uncapped"),
        GroundTruth.from_config(config),
    )


def generate_raw_series(
    config: SynthConfig,
    job: JobRecord,
    n_samples: int | None = None,
    gpu_index: int = 0,
    interval_ms: float = SAMPLE_INTERVAL_MS,
) -> SampleSeries:
    """Sample a polling series whose moments target ``job``'s summaries.

    Power is log-normal, temperature normal and utilization beta within the
    job, each moment-matched to the record's mean and sd.
    """
    if n_samples is None:
        n_samples = max(int(job.runtime * 60_000.0 / interval_ms), 1)
    if n_samples < 1:
        raise ConfigError("n_samples must be >= 1")
    if not interval_ms > 0:
        raise ConfigError("interval_ms must be > 0")
    key = (RAW_STREAM, zlib.crc32(str(job.job_id).encode("utf-8")), int(gpu_index))
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=key))

    def sd_of(summary):
        return summary.sd or 0.0

    pm, ps = job.power.mean, sd_of(job.power)
    if ps > 0:
        s = math.sqrt(math.log1p((ps / pm) ** 2))
        power = pm * np.exp(s * rng.standard_normal(n_samples) - s * s / 2)
    else:
        power = np.full(n_samples, pm)

    tm, ts = job.temperature.mean, sd_of(job.temperature)
    temp = tm + ts * rng.standard_normal(n_samples) if ts > 0 else np.full(n_samples, tm)

    um, us = job.utilization.mean / 100.0, sd_of(job.utilization) / 100.0
    if us > 0 and 0 < um < 1 and us * us < um * (1 - um):
        conc = um * (1 - um) / (us * us) - 1
        util = 100.0 * rng.beta(um * conc, (1 - um) * conc, n_samples)
    else:
        util = np.full(n_samples, 100.0 * um)

    t = np.arange(n_samples, dtype=float) * interval_ms
    return SampleSeries(job.job_id, int(gpu_index), t, util, temp, power)


def baseline_config(**overrides) -> SynthConfig:
    """The production-calibrated default, optionally with overrides."""
    return replace(SynthConfig(), **overrides)
