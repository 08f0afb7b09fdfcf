"""Command-line front end: ``generate | summarize | test | ate | tradeoff | histogram``.

Every command builds a plain dict report, then renders it as an aligned
text table, CSV or JSON (``--format``). Exit codes:

====  ==========================================================
0     success
1     other package error
2     command-line usage error
3     ConfigError / SpecError (bad parameters or config file)
4     SchemaError / RowError / EmptyDataset (bad input data)
5     InsufficientData (too few records for an estimator or test)
6     IoError (unreadable or unwritable path)
7     MissingBaseline (tradeoff file without an uncapped point)
====  ==========================================================

The default seed comes from ``POWERCAP_SEED`` when ``--seed`` is omitted.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, InsufficientData, IoError, PowerCapError, SchemaError
from .inference import (
    ALPHAS,
    DEFAULT_COVARIATES,
    MatchingSpec,
    filter_efficient,
    mann_whitney_u,
    matching_ate,
    ols_ate,
    pool,
    welch_t_test,
)
from .ingest import load_job_records, write_job_records, write_sample_series
from .report import HIST_COLUMNS, DEFAULT_BINS, HistogramSpec, histogram, spread_summary
from .synth import GroundTruth, SynthConfig, generate_cohorts, generate_raw_series
from .telemetry import StatSummary
from .tradeoff import bundled_path, group_points, load_tradeoff_file, sweep

SCHEMA_RESOURCE = "data/report.schema.json"

SEED_ENV = "POWERCAP_SEED"
FORMATS = ("table", "csv", "json")
SUMMARY_STATS = (("mean", "mean"), ("s.d.", "sd"), ("min", "min"), ("25%", "p25"),
                ("50%", "p50"), ("75%", "p75"), ("max", "max"))
SUMMARY_COLUMNS = (("Time (minutes)", "runtime"), ("Util. (%)", "utilization.mean"),
                  ("Temp. (C)", "temperature.mean"), ("Power (W)", "power.mean"))
GRID_ROWS = (
    ("GPU Power Draw (Mean)", "power.mean"),
    ("GPU Power Draw (50th)", "power.p50"),
    ("GPU Power Draw (90th)", "power.p90"),
    ("GPU Temperature (Mean)", "temperature.mean"),
    ("GPU Temperature (50th)", "temperature.p50"),
    ("GPU Temperature (90th)", "temperature.p90"),
)
METHOD_ALIASES = {"ols": "ols", "match": "matching", "match-adj": "matching_bias_adjusted"}


def sig6(x):
    """Round to 6 significant digits; non-finite becomes None."""
    if x is None:
        return None
    x = float(x)
    if not math.isfinite(x):
        return None
    return float(format(x, ".6g"))


def report_schema() -> dict:
    """The JSON schema every ``--format json`` report validates against."""
    from importlib import resources

    return json.loads((resources.files("powercap") / SCHEMA_RESOURCE).read_text(encoding="utf-8"))


def alpha_label(a: float) -> str:
    return f"{a * 100:g}%"


# --- report builders -------------------------------------------------------


def _manifest_dict(m):
    return {"record_count": m.record_count, "capped_count": m.capped_count,
            "schema_version": m.schema_version, "source": m.source}


def build_generate(config: SynthConfig, outdir: Path, raw_jobs: int = 0, raw_samples: int = 600) -> dict:
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {outdir}: {exc}") from None
    capped, uncapped, truth = generate_cohorts(config)
    jobs_path = outdir / "jobs.csv"
    manifest = write_job_records([capped, uncapped], jobs_path)
    truth_path = outdir / "jobs.truth.json"
    try:
        truth_path.write_text(json.dumps(truth.to_dict(), indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {truth_path}: {exc}") from None
    files = {"jobs": jobs_path.name, "truth": truth_path.name}
    if raw_jobs:
        records = sorted(pool(capped, uncapped), key=lambda r: r.job_id)[:raw_jobs]
        series = [generate_raw_series(config, r, n_samples=raw_samples) for r in records]
        write_sample_series(series, outdir / "raw.csv")
        files["raw"] = "raw.csv"
    return {
        "command": "generate",
        "version": __version__,
        "seed": config.seed,
        "manifest": {**_manifest_dict(manifest), "source": "synthetic"},
        "files": files,
        "truth": truth.to_dict(),
    }


def _summary_block(label, records):
    cols = {}
    for _, selector in SUMMARY_COLUMNS:
        vals = np.array([r.value(selector) for r in records], dtype=float)
        cols[selector] = StatSummary.from_values(vals) if vals.size else None
    rows = []
    for name, stat in SUMMARY_STATS:
        row = {"statistic": name}
        for _, selector in SUMMARY_COLUMNS:
            s = cols[selector]
            row[selector] = sig6(getattr(s, stat)) if s is not None else None
        rows.append(row)
    return {"label": label, "n": len(records), "rows": rows}


def build_summarize(path) -> dict:
    capped, uncapped, manifest = load_job_records(path)
    all_records = pool(capped, uncapped)
    return {
        "command": "summarize",
        "version": __version__,
        "manifest": _manifest_dict(manifest),
        "columns": [c for c, _ in SUMMARY_COLUMNS],
        "cohorts": [
            _summary_block("overall", all_records),
            _summary_block("capped", list(capped)),
            _summary_block("uncapped", list(uncapped)),
        ],
    }


def run_test_grid(capped, uncapped, alphas=ALPHAS) -> list[dict]:
    """Welch and Mann-Whitney per outcome row; a cell is checked when both reject."""
    rows = []
    for name, selector in GRID_ROWS:
        row = {"variable": name, "field": selector, "welch_t": None, "welch_dof": None, "welch_p": None,
               "mwu_u": None, "mwu_p": None, "error": None,
               "checks": {alpha_label(a): False for a in alphas}}
        try:
            x1, x0 = capped.values(selector), uncapped.values(selector)
            w = welch_t_test(x1, x0)
            m = mann_whitney_u(x1, x0)
        except InsufficientData as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
            rows.append(row)
            continue
        row.update(welch_t=sig6(w.statistic), welch_dof=sig6(w.dof), welch_p=sig6(w.p_value),
                   mwu_u=sig6(m.statistic), mwu_p=sig6(m.p_value))
        row["checks"] = {alpha_label(a): bool(w.p_value < a and m.p_value < a) for a in alphas}
        rows.append(row)
    return rows


def build_test(path) -> dict:
    capped, uncapped, manifest = load_job_records(path)
    if manifest.is_lite:
        missing = ["power_p90", "temp_p90"]
        raise SchemaError(
            f"{path} is a summary-lite dataset; the test grid needs the 90th-percentile columns {missing}"
        )
    return {
        "command": "test",
        "version": __version__,
        "manifest": _manifest_dict(manifest),
        "alphas": [alpha_label(a) for a in ALPHAS],
        "rows": run_test_grid(capped, uncapped),
    }


def find_truth(path: Path, explicit: str | None):
    candidate = Path(explicit) if explicit else path.with_name(path.stem + ".truth.json")
    if not candidate.exists():
        if explicit:
            raise IoError(f"truth file {explicit} not found")
        return None
    try:
        return GroundTruth.from_dict(json.loads(candidate.read_text(encoding="utf-8")))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise SchemaError(f"cannot read ground truth from {candidate}: {exc}") from None


def build_ate(path, outcome="power.mean", method="ols", efficient_threshold=None, covariates=None,
              bootstrap=None, se_type="HC1", seed=0, truth_path=None) -> dict:
    path = Path(path)
    if method not in METHOD_ALIASES:
        raise ConfigError(f"unknown method {method!r}; choose from {sorted(METHOD_ALIASES)}")
    capped, uncapped, manifest = load_job_records(path)
    records = pool(capped, uncapped)
    cohort = "all"
    if efficient_threshold is not None:
        records = list(filter_efficient(records, efficient_threshold))
        cohort = f"utilization.mean > {efficient_threshold:g}"
    kind = METHOD_ALIASES[method]
    try:
        if kind == "ols":
            est = ols_ate(records, outcome, se_type=se_type)
        else:
            spec = MatchingSpec(
                covariates=tuple(covariates or DEFAULT_COVARIATES),
                bias_adjust=(kind == "matching_bias_adjusted"),
                n_bootstrap=bootstrap, seed=seed,
            )
            est = matching_ate(records, outcome, spec)
    except KeyError as exc:
        raise ConfigError(str(exc)) from None
    except ValueError as exc:
        if isinstance(exc, PowerCapError):
            raise
        raise ConfigError(str(exc)) from None
    report = {
        "command": "ate",
        "version": __version__,
        "manifest": _manifest_dict(manifest),
        "cohort": cohort,
        "outcome": outcome,
        "method": est.method,
        "covariates": list(est.covariates),
        "se_type": est.se_type,
        "estimate": sig6(est.estimate),
        "std_error": sig6(est.std_error),
        "p_value": sig6(est.p_value),
        "ci95": [sig6(v) for v in est.ci95] if est.ci95 else None,
        "n_treated": est.n_treated,
        "n_control": est.n_control,
    }
    truth = find_truth(path, truth_path)
    if truth is not None and truth.true_ate(outcome) is not None:
        t = truth.true_ate(outcome)
        report["truth"] = {"true_ate": sig6(t), "error": sig6(est.estimate - t)}
    return report


def build_tradeoff(path=None, bundled=None) -> dict:
    if (path is None) == (bundled is None):
        raise ConfigError("give exactly one of --input or --bundled")
    src = bundled_path(bundled) if bundled else Path(path)
    points = load_tradeoff_file(src)
    groups = []
    for (workload, context), pts in group_points(points).items():
        rep = sweep(pts)
        groups.append({
            "workload": workload,
            "context": context,
            "verdicts": [v.to_dict() for v in rep.verdicts],
            "ranked_optimal": [
                {"cap": v.point.cap, "output_length": v.point.output_length,
                 "energy_saving": v.energy_saving, "perf_impact": v.perf_impact}
                for v in rep.ranked_optimal
            ],
        })
    return {"command": "tradeoff", "version": __version__,
            "source": bundled or str(path), "groups": groups}


def build_histogram(path, fields, n_bins=DEFAULT_BINS, spread=False) -> dict:
    capped, uncapped, manifest = load_job_records(path)
    cohorts = {"capped": capped, "uncapped": uncapped}
    rows, summaries = [], []
    for field in fields:
        try:
            spec = HistogramSpec.shared(field, cohorts, n_bins)
        except KeyError as exc:
            raise SchemaError(str(exc)) from None
        rows.extend(histogram(cohorts, spec).rows())
    if spread:
        for metric, s in spread_summary(cohorts, n_bins).items():
            rows.extend(s.histogram.rows())
            summaries.append({"metric": metric, "mean_within_job_sd": {k: sig6(v) for k, v in s.mean_sd.items()}})
    for r in rows:
        r["bin_left"], r["bin_right"] = sig6(r["bin_left"]), sig6(r["bin_right"])
    return {"command": "histogram", "version": __version__, "manifest": _manifest_dict(manifest),
            "bins": rows, "spread": summaries}


# --- rendering -------------------------------------------------------------


def _cell(v):
    if v is None:
        return "-"
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, float):
        return format(v, ".6g")
    return str(v)


def _align(header, rows):
    cells = [list(map(_cell, header))] + [[_cell(c) for c in r] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(row, widths))).rstrip()
             for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _tabular(report: dict) -> tuple[list[str], list[list]]:
    cmd = report["command"]
    if cmd == "summarize":
        header = ["cohort", "n", "statistic"] + report["columns"]
        rows = [[c["label"], c["n"], r["statistic"]] + [r[s] for _, s in SUMMARY_COLUMNS]
                for c in report["cohorts"] for r in c["rows"]]
        return header, rows
    if cmd == "test":
        header = ["variable", "welch_p", "mwu_p"] + [f"alpha={a}" for a in report["alphas"]] + ["error"]
        rows = [[r["variable"], r["welch_p"], r["mwu_p"]] + [r["checks"][a] for a in report["alphas"]] + [r["error"]]
                for r in report["rows"]]
        return header, rows
    if cmd == "ate":
        keys = ["cohort", "outcome", "method", "covariates", "se_type", "estimate", "std_error",
                "p_value", "ci95", "n_treated", "n_control"]
        row = [report[k] if k not in ("covariates", "ci95") else
               (";".join(report[k]) if k == "covariates" else
                (None if report[k] is None else f"[{_cell(report[k][0])}, {_cell(report[k][1])}]"))
               for k in keys]
        if "truth" in report:
            keys += ["true_ate", "error"]
            row += [report["truth"]["true_ate"], report["truth"]["error"]]
        return keys, [row]
    if cmd == "tradeoff":
        header = ["workload", "context", "cap", "output_length", "relative_speed", "relative_energy",
                  "energy_saving", "perf_impact", "optimal", "rank"]
        rows = []
        for g in report["groups"]:
            ranks = {(o["cap"], o["output_length"]): i + 1 for i, o in enumerate(g["ranked_optimal"])}
            for v in g["verdicts"]:
                p = v["point"]
                rows.append([g["workload"], g["context"], "uncapped" if p["cap"] is None else p["cap"],
                             p["output_length"], p["relative_speed"], p["relative_energy"],
                             v["energy_saving"], v["perf_impact"], v["optimal"],
                             ranks.get((p["cap"], p["output_length"])) if v["optimal"] else None])
        return header, rows
    if cmd == "histogram":
        return list(HIST_COLUMNS), [[r[c] for c in HIST_COLUMNS] for r in report["bins"]]
    if cmd == "generate":
        m = report["manifest"]
        header = ["record_count", "capped_count", "schema_version", "seed", "files"]
        return header, [[m["record_count"], m["capped_count"], m["schema_version"], report["seed"],
                         ";".join(report["files"].values())]]
    raise ValueError(cmd)


def render(report: dict, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(report, indent=2) + "\n"
    header, rows = _tabular(report)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(["" if c is None else _cell(c) for c in r])
        return buf.getvalue()
    text = _align(header, rows)
    if report["command"] == "ate" and report["method"] != "ols":
        text += ("\nnote: matching covariates are a documented default choice"
                 if report["covariates"] == list(DEFAULT_COVARIATES) else "")
    return text + "\n"


# --- argument parsing --------------------------------------------------------


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV}={raw!r} is not an integer") from None


def _common(p, output_help="report file (default: stdout)"):
    p.add_argument("--input", "-i", help="input file")
    p.add_argument("--output", "-o", help=output_help)
    p.add_argument("--format", "-f", choices=FORMATS, default="table")
    p.add_argument("--seed", type=int, default=None, help=f"random seed (default: ${SEED_ENV} or 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="powercap", description="GPU power-capping telemetry analysis")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset with a ground-truth sidecar")
    _common(g, output_help="output directory (required)")
    g.add_argument("--config", help="JSON synthetic config (keys of SynthConfig, optionally under 'synth')")
    g.add_argument("--n-jobs", type=int)
    g.add_argument("--cap-fraction", type=float)
    g.add_argument("--ate-power", type=float)
    g.add_argument("--ate-temp", type=float)
    g.add_argument("--selection-bias", type=float)
    g.add_argument("--raw-jobs", type=int, default=0, help="also write raw samples for the first N jobs")
    g.add_argument("--raw-samples", type=int, default=600, help="samples per raw series")

    s = sub.add_parser("summarize", help="summary statistics per cohort")
    _common(s)

    t = sub.add_parser("test", help="Welch and Mann-Whitney significance grid")
    _common(t)

    a = sub.add_parser("ate", help="average treatment effect of capping")
    _common(a)
    a.add_argument("--outcome", default="power.mean")
    a.add_argument("--method", choices=sorted(METHOD_ALIASES), default="ols")
    a.add_argument("--efficient-threshold", type=float, default=None,
                   help="restrict to jobs with mean utilization above this percent")
    a.add_argument("--covariates", default=None, help="comma-separated matching covariates")
    a.add_argument("--bootstrap", type=int, default=None, help="bootstrap replicates for matching")
    a.add_argument("--se-type", choices=("HC1", "classical"), default="HC1")
    a.add_argument("--truth", default=None, help="ground-truth sidecar (default: <input>.truth.json)")

    tr = sub.add_parser("tradeoff", help="classify power caps by energy/performance")
    _common(tr)
    tr.add_argument("--bundled", choices=("llama-inference", "training-midpoints"))

    h = sub.add_parser("histogram", help="plot-ready bin counts per cohort")
    _common(h)
    h.add_argument("--field", action="append", default=[], help="field selector, repeatable")
    h.add_argument("--bins", type=int, default=DEFAULT_BINS)
    h.add_argument("--spread", action="store_true", help="add within-job sd distributions")
    return parser


def _require_input(args):
    if not args.input:
        raise ConfigError(f"{args.command} needs --input")
    return args.input


def _synth_config(args, seed) -> SynthConfig:
    cfg = SynthConfig.from_file(args.config) if args.config else SynthConfig()
    overrides = {"seed": seed}
    for flag, key in (("n_jobs", "n_jobs"), ("cap_fraction", "cap_fraction"), ("ate_power", "true_ate_power"),
                      ("ate_temp", "true_ate_temp"), ("selection_bias", "selection_bias_strength")):
        val = getattr(args, flag)
        if val is not None:
            overrides[key] = val
    return replace(cfg, **overrides)


def dispatch(args) -> dict:
    seed = args.seed if args.seed is not None else _default_seed()
    if args.command == "generate":
        if not args.output:
            raise ConfigError("generate needs --output DIR")
        if args.raw_jobs < 0 or args.raw_samples < 1:
            raise ConfigError("--raw-jobs must be >= 0 and --raw-samples >= 1")
        return build_generate(_synth_config(args, seed), Path(args.output), args.raw_jobs, args.raw_samples)
    if args.command == "summarize":
        return build_summarize(_require_input(args))
    if args.command == "test":
        return build_test(_require_input(args))
    if args.command == "ate":
        if args.bootstrap is not None and args.bootstrap < 2:
            raise ConfigError("--bootstrap must be >= 2")
        covs = [c.strip() for c in args.covariates.split(",") if c.strip()] if args.covariates else None
        return build_ate(_require_input(args), args.outcome, args.method, args.efficient_threshold,
                         covs, args.bootstrap, args.se_type, seed, args.truth)
    if args.command == "tradeoff":
        return build_tradeoff(args.input, args.bundled)
    if args.command == "histogram":
        if args.bins < 1:
            raise ConfigError("--bins must be >= 1")
        if not args.field and not args.spread:
            raise ConfigError("histogram needs --field and/or --spread")
        return build_histogram(_require_input(args), args.field, args.bins, args.spread)
    raise ConfigError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        report = dispatch(args)
        text = render(report, args.format)
        if args.output and args.command != "generate":
            try:
                Path(args.output).write_text(text, encoding="utf-8")
            except OSError as exc:
                raise IoError(f"cannot write {args.output}: {exc}") from None
        else:
            sys.stdout.write(text)
    except PowerCapError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
