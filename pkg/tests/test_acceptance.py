"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import contextlib
import io
import json
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from conftest import DATA, GOLDEN, acceptance_line, make_record
from oracles import matching_brute_force, mwu_exact_enumeration, t_cdf_quad
from powercap.cli import main, run_test_grid
from powercap.inference import (
    MatchingSpec,
    bias_adjusted_matching_ate,
    filter_efficient,
    mann_whitney_u,
    matching_ate,
    naive_difference,
    ols_ate,
    welch_t_test,
)
from powercap.synth import DistSpec, generate_cohorts, baseline_config

TRUE_ATE = -10.1
REPLICATES = 200


def cli(argv):
    out = io.StringIO()
    with contextlib.redirect_stdout(out):
        code = main([str(a) for a in argv])
    assert code == 0
    return out.getvalue()


def low_noise_power(**overrides):
    """Power residuals tighter than production so a 0.5 W error bound is reachable."""
    base = dict(power=DistSpec("lognormal", 40.0, 0.3), power_util_slope=0.3)
    return baseline_config(**{**base, **overrides})


def test_criterion_01_tradeoff_reproduction():
    start = time.perf_counter()
    report = json.loads(cli(["tradeoff", "--bundled", "llama-inference", "-f", "json"]))
    elapsed = time.perf_counter() - start
    published = {  # (cap, length) -> (speed, energy, optimal)
        (175, 256): (0.948, 0.782, True), (175, 512): (0.935, 0.761, True), (175, 1024): (0.926, 0.761, True),
        (150, 256): (0.847, 0.672, False), (150, 512): (0.783, 0.653, False), (150, 1024): (0.782, 0.654, False),
    }
    (group,) = report["groups"]
    seen = {}
    for v in group["verdicts"]:
        p = v["point"]
        if p["cap"] is not None:
            seen[(p["cap"], p["output_length"])] = v
    ok = seen.keys() == published.keys()
    worst = 0.0
    for key, (speed, energy, optimal) in published.items():
        v = seen[key]
        worst = max(worst, abs(v["energy_saving"] - (1 - energy)), abs(v["perf_impact"] - (1 - speed)))
        ok &= v["optimal"] is optimal
    ok &= worst <= 1e-9 and elapsed < 1.0
    assert abs(seen[(175, 256)]["energy_saving"] - 0.218) <= 1e-9
    assert abs(seen[(175, 256)]["perf_impact"] - 0.052) <= 1e-9
    acceptance_line(1, "tradeoff reproduction", ok, f"6/6 verdicts, max deviation {worst:.1e}, {elapsed:.2f}s")
    assert ok


def test_criterion_02_ols_identity():
    rng = np.random.default_rng(2002)
    start = time.perf_counter()
    worst = 0.0
    for i in range(1000):
        n1, n0 = int(rng.integers(2, 40)), int(rng.integers(2, 40))
        offset, scale = rng.uniform(1, 500), 10 ** rng.uniform(-2, 2)
        y = offset + scale * rng.standard_normal(n1 + n0) + scale * 5
        y = np.abs(y) + 1e-3  # outcomes are power means, so positive
        recs = [make_record(f"r{i}_{j:03d}", j < n1, float(v)) for j, v in enumerate(y)]
        est = ols_ate(recs).estimate
        # exact rational difference of means; float means would cancel badly at large offsets
        diff = sum(map(Fraction, y[:n1])) / n1 - sum(map(Fraction, y[n1:])) / n0
        worst = max(worst, float(abs(Fraction(est) - diff) / abs(diff)))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and elapsed < 10
    acceptance_line(2, "OLS identity", ok, f"1000 datasets, max relative error {worst:.1e}, {elapsed:.1f}s")
    assert ok


def test_criterion_03_test_oracles():
    rng = np.random.default_rng(3003)
    start = time.perf_counter()
    welch_worst, mwu_mismatch = 0.0, 0
    for _ in range(100):
        n1, n0 = int(rng.integers(2, 31)), int(rng.integers(2, 31))
        a = rng.normal(rng.uniform(-1, 1), rng.uniform(0.5, 3), n1)
        b = rng.normal(0, rng.uniform(0.5, 3), n0)
        r = welch_t_test(a, b)
        welch_worst = max(welch_worst, abs(r.p_value - t_cdf_quad(r.statistic, r.dof)))

        m1 = int(rng.integers(2, 7))
        m0 = int(rng.integers(2, 13 - m1))
        while True:  # integer values force ties; an all-tied draw has no ordering to test
            x1, x0 = rng.integers(0, 8, m1).tolist(), rng.integers(0, 8, m0).tolist()
            if len(set(x1 + x0)) > 1:
                break
        got = mann_whitney_u(x1, x0, method="exact")
        u, p = mwu_exact_enumeration(x1, x0)
        mwu_mismatch += got.statistic != u or got.p_value != float(p)
    elapsed = time.perf_counter() - start
    ok = welch_worst <= 1e-8 and mwu_mismatch == 0 and elapsed < 30
    acceptance_line(3, "Welch/MWU oracle equivalence", ok,
                    f"Welch max |dp| {welch_worst:.1e}, MWU mismatches {mwu_mismatch}/100, {elapsed:.1f}s")
    assert ok


def test_criterion_04_matching_brute_force():
    rng = np.random.default_rng(4004)
    spec = MatchingSpec(covariates=("utilization.mean", "runtime"))
    start = time.perf_counter()
    mismatches = adjusted_mismatches = done = 0
    while done < 100:
        n = int(rng.integers(4, 13))
        capped = np.zeros(n, bool)
        capped[rng.choice(n, int(rng.integers(2, n - 1)), replace=False)] = True
        util = rng.choice([10.0, 20.0, 35.0, 50.0], n)  # coarse values force tied distances
        runtime = rng.choice([5.0, 30.0, 60.0], n)
        if util.std() == 0 or runtime.std() == 0:
            continue
        y = rng.uniform(20, 200, n)
        recs = [make_record(f"j{k:02d}", capped[k], y[k], x=(util[k], runtime[k])) for k in range(n)]
        perm = rng.permutation(n)  # input order must not matter
        est = matching_ate([recs[k] for k in perm], spec=spec).estimate
        expected, _ = matching_brute_force(np.column_stack([util, runtime]), capped.astype(int), y)
        mismatches += est != expected

        flat = np.where(capped, 80.0, 120.0)
        flat_recs = [make_record(f"j{k:02d}", capped[k], flat[k], x=(util[k], runtime[k])) for k in range(n)]
        plain = matching_ate(flat_recs, spec=spec).estimate
        adjusted = bias_adjusted_matching_ate(flat_recs, spec=spec).estimate
        adjusted_mismatches += plain != adjusted
        done += 1
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and adjusted_mismatches == 0 and elapsed < 10
    acceptance_line(4, "matching brute-force equivalence", ok,
                    f"plain mismatches {mismatches}/100, constant-outcome adjusted != plain {adjusted_mismatches}/100, "
                    f"{elapsed:.1f}s")
    assert ok


def test_criterion_05_estimator_recovery():
    start = time.perf_counter()
    covered, errors = 0, []
    for r in range(REPLICATES):
        cfg = low_noise_power(n_jobs=10_000, cap_fraction=0.5, true_ate_power=TRUE_ATE, seed=50_000 + r)
        capped, uncapped, truth = generate_cohorts(cfg)
        assert len(capped) == len(uncapped) == 5000 and truth.assignment_mechanism == "randomized"
        est = ols_ate([capped, uncapped])
        lo, hi = est.ci95
        covered += lo <= TRUE_ATE <= hi
        errors.append(abs(est.estimate - TRUE_ATE))
    elapsed = time.perf_counter() - start
    coverage = covered / REPLICATES
    mae = float(np.mean(errors))
    ok = abs(coverage - 0.95) <= 0.04 and mae < 0.5 and elapsed < 120
    acceptance_line(5, "estimator recovery", ok,
                    f"coverage {coverage:.3f} (target 0.95 +- 0.04), MAE {mae:.3f} W, {elapsed:.0f}s")
    assert ok


def test_criterion_06_bias_mitigation():
    start = time.perf_counter()
    closer, err_plain, err_adj = 0, [], []
    for r in range(REPLICATES):
        cfg = low_noise_power(n_jobs=1000, selection_bias_strength=2.0, power_util_slope=1.0, seed=60_000 + r)
        capped, uncapped, _ = generate_cohorts(cfg)
        recs = [capped, uncapped]
        naive = abs(naive_difference(recs) - TRUE_ATE)
        plain = abs(matching_ate(recs).estimate - TRUE_ATE)
        adjusted = abs(bias_adjusted_matching_ate(recs).estimate - TRUE_ATE)
        closer += plain < naive and adjusted < naive
        err_plain.append(plain)
        err_adj.append(adjusted)
    elapsed = time.perf_counter() - start
    rate = closer / REPLICATES
    mae_plain, mae_adj = float(np.mean(err_plain)), float(np.mean(err_adj))
    ok = rate >= 0.80 and mae_adj <= mae_plain and elapsed < 300
    acceptance_line(6, "bias mitigation", ok,
                    f"both closer than naive in {rate:.0%}, MAE matching {mae_plain:.2f} vs adjusted {mae_adj:.2f}, "
                    f"{elapsed:.0f}s")
    assert ok


def test_criterion_07_null_soundness():
    alphas = (0.01, 0.001, 0.0001)
    hits = np.zeros((6, len(alphas)))
    for r in range(REPLICATES):
        cfg = baseline_config(n_jobs=1000, true_ate_power=0.0, true_ate_temp=0.0,
                            variance_shrink_under_cap=1.0, seed=70_000 + r)
        capped, uncapped, _ = generate_cohorts(cfg)
        rows = run_test_grid(capped, uncapped, alphas)
        hits += np.array([list(row["checks"].values()) for row in rows])
    rates = hits / REPLICATES
    bounds = np.array([3 * math.sqrt(a * (1 - a) / REPLICATES) for a in alphas])
    ok = bool(np.all(np.abs(rates - np.array(alphas)) <= bounds))
    detail = ", ".join(f"alpha {a:g}: max rate {rates[:, j].max():.3f} (bound {a + bounds[j]:.4f})"
                       for j, a in enumerate(alphas))
    acceptance_line(7, "null soundness", ok, detail)
    assert ok


def test_criterion_08_summary_schema():
    text = cli(["summarize", "-i", DATA / "five_jobs.csv", "-f", "csv"])
    golden = (GOLDEN / "five_jobs_summarize.csv").read_text(encoding="utf-8")
    report = json.loads(cli(["summarize", "-i", DATA / "five_jobs.csv", "-f", "json"]))
    wanted = ["mean", "s.d.", "min", "25%", "50%", "75%", "max"]
    orders = [[row["statistic"] for row in c["rows"]] for c in report["cohorts"]]
    # independent check of the golden numbers for the pooled power column
    power = np.array([70.0, 110.0, 35.0, 60.0, 160.0])
    overall = {row["statistic"]: row["power.mean"] for row in report["cohorts"][0]["rows"]}
    expected = {"mean": power.mean(), "s.d.": power.std(ddof=1), "min": 35.0,
                "25%": np.percentile(power, 25), "50%": 70.0, "75%": np.percentile(power, 75), "max": 160.0}
    numbers_ok = all(math.isclose(overall[k], v, rel_tol=1e-5) for k, v in expected.items())
    ok = text == golden and all(o == wanted for o in orders) and numbers_ok
    acceptance_line(8, "summary schema fidelity", ok, f"golden match {text == golden}, statistic order {wanted}")
    assert ok


def test_criterion_09_pipeline_determinism(tmp_path):
    def pipeline(root):
        outputs = [cli(["generate", "-o", root, "--n-jobs", 800, "--seed", 99, "--raw-jobs", 2,
                        "--ate-power", TRUE_ATE, "-f", "json"]).replace(str(root), "<dir>")]
        jobs = root / "jobs.csv"
        outputs.append(cli(["test", "-i", jobs, "-f", "json"]).replace(str(root), "<dir>"))
        for method in ("ols", "match", "match-adj"):
            outputs.append(cli(["ate", "-i", jobs, "--method", method, "--bootstrap", 20, "-f", "json"]
                               if method != "ols" else ["ate", "-i", jobs, "-f", "json"]).replace(str(root), "<dir>"))
        outputs.append(cli(["tradeoff", "--bundled", "llama-inference", "-f", "json"]))
        files = [(root / f).read_bytes() for f in ("jobs.csv", "jobs.truth.json", "raw.csv")]
        return outputs, files

    first, second = pipeline(tmp_path / "a"), pipeline(tmp_path / "b")
    ok = first == second
    acceptance_line(9, "pipeline determinism", ok,
                    f"{len(first[0])} reports and {len(first[1])} files byte-identical: {ok}")
    assert ok


def test_criterion_10_efficient_amplification(tmp_path):
    cli(["generate", "-o", tmp_path, "--n-jobs", 20_000, "--seed", 10, "--config", _gradient_config(tmp_path)])
    full = json.loads(cli(["ate", "-i", tmp_path / "jobs.csv", "-f", "json"]))
    efficient = json.loads(cli(["ate", "-i", tmp_path / "jobs.csv", "--efficient-threshold", 70, "-f", "json"]))
    ok = abs(efficient["estimate"]) > abs(full["estimate"])
    acceptance_line(10, "efficient-cohort amplification", ok,
                    f"full {full['estimate']:.2f} W (n={full['n_treated'] + full['n_control']}), "
                    f"util>70% {efficient['estimate']:.2f} W (n={efficient['n_treated'] + efficient['n_control']})")
    assert ok


def _gradient_config(root):
    """Effect grows with utilization: effect_i = ate * (1 + 0.5 * z_util)."""
    path = root / "gradient.json"
    path.write_text(json.dumps({"synth": {"effect_util_gradient": 0.5}}))
    return path


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_criterion_10_holds_across_seeds(seed):
    capped, uncapped, _ = generate_cohorts(baseline_config(n_jobs=20_000, effect_util_gradient=0.5, seed=seed))
    full = ols_ate([capped, uncapped]).estimate
    efficient = ols_ate(filter_efficient([capped, uncapped])).estimate
    assert abs(efficient) > abs(full)
