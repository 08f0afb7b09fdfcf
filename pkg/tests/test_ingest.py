import math

import numpy as np
import pytest

from conftest import DATA
from powercap.errors import DataError, EmptyDataset, IoError, MalformedSeries, RowError, SchemaError
from powercap.ingest import (
    JOB_COLUMNS,
    LITE_COLUMNS,
    fmt,
    job_records_from_series,
    load_job_records,
    load_sample_series,
    write_job_records,
    write_sample_series,
)
from powercap.synth import SynthConfig, generate_cohorts, generate_raw_series
from powercap.telemetry import STAT_FIELDS, Cohort


def write_rows(path, rows, header=JOB_COLUMNS):
    path.write_text("\n".join([",".join(header)] + [",".join(map(str, r)) for r in rows]) + "\n", encoding="utf-8")
    return path


def good_row(job_id, capped, util=50.0):
    block = lambda m: [m, 1, m - 2, m - 1.6, m - 1, m, m + 1, m + 1.6, m + 2]  # noqa: E731
    return [job_id, capped, 12.5] + block(util) + block(40.0) + block(100.0)


def test_four_rows_two_capped(tmp_path):
    p = write_rows(tmp_path / "jobs.csv", [good_row("a", 1), good_row("b", 0), good_row("c", 1), good_row("d", 0)])
    capped, uncapped, manifest = load_job_records(p)
    assert (len(capped), len(uncapped)) == (2, 2)
    assert (manifest.record_count, manifest.capped_count) == (4, 2)
    assert manifest.schema_version == "jobs/1" and not manifest.is_lite


def test_utilization_out_of_bounds(tmp_path):
    p = write_rows(tmp_path / "jobs.csv", [good_row("a", 1), good_row("b", 0, util=120.0)])
    with pytest.raises(RowError) as info:
        load_job_records(p)
    assert info.value.row == 3
    assert info.value.field.startswith("util_")
    assert "[0, 100]" in str(info.value)


def test_percentile_inversion_names_row(tmp_path):
    row = good_row("a", 1)
    row[JOB_COLUMNS.index("power_p50")] = 200.0  # p50 above p75
    p = write_rows(tmp_path / "jobs.csv", [good_row("z", 0), row])
    with pytest.raises(RowError) as info:
        load_job_records(p)
    assert info.value.row == 3
    assert info.value.field == "power_p75"


def test_every_bad_row_is_reported(tmp_path):
    bad1, bad2 = good_row("a", 2), good_row("b", 0)
    bad2[2] = "nan"
    p = write_rows(tmp_path / "jobs.csv", [bad1, good_row("ok", 0), bad2])
    with pytest.raises(RowError) as info:
        load_job_records(p)
    assert "2 invalid row(s)" in str(info.value)
    assert info.value.row == 2


def test_duplicate_job_id(tmp_path):
    p = write_rows(tmp_path / "jobs.csv", [good_row("a", 1), good_row("a", 0)])
    with pytest.raises(RowError, match="duplicate job_id"):
        load_job_records(p)


def test_short_runtime_rejected(tmp_path):
    row = good_row("a", 1)
    row[2] = 0.001
    with pytest.raises(RowError, match="sampling interval"):
        load_job_records(write_rows(tmp_path / "jobs.csv", [row, good_row("b", 0)]))


def test_schema_errors(tmp_path):
    with pytest.raises(SchemaError, match="power_max"):
        load_job_records(write_rows(tmp_path / "a.csv", [], header=JOB_COLUMNS[:-1]))
    partial = [c for c in JOB_COLUMNS if c != "util_p90"]
    with pytest.raises(SchemaError, match="partial"):
        load_job_records(write_rows(tmp_path / "b.csv", [], header=partial))
    with pytest.raises(SchemaError, match="unknown"):
        load_job_records(write_rows(tmp_path / "c.csv", [], header=JOB_COLUMNS + ["gpu_model"]))


def test_empty_inputs(tmp_path):
    (tmp_path / "empty.csv").write_text("", encoding="utf-8")
    with pytest.raises(EmptyDataset):
        load_job_records(tmp_path / "empty.csv")
    with pytest.raises(EmptyDataset):
        load_job_records(write_rows(tmp_path / "header.csv", []))
    with pytest.raises(IoError):
        load_job_records(tmp_path / "missing.csv")


def same_to_6_digits(a, b):
    return float(fmt(a)) == float(fmt(b))


@pytest.mark.parametrize("case", ["synthetic", "fixture", "lite"])
def test_job_round_trip(tmp_path, case):
    if case == "fixture":
        capped, uncapped, _ = load_job_records(DATA / "five_jobs.csv")
    else:
        capped, uncapped, _ = generate_cohorts(SynthConfig(n_jobs=60, seed=4))
    manifest = write_job_records([capped, uncapped], tmp_path / "a.csv", lite=(case == "lite"))
    c2, u2, m2 = load_job_records(tmp_path / "a.csv")
    assert m2.is_lite == (case == "lite") == manifest.is_lite
    before = {r.job_id: r for r in list(capped) + list(uncapped)}
    after = {r.job_id: r for r in list(c2) + list(u2)}
    assert before.keys() == after.keys()
    for jid, r in before.items():
        q = after[jid]
        assert q.capped == r.capped and same_to_6_digits(q.runtime, r.runtime)
        for metric in ("utilization", "temperature", "power"):
            for stat in STAT_FIELDS:
                v = getattr(q, metric).get(stat)
                if case == "lite" and stat in ("p10", "p90"):
                    assert v is None
                else:
                    assert same_to_6_digits(v, getattr(r, metric).get(stat))
    # second write is byte-identical to the first
    write_job_records([c2, u2], tmp_path / "b.csv", lite=(case == "lite"))
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_lite_profile_header(tmp_path):
    capped, uncapped, _ = generate_cohorts(SynthConfig(n_jobs=8, seed=1))
    write_job_records([capped, uncapped], tmp_path / "lite.csv", lite=True)
    header = (tmp_path / "lite.csv").read_text().splitlines()[0].split(",")
    assert header == LITE_COLUMNS
    c, u, m = load_job_records(tmp_path / "lite.csv")
    assert m.schema_version == "jobs-lite/1"
    with pytest.raises(KeyError):
        c.values("power.p90")
    # lite records cannot go back to the full schema
    with pytest.raises(DataError):
        write_job_records([c, u], tmp_path / "full.csv", lite=False)


def test_unwritable_path(tmp_path):
    capped, uncapped, _ = generate_cohorts(SynthConfig(n_jobs=8, seed=1))
    with pytest.raises(IoError):
        write_job_records([capped, uncapped], tmp_path / "no" / "such" / "dir.csv")


RAW_HEADER = "job_id,gpu_index,t_ms,util_pct,temp_c,power_w\n"


def test_raw_one_job_one_gpu(tmp_path):
    p = tmp_path / "raw.csv"
    p.write_text(RAW_HEADER + "j,0,0,10,40,50\nj,0,100,20,41,60\nj,0,200,30,42,70\n")
    (s,) = load_sample_series(p)
    assert len(s) == 3 and s.power.tolist() == [50.0, 60.0, 70.0]


def test_raw_interleaved_gpus(tmp_path):
    p = tmp_path / "raw.csv"
    p.write_text(RAW_HEADER + "j,1,0,10,40,50\nj,0,0,20,41,60\nj,1,100,30,42,70\nj,0,100,40,43,80\n")
    s0, s1 = load_sample_series(p)
    assert (s0.gpu_index, s1.gpu_index) == (0, 1)
    assert s0.power.tolist() == [60.0, 80.0] and s1.power.tolist() == [50.0, 70.0]
    (rec,) = job_records_from_series([s0, s1], capped_jobs={"j"})
    assert rec.capped and rec.power.mean == 65.0


def test_raw_duplicate_timestamp(tmp_path):
    p = tmp_path / "raw.csv"
    p.write_text(RAW_HEADER + "j,0,0,10,40,50\nj,0,0,20,41,60\n")
    with pytest.raises(MalformedSeries, match="duplicate"):
        load_sample_series(p)


def test_raw_round_trip_long_job(tmp_path):
    capped, _, _ = generate_cohorts(SynthConfig(n_jobs=8, seed=2))
    job = capped.records[0]
    series = [generate_raw_series(SynthConfig(seed=2), job, n_samples=50, gpu_index=g) for g in (0, 1)]
    # offset far enough that 6 significant digits would collapse neighbouring samples
    shifted = [type(s)(s.job_id, s.gpu_index, s.timestamps + 123_456_700.0, s.utilization, s.temperature, s.power)
               for s in series]
    n = write_sample_series(shifted, tmp_path / "raw.csv")
    assert n == 100
    back = load_sample_series(tmp_path / "raw.csv")
    for a, b in zip(shifted, back):
        assert np.array_equal(a.timestamps, b.timestamps)
        assert all(same_to_6_digits(x, y) for x, y in zip(a.power, b.power))


def test_raw_span_shorter_than_interval(tmp_path):
    p = tmp_path / "raw.csv"
    p.write_text(RAW_HEADER + "j,0,0,10,40,50\nj,0,50,20,41,60\n")
    with pytest.raises(RowError):
        job_records_from_series(load_sample_series(p), capped_jobs=())


def test_cohort_values_match_file(tmp_path):
    capped, uncapped, _ = load_job_records(DATA / "five_jobs.csv")
    assert isinstance(capped, Cohort)
    assert capped.values("power.mean").tolist() == [70.0, 110.0]
    assert math.isclose(uncapped.values("runtime").sum(), 188.25)
