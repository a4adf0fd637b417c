"""CLI artifacts: schemas, determinism, caching, exit codes."""

import json
import os
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from radiotwin.cli import main

REPO = Path(__file__).resolve().parents[1]
CANYON = str(REPO / "scenes" / "canyon.json")
SCHEMAS = REPO / "docs" / "schemas"


def _schema(name):
    return json.loads((SCHEMAS / f"{name}.schema.json").read_text())


def _validate(doc_path, schema_name):
    jsonschema.validate(json.loads(Path(doc_path).read_text()), _schema(schema_name))


@pytest.fixture(scope="module")
def coverage_out(tmp_path_factory):
    out = tmp_path_factory.mktemp("cov")
    rc = main(["coverage", CANYON, "--rays", "150000", "--out", str(out)])
    assert rc == 0
    return out


def test_coverage_artifacts(coverage_out):
    assert (coverage_out / "coverage.csv").is_file()
    assert (coverage_out / "coverage.ppm").is_file()
    _validate(coverage_out / "summary.json", "summary")
    summary = json.loads((coverage_out / "summary.json").read_text())
    assert 0.0 <= summary["outage_fraction"] <= 1.0
    header = (coverage_out / "coverage.csv").read_text().splitlines()[0]
    assert header == "x,y,rsrp_dbm,sector_id,beam_index,outage"
    ppm = (coverage_out / "coverage.ppm").read_bytes()
    assert ppm.startswith(b"P6\n")
    nx, ny = summary["grid"]["nx"], summary["grid"]["ny"]
    assert ppm.endswith(bytes(0 for _ in range(0)))  # binary payload present
    assert len(ppm.split(b"\n", 3)[3]) == 3 * nx * ny


def test_scene_schema_accepts_fixture():
    jsonschema.validate(json.loads(Path(CANYON).read_text()), _schema("scene"))


def test_coverage_deterministic(tmp_path, coverage_out):
    out2 = tmp_path / "again"
    rc = main(["coverage", CANYON, "--rays", "150000", "--out", str(out2)])
    assert rc == 0
    for name in ("coverage.csv", "coverage.ppm", "summary.json"):
        assert (out2 / name).read_bytes() == (coverage_out / name).read_bytes()


def test_cache_equivalence(tmp_path, coverage_out):
    cache = tmp_path / "cache"
    out_c1 = tmp_path / "c1"
    out_c2 = tmp_path / "c2"
    rc = main(["coverage", CANYON, "--rays", "150000", "--out", str(out_c1),
               "--cache-dir", str(cache)])
    assert rc == 0
    assert any(cache.glob("*.rtpc"))
    rc = main(["coverage", CANYON, "--rays", "150000", "--out", str(out_c2),
               "--cache-dir", str(cache)])
    assert rc == 0
    for name in ("coverage.csv", "coverage.ppm", "summary.json"):
        uncached = (coverage_out / name).read_bytes()
        assert (out_c1 / name).read_bytes() == uncached
        assert (out_c2 / name).read_bytes() == uncached


def test_plan_artifacts_and_schemas(tmp_path):
    out = tmp_path / "plan"
    rc = main(["plan", CANYON, "--rays", "150000", "--out", str(out),
               "--top-n", "2", "--aperture-sweep", "1.0,2.0"])
    assert rc == 0
    _validate(out / "plan.json", "plan")
    _validate(out / "recovery.json", "recovery")
    rec = json.loads((out / "recovery.json").read_text())
    assert rec["ris_deployed"] <= 2
    assert rec["post_plan_outage_tiles"] <= rec["pre_plan_outage_tiles"]
    sweep = (out / "aperture_sweep.csv").read_text().splitlines()
    assert sweep[0] == "aperture_m,ris_count,recovered,outage_ues,recovery_fraction"
    assert len(sweep) == 3
    for f in ("coverage_pre.ppm", "coverage_post.ppm", "coverage_pre.csv"):
        assert (out / f).is_file()


def test_plan_top_n_zero(tmp_path):
    out = tmp_path / "p0"
    rc = main(["plan", CANYON, "--rays", "100000", "--out", str(out), "--top-n", "0"])
    assert rc == 0
    rec = json.loads((out / "recovery.json").read_text())
    assert rec["ris_deployed"] == 0
    assert rec["recovered"]["total"] == 0


def test_cluster_command(tmp_path):
    out = tmp_path / "cl"
    rc = main(["cluster", CANYON, "--rays", "100000", "--out", str(out)])
    assert rc == 0
    _validate(out / "clusters.json", "clusters")
    doc = json.loads((out / "clusters.json").read_text())
    sizes = [c["size"] for c in doc["clusters"]]
    assert sizes == sorted(sizes, reverse=True)


def test_calibrate_empty_measurements_noop(tmp_path):
    csv = tmp_path / "empty.csv"
    csv.write_text("x,y,rsrp_dbm,cell_id\n")
    out = tmp_path / "cal"
    rc = main(["calibrate", CANYON, "--measurements", str(csv),
               "--steps", "3", "--rays", "50000", "--out", str(out)])
    assert rc == 0
    rep = json.loads((out / "calibration_report.json").read_text())
    _validate(out / "calibration_report.json", "calibration_report")
    assert rep["no_op"]
    # calibrated scene written unchanged and still loads
    jsonschema.validate(
        json.loads((out / "calibrated_scene.json").read_text()), _schema("scene")
    )


def test_calibrate_malformed_rows_counted(tmp_path):
    csv = tmp_path / "m.csv"
    rows = ["x,y,rsrp_dbm,cell_id", "oops,1,2,c"] + [
        f"{30 + 0.31 * i:.2f},-55,-90,c" for i in range(25)
    ]
    csv.write_text("\n".join(rows) + "\n")
    out = tmp_path / "cal2"
    rc = main(["calibrate", CANYON, "--measurements", str(csv),
               "--steps", "2", "--rays", "50000", "--out", str(out)])
    assert rc == 0
    rep = json.loads((out / "calibration_report.json").read_text())
    assert rep["dropped_samples"] == 1


def test_report_command(tmp_path):
    csv = tmp_path / "m.csv"
    rows = ["x,y,rsrp_dbm,cell_id"] + [
        f"{30 + 0.31 * i:.2f},-55,-80,c" for i in range(25)
    ]
    csv.write_text("\n".join(rows) + "\n")
    out = tmp_path / "rep"
    rc = main(["report", CANYON, "--measurements", str(csv),
               "--rays", "50000", "--out", str(out)])
    assert rc == 0
    _validate(out / "validation_report.json", "validation_report")


def test_exit_code_config_error(tmp_path):
    assert main(["coverage", CANYON, "--preset", "3G", "--out", str(tmp_path)]) == 2
    assert main(["coverage", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 3


def test_exit_code_scene_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"buildings": [{"id": "x", "footprint": [[0,0],[1,0],[1,1]], "height": -2}], "bs_sites": []}')
    assert main(["coverage", str(bad), "--out", str(tmp_path / "o")]) == 3


def test_thread_count_independence(coverage_out, tmp_path):
    # identical artifacts under a different BLAS/OpenMP thread budget
    import subprocess
    import sys

    out2 = tmp_path / "threads"
    env = dict(os.environ, OMP_NUM_THREADS="4", OPENBLAS_NUM_THREADS="4")
    r = subprocess.run(
        [sys.executable, "-m", "radiotwin", "coverage", CANYON,
         "--rays", "150000", "--out", str(out2)],
        env=env, capture_output=True, text=True, cwd=str(REPO),
    )
    assert r.returncode == 0, r.stderr
    for name in ("coverage.csv", "coverage.ppm", "summary.json"):
        assert (out2 / name).read_bytes() == (coverage_out / name).read_bytes()
