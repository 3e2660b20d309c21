import csv
import json
import math
import shutil
import subprocess
import sys

import numpy as np
import pytest

from conftest import EXAMPLES
from oracles import cube_gap
from reebtop import __version__
from reebtop.cli import main


def run(tmp_path, *argv, name="out"):
    out = tmp_path / name
    code = main([*argv, "--output-dir", str(out)])
    return code, out


def load(path):
    return json.loads(path.read_text())


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# reebtop ")
    rows = list(csv.reader(lines[1:]))
    return rows[0], np.array(rows[1:], dtype=float)


# --- body -----------------------------------------------------------------------------


def test_body_build_cube(tmp_path):
    code, out = run(tmp_path, "body", "build", "--cube-p", "8")
    assert code == 0
    spec = load(out / "body.json")
    assert spec["kind"] == "pnorm_cube" and spec["p"] == 8
    assert spec["provenance"]["reebtop_version"] == __version__


def test_body_build_variants(tmp_path):
    code, out = run(tmp_path, "body", "build", "--polytope", str(EXAMPLES / "cube.json"), "--sharpness", "6",
                    "--out", str(tmp_path / "smooth.json"))
    assert code == 0
    spec = load(tmp_path / "smooth.json")
    assert spec["kind"] == "smoothed_polytope" and spec["sharpness"] == 6
    code, out = run(tmp_path, "body", "build", "--quadric-diag", "1,1,2,2", name="q")
    assert code == 0 and load(out / "body.json")["kind"] == "quadric"
    code, out = run(tmp_path, "body", "build", "--fixture", "chaotic_demo", name="f")
    assert load(out / "body.json")["kind"] == "radial_graph"
    assert run(tmp_path, "body", "build", name="none")[0] == 2


def test_body_distance_p64(tmp_path):
    code, out = run(tmp_path, "body", "distance", "--a", str(EXAMPLES / "cube_p64.json"), "--b", "cube_limit",
                    "--resolution", "100000")
    assert code == 0
    rep = load(out / "distance.json")
    assert rep["value"] == pytest.approx(cube_gap(64), abs=1e-3)
    assert rep["config"]["resolution"] == 100000


def test_body_distance_c1(tmp_path):
    code, out = run(tmp_path, "body", "distance", "--a", "cube_p4", "--b", "cube_p8", "--c1", "--resolution", "2000",
                    "--samples", "200")
    assert code == 0
    rep = load(out / "distance.json")
    assert rep["c1"]["value"] > rep["c0"]["value"] > 0


def test_body_check_rejects_nonpositive_offset(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps([{"normal": [1, 0, 0, 0], "offset": 1.0}, {"normal": [-1, 0, 0, 0], "offset": 0.0}]))
    code, _ = run(tmp_path, "body", "check", "--body", str(bad))
    assert code == 2


@pytest.mark.parametrize("body", ["cube_p4", str(EXAMPLES / "small_graph.json"), str(EXAMPLES / "cube.json")])
def test_body_check_passes(tmp_path, body):
    code, out = run(tmp_path, "body", "check", "--body", body, "--samples", "500")
    assert code == 0
    rep = load(out / "check.json")
    assert rep["passed"] and all(c["passed"] for c in rep["checks"])


# --- flow --------------------------------------------------------------------------------


def test_flow_hopf_return(tmp_path):
    code, out = run(tmp_path, "flow", "integrate", "--body", str(EXAMPLES / "cube_p2.json"), "--field", "reeb",
                    "--T", "3.14159265358979")
    assert code == 0
    assert load(out / "flow_summary.json")["return_distance"] <= 1e-7
    assert (out / "flow.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_flow_zero_horizon(tmp_path):
    code, out = run(tmp_path, "flow", "integrate", "--body", "cube_p4", "--T", "0")
    assert code == 0
    header, rows = read_csv(out / "flow.csv")
    assert header == ["t", "x1", "y1", "x2", "y2", "G_drift", "H_drift", "F1_drift", "F2_drift", "log_stretch"]
    assert rows.shape[0] == 1
    assert rows[0, 0] == 0.0


def test_flow_reparametrize_doubles_time(tmp_path):
    args = ["--body", "cube_p4", "--T", "10", "--seed", "3"]
    code, out = run(tmp_path, "flow", "reparametrize", *args)
    assert code == 0
    summary = load(out / "reparametrized_summary.json")
    assert summary["time_ratio"] == pytest.approx(2.0, rel=1e-8)
    _, rep = read_csv(out / "reparametrized.csv")
    code, ham_out = run(tmp_path, "flow", "integrate", *args, "--field", "hamiltonian", name="ham")
    _, ham = read_csv(ham_out / "flow.csv")
    np.testing.assert_allclose(rep[:, 0], 2.0 * ham[:, 0], rtol=1e-8)
    np.testing.assert_array_equal(rep[:, 1:5], ham[:, 1:5])


def test_flow_backwards(tmp_path):
    code, out = run(tmp_path, "flow", "integrate", "--body", "cube_p2", "--T", "-1.0")
    assert code == 0
    _, rows = read_csv(out / "flow.csv")
    assert rows[-1, 0] == -1.0


def test_flow_tangent(tmp_path):
    code, out = run(tmp_path, "flow", "tangent", "--body", "cube_p2", "--T", "50", "--x0", "1,0,0,0",
                    "--v0", "0,0,1,0")
    assert code == 0
    summary = load(out / "tangent_summary.json")
    assert abs(summary["lyapunov"]) <= 1e-3
    assert summary["max_tangency_defect"] <= 1e-6
    header, rows = read_csv(out / "tangent.csv")
    assert header[5:9] == ["v1", "v2", "v3", "v4"]
    assert (out / "tangent.png").exists()


def test_integration_failure_exit_and_dump(tmp_path):
    code, out = run(tmp_path, "flow", "integrate", "--body", "cube_p4", "--T", "10", "--max-steps", "5")
    assert code == 4
    dump = load(out / "failure.json")
    assert len(dump["last_state"]) == 4 and 0 < dump["last_time"] < 10


def test_degenerate_tangent_vector_rejected(tmp_path):
    # v0 along the gradient has no tangent part
    code, _ = run(tmp_path, "flow", "tangent", "--body", "cube_p2", "--x0", "1,0,0,0", "--v0", "1,0,0,0")
    assert code == 2


# --- entropy ---------------------------------------------------------------------------------


def test_entropy_estimate_small(tmp_path):
    code, out = run(tmp_path, "entropy", "estimate", "--body", "cube_p4", "--N", "3", "--T", "20", "--seed", "1")
    assert code == 0
    rep = load(out / "entropy.json")
    assert rep["method"] == "lyapunov" and rep["n_samples"] == 3
    assert rep["config"]["N"] == 3 and rep["config"]["seed"] == 1
    assert rep["estimator_config"]["T"] == 20.0
    header, rows = read_csv(out / "entropy_samples.csv")
    assert header == ["sample", "value", "liouville_weight"]
    np.testing.assert_array_equal(rows[:, 1], rep["per_sample"])


def test_entropy_unreliable_still_exits_zero(tmp_path):
    code, out = run(tmp_path, "entropy", "estimate", "--body", "cube_p4", "--N", "3", "--T", "10", "--max-steps", "5")
    assert code == 0
    rep = load(out / "entropy.json")
    assert rep["unreliable"] is True and rep["excluded"] == [0, 1, 2]


def test_entropy_separated_set(tmp_path):
    code, out = run(tmp_path, "entropy", "estimate", "--body", "cube_p2", "--method", "separated-set", "--N", "50",
                    "--T", "20", "--eps", "0.1", "--segments", "20")
    assert code == 0
    rep = load(out / "entropy.json")
    assert rep["method"] == "separated-set" and rep["value"] <= 0.05
    assert rep["count"] >= rep["count_initial"] >= 1


def test_geodesic_rejects_nondifferentiable_metric(tmp_path):
    code, _ = run(tmp_path, "entropy", "geodesic", "--metric", str(EXAMPLES / "weierstrass.json"), "--N", "2",
                  "--T", "1")
    assert code == 2


def test_sequence_needs_a_family(tmp_path):
    assert run(tmp_path, "entropy", "sequence", "--schedule", "2,4")[0] == 2
    assert run(tmp_path, "entropy", "sequence", "--family", "chaotic-demo", name="x")[0] == 2


def test_sequence_example(reports):
    out = reports["c1_sequence"]
    rep = load(out / "sequence.json")
    assert rep["schedule"] == [2, 4, 8, 16]
    assert rep["tail_minimum"] <= 0.01
    assert all(e["value"] <= 0.01 for e in rep["estimates"])
    header, rows = read_csv(out / "sequence.csv")
    assert header == ["sharpness", "c0_distance", "entropy_value", "stderr"]
    np.testing.assert_allclose(rows[:, 1], [cube_gap(p) for p in (2, 4, 8, 16)], atol=1e-3)
    assert (out / "sequence.png").exists()


def test_chaotic_estimate_example(reports):
    rep = load(reports["c7_seed7"] / "entropy.json")
    assert rep["value"] > 3 * rep["stderr"]


def test_flat_geodesic_example(reports):
    rep = load(reports["c8_flat"] / "geodesic_entropy.json")
    assert rep["value"] <= 0.01


def test_reports_embed_echo_and_version(reports):
    for d in reports.values():
        for p in d.glob("*.json"):
            if p.name == "run_metadata.json":
                continue
            rep = load(p)
            assert rep["reebtop_version"] == __version__
            assert "config" in rep and "seed" in rep["config"]
        for p in d.glob("*.csv"):
            assert p.read_text().startswith(f"# reebtop {__version__} config=")


# --- configuration ----------------------------------------------------------------------------


def test_config_file_layering(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"version": 1, "seed": 5, "flow": {"body": "cube_p2", "T": 2.0, "rtol": 1e-9}}))
    code, out = run(tmp_path, "flow", "integrate", "--config", str(cfg), "--T", "1.0")
    assert code == 0
    echo = load(out / "flow_summary.json")["config"]
    assert echo["T"] == 1.0 and echo["rtol"] == 1e-9 and echo["seed"] == 5 and echo["body"] == "cube_p2"


def test_example_run_config_validates(tmp_path):
    code, out = run(tmp_path, "entropy", "estimate", "--config", str(EXAMPLES / "run_config.json"), "--body",
                    "cube_p2", "--N", "2", "--T", "5")
    assert code == 0
    rep = load(out / "entropy.json")
    assert rep["seed"] == 7


@pytest.mark.parametrize(
    "cfg",
    [{"version": 1, "colour": "red"}, {"version": 1, "flow": {"speed": 2}}, {"version": 2}, {"version": 1, "seed": -1}],
)
def test_bad_config_exit_2(tmp_path, cfg):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(cfg))
    code, _ = run(tmp_path, "flow", "integrate", "--body", "cube_p2", "--config", str(path))
    assert code == 2


def test_missing_config_and_bad_json(tmp_path):
    assert run(tmp_path, "flow", "integrate", "--config", str(tmp_path / "nope.json"))[0] == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert run(tmp_path, "flow", "integrate", "--config", str(bad))[0] == 2


def test_bad_body_spec_exit_2(tmp_path):
    bad = tmp_path / "body.json"
    bad.write_text(json.dumps({"kind": "pnorm_cube", "p": "four"}))
    assert run(tmp_path, "flow", "integrate", "--body", str(bad))[0] == 2


def test_failed_body_check_exit_3(tmp_path):
    half = tmp_path / "half.json"
    # every normal leans towards +x1, so the region is unbounded along -x1
    normals = [[1, 0, 0, 0], [1, 1, 0, 0], [1, -1, 0, 0], [1, 0, 1, 0], [1, 0, -1, 0]]
    half.write_text(json.dumps([{"normal": n, "offset": 1.0} for n in normals]))
    code, out = run(tmp_path, "body", "check", "--body", str(half))
    assert code == 3
    rep = load(out / "check.json")
    assert not rep["passed"] and rep["checks"][0]["check"] == "starshaped"


def test_construction_error_exit_3(tmp_path):
    code, _ = run(tmp_path, "entropy", "sequence", "--polytope", str(EXAMPLES / "cube.json"), "--scheme",
                  "log-sum-exp", "--schedule", "1e-13", "--N", "2", "--T", "1")
    assert code == 3


def test_argparse_errors_exit_2(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["flow", "integrate", "--T", "abc"])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        main(["--config", "x.json", "flow", "integrate"])
    assert info.value.code == 2


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("REEBTOP_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["body", "build", "--cube-p", "4"]) == 0
    assert (tmp_path / "env" / "body.json").exists()
    assert (tmp_path / "env" / "run_metadata.json").exists()


def test_metadata_isolated_from_reports(tmp_path):
    code, out = run(tmp_path, "body", "build", "--cube-p", "4")
    meta = load(out / "run_metadata.json")
    assert "started_utc" in meta and "elapsed_seconds" in meta
    assert "started_utc" not in (out / "body.json").read_text()


@pytest.mark.skipif(shutil.which("reebtop") is None, reason="console script not installed")
def test_console_script(tmp_path):
    res = subprocess.run(["reebtop", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and __version__ in res.stdout
    res = subprocess.run([sys.executable, "-m", "reebtop.cli", "body", "build", "--cube-p", "2", "--output-dir",
                          str(tmp_path)], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert math.isclose(load(tmp_path / "body.json")["p"], 2)
