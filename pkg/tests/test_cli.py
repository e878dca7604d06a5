from __future__ import annotations

import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from threshsplit.cli import main
from threshsplit.simulation import SimConfig, gen_dgp, rng_stream


@pytest.fixture(scope="module")
def sample_csv(tmp_path_factory):
    data, _ = gen_dgp(SimConfig(n=150, delta=4.0), rng_stream(0, 0))
    path = tmp_path_factory.mktemp("data") / "sample.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y", "x2", "q", "s"])
        for row in zip(data.y, data.X[:, 1], data.q, data.s):
            w.writerow([repr(float(v)) for v in row])
    return path


def _base(cmd, path, out):
    return [cmd, "--data", str(path), "--y", "y", "--x", "x2", "--q", "q", "--s", "s", "--out-dir", str(out)]


def _read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_estimate_writes_curve_fit_and_manifest(sample_csv, tmp_path):
    code = main(_base("estimate", sample_csv, tmp_path) + ["--c", "2", "--n-grid", "12", "--ci-level", "0.9"])
    assert code == 0
    rows = _read_csv(tmp_path / "curve.csv")
    assert len(rows) == 12
    assert set(rows[0]) == {"s", "gamma_hat", "sse", "effective_n", "ci_lo", "ci_hi"}
    for r in rows:
        if r["ci_lo"]:
            assert float(r["ci_lo"]) <= float(r["gamma_hat"]) <= float(r["ci_hi"])
    fit = json.loads((tmp_path / "fit.json").read_text())
    assert {"theta", "vcov", "bandwidth", "window"} <= set(fit)
    assert fit["x_names"] == ["const", "x2"] and fit["n"] == 150
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["command"] == "estimate" and man["backend"] in ("numba", "numpy")
    assert man["seed"] == 42 and man["outputs"]


def test_manifest_replay_reproduces_outputs(sample_csv, tmp_path):
    assert main(_base("estimate", sample_csv, tmp_path) + ["--bn", "0.3", "--n-grid", "8"]) == 0
    first = {p: (tmp_path / p).read_bytes() for p in ("curve.csv", "fit.json")}
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert main(man["argv"]) == 0
    for p, blob in first.items():
        assert (tmp_path / p).read_bytes() == blob


def test_lr_test_command(sample_csv, tmp_path):
    args = _base("test", sample_csv, tmp_path) + ["--c", "2", "--s", "0", "--gamma-null", "0"]
    # here --s is the evaluation point and the column goes through --s-col
    args[args.index("--s")] = "--s-col"
    assert main(args) == 0
    res = json.loads((tmp_path / "test.json").read_text())
    assert res["lr_stat"] >= 0 and isinstance(res["reject"], bool)
    assert main(args + ["--mode", "scaled"]) == 0


def test_ci_command(sample_csv, tmp_path):
    assert main(_base("ci", sample_csv, tmp_path) + ["--c", "2", "--n-grid", "5"]) == 0
    rows = _read_csv(tmp_path / "ci.csv")
    assert len(rows) == 5
    for r in rows:
        if r["hull_lo"]:
            assert float(r["hull_lo"]) <= float(r["gamma_hat"]) <= float(r["hull_hi"])


def test_cv_command(tmp_path):
    data, _ = gen_dgp(SimConfig(n=40, delta=4.0), rng_stream(1, 0))
    path = tmp_path / "small.csv"
    data.to_csv(path)
    args = ["cv", "--data", str(path), "--y", "y", "--x", "x2", "--q", "q", "--s", "s",
            "--out-dir", str(tmp_path), "--grid", "4,8", "--no-intercept"]
    # the file already carries the constant column
    args[args.index("--x") + 1] = "const,x2"
    assert main(args) == 0
    res = json.loads((tmp_path / "cv.json").read_text())
    assert res["c_star"] in (4.0, 8.0)
    assert len(_read_csv(tmp_path / "cv.csv")) == 2


def test_contour_command(tmp_path):
    n = 30
    off = (np.arange(n) - n // 2) / n
    dq, ds = np.meshgrid(off, off, indexing="ij")
    img = np.where(dq ** 2 + ds ** 2 <= 0.09, 10.0, 0.0)
    path = tmp_path / "img.csv"
    np.savetxt(path, img, delimiter=",")
    code = main(["contour", "--raster", str(path), "--center", "16,16", "--angles", "16", "--out-dir", str(tmp_path)])
    assert code == 0
    rows = _read_csv(tmp_path / "contour.csv")
    assert len(rows) == 16 and set(rows[0]) == {"angle_deg", "radius", "x", "y"}
    meta = json.loads((tmp_path / "contour.json").read_text())
    assert 0.0 <= meta["implied_quantile"] <= 1.0


def test_simulate_argmax(tmp_path):
    out = tmp_path / "zeta.json"
    assert main(["simulate", "--study", "argmax", "--reps", "200", "--R", "20", "--out", str(out)]) == 0
    assert out.exists() and (tmp_path / "zeta_manifest.json").exists()


def test_simulate_rejection(tmp_path):
    out = tmp_path / "rej.json"
    code = main(["simulate", "--study", "rejection", "--n", "80", "--delta", "3,4", "--reps", "3",
                 "--eval-s", "0", "--out", str(out), "--threads", "1"])
    assert code == 0
    rep = json.loads(out.read_text())
    assert len(rep["cells"]) == 2


@pytest.mark.parametrize("extra", [
    ["--bogus"],
    ["--c", "1", "--bn", "0.1"],
])
def test_usage_errors(sample_csv, tmp_path, extra):
    assert main(_base("estimate", sample_csv, tmp_path) + extra) == 2


def test_usage_error_zero_reps(tmp_path, capsys):
    assert main(["simulate", "--study", "rejection", "--reps", "0", "--out", str(tmp_path / "r.json")]) == 2


def test_missing_file_is_usage_error(tmp_path):
    assert main(_base("estimate", tmp_path / "nope.csv", tmp_path) + ["--c", "1"]) == 2


def test_schema_error_exit_one(sample_csv, tmp_path, capsys):
    args = _base("estimate", sample_csv, tmp_path) + ["--c", "1"]
    args[args.index("--y") + 1] = "missing_column"
    assert main(args) == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "SchemaError" and err["command"] == "estimate"


def test_console_script_with_numpy_backend(sample_csv, tmp_path):
    env = dict(os.environ, THRESHSPLIT_DISABLE_NUMBA="1", THRESHSPLIT_THREADS="1")
    cmd = [sys.executable, "-m", "threshsplit.cli"] + _base("estimate", sample_csv, tmp_path) + ["--c", "2", "--n-grid", "6"]
    res = subprocess.run(cmd, env=env, capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["backend"] == "numpy" and man["threads"] == 1
