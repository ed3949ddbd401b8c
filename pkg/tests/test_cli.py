"""Command-line behaviour: exit codes, file formats, round trips, manifests."""

import csv
import hashlib
import json

import numpy as np
import pytest

from lhs_zest import ValidationError
from lhs_zest.cli import parse_and_dispatch, parse_sizes, read_design_csv


def run(*argv):
    return parse_and_dispatch(list(argv))


def test_sample_smallest_case(tmp_path):
    out = tmp_path / "d.csv"
    code = run("sample", "--method", "lhs", "--n", "4", "--d", "2",
               "--seed", "7", "--out", str(out))
    assert code == 0
    with open(out) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["x1", "x2"]
    pts = np.array([[float(v) for v in r] for r in rows[1:]])
    assert pts.shape == (4, 2)
    for j in range(2):
        assert sorted(np.floor(pts[:, j] * 4).astype(int).tolist()) == [0, 1, 2, 3]


def test_validation_error_names_flag(tmp_path, capsys):
    code = run("fit", "--model", "poisson-log-d9", "--method", "lhs",
               "--n", "0", "--seed", "1", "--out", str(tmp_path / "f.json"))
    assert code == 1
    err = capsys.readouterr().err
    assert "--n" in err


def test_unknown_flag_and_model(tmp_path, capsys):
    assert run("sample", "--bogus", "1") == 1
    code = run("fit", "--model", "no-such-model", "--method", "lhs",
               "--n", "10", "--seed", "1", "--out", str(tmp_path / "f.json"))
    assert code == 1
    assert "no-such-model" in capsys.readouterr().err


def test_sizes_expansion():
    assert parse_sizes("40:100:10") == (40, 50, 60, 70, 80, 90, 100)
    assert parse_sizes("50,250,1000") == (50, 250, 1000)
    assert parse_sizes("4:9:4") == (4, 8)
    with pytest.raises(ValidationError):
        parse_sizes("100:40:10")
    with pytest.raises(ValidationError):
        parse_sizes("40:100")
    with pytest.raises(ValidationError):
        parse_sizes("a:b:c")


def test_design_roundtrip_exact(tmp_path):
    out = tmp_path / "d.csv"
    run("sample", "--method", "lhs", "--n", "32", "--d", "3",
        "--seed", "123", "--out", str(out))
    from lhs_zest import StreamKey, generate

    mem = generate("lhs", 32, 3, StreamKey(master_seed=123))
    back = read_design_csv(out)
    assert np.array_equal(back.points, mem.points)


def test_fit_writes_report(tmp_path):
    out = tmp_path / "fit.json"
    data = tmp_path / "data.csv"
    code = run("fit", "--model", "poisson-log-d1", "--method", "lhs",
               "--n", "500", "--seed", "3", "--lhs-cov-budget", "20000",
               "--dump-data", str(data), "--out", str(out))
    assert code == 0
    payload = json.loads(out.read_text())
    assert payload["converged"]
    assert abs(payload["theta_hat"][0] - 1.0) < 0.3
    assert payload["sandwich_lhs"] is not None
    assert payload["residual_norm"] <= 1e-10
    with open(data) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["x1", "z"]
    assert len(rows) == 501
    assert all(float(r[1]) == int(float(r[1])) for r in rows[1:])


def test_decompose_and_manifest_digests(tmp_path):
    out = tmp_path / "dec.json"
    code = run("decompose", "--field", "x1x2", "--outer", "20000",
               "--bins", "32", "--inner", "256", "--seed", "5",
               "--out", str(out))
    assert code == 0
    payload = json.loads(out.read_text())
    assert abs(payload["R"][0][0] - 1 / 144) / (1 / 144) < 0.2
    manifest = json.loads((tmp_path / "dec.json.manifest.json").read_text())
    digest = hashlib.sha256(out.read_bytes()).hexdigest()
    assert manifest["outputs"]["dec.json"] == digest
    assert manifest["command"] == "decompose"


def test_decompose_rejects_unknown_field(tmp_path, capsys):
    code = run("decompose", "--field", "nope", "--seed", "5",
               "--out", str(tmp_path / "x.json"))
    assert code == 1
    assert "nope" in capsys.readouterr().err


def test_decompose_design_file_dimension_check(tmp_path, capsys):
    d1 = tmp_path / "d1.csv"
    run("sample", "--method", "lhs", "--n", "8", "--d", "1", "--seed", "2",
        "--out", str(d1))
    code = run("decompose", "--field", "x1x2", "--design-file", str(d1),
               "--seed", "2", "--out", str(tmp_path / "o.json"))
    assert code == 1


def test_experiment_outputs_and_determinism(tmp_path):
    def launch(outdir):
        return run(
            "experiment", "--model", "uniform-mean-d1", "--methods", "lhs,iid",
            "--sizes", "4:8:4", "--reps", "60", "--seed", "99",
            "--oracle-budget", "20000", "--threads", "2",
            "--outdir", str(outdir),
        )

    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert launch(out1) == 0
    assert launch(out2) == 0
    names = ["sweep.csv", "oracle.json", "qq_4.csv", "qq_8.csv"]
    for name in names:
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
    m1 = json.loads((out1 / "manifest.json").read_text())
    m2 = json.loads((out2 / "manifest.json").read_text())
    assert m1["outputs"] == m2["outputs"]
    for name in names:
        digest = hashlib.sha256((out1 / name).read_bytes()).hexdigest()
        assert m1["outputs"][name] == digest

    with open(out1 / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["method"] for r in rows} == {"lhs", "iid"}
    assert {int(r["n"]) for r in rows} == {4, 8}
    for r in rows:
        assert float(r["mse"]) == float(r["variance"]) + float(r["sq_bias"])


def test_qq_command(tmp_path):
    out = tmp_path / "qq.csv"
    code = run("qq", "--model", "uniform-mean-d1", "--n", "256", "--reps", "50",
               "--seed", "4", "--standardization", "empirical",
               "--out", str(out))
    assert code == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 50
    ps = [float(r["p"]) for r in rows]
    assert ps[0] == pytest.approx(0.01) and ps[-1] == pytest.approx(0.99)


def test_seventeen_digit_floats_roundtrip(tmp_path):
    out = tmp_path / "d.csv"
    run("sample", "--method", "iid", "--n", "64", "--d", "2", "--seed", "11",
        "--out", str(out))
    text1 = out.read_text()
    run("sample", "--method", "iid", "--n", "64", "--d", "2", "--seed", "11",
        "--out", str(out))
    assert out.read_text() == text1
