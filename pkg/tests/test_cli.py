from __future__ import annotations

import json

import numpy as np
import pandas as pd
import pytest
from conftest import K401_CONTINUOUS, synthetic_401k

from cfdbal.cli import ColumnSpec, RunConfig, ingest_csv, main, run_estimate
from cfdbal.errors import ColumnError, MissingValueError, ParseError, ScalingError, ValidationError


def _write(tmp_path, df, name="d.csv"):
    p = tmp_path / name
    df.to_csv(p, index=False)
    return p


@pytest.fixture
def small_csv(tmp_path):
    r = np.random.default_rng(0)
    n = 80
    z = (r.random(n) < 0.5).astype(int)
    z[:2] = [1, 0]
    a = z * (r.random(n) < 0.8)
    a[0] = 1
    df = pd.DataFrame({
        "y": np.round(r.normal(size=n) + a, 6),
        "z": z,
        "a": a,
        "x1": np.round(r.normal(size=n), 6),
        "x2": np.round(r.uniform(10, 20, n), 6),
        "b": r.integers(0, 2, n),
    })
    return _write(tmp_path, df)


def _cfg(path, **kw):
    base = dict(data=str(path), outcome="y", treatment="z", receipt="a",
                covariates=["x1", "x2", "b"], continuous=["x1", "x2"], ci="none")
    base.update(kw)
    return RunConfig(**base)


def test_min_max_example(tmp_path):
    p = _write(tmp_path, pd.DataFrame({"z": [1, 0, 1], "x": [10, 20, 30]}))
    data, meta = ingest_csv(p, ColumnSpec(treatment="z", covariates=("x",), continuous=("x",)))
    assert np.array_equal(data.X[:, 0], [0.0, 0.5, 1.0])
    assert meta["scaling"] == {"x": {"min": 10.0, "max": 30.0}}


def test_constant_column(tmp_path):
    p = _write(tmp_path, pd.DataFrame({"z": [1, 0, 1], "x": [4, 4, 4]}))
    with pytest.raises(ScalingError, match="'x'"):
        ingest_csv(p, ColumnSpec(treatment="z", covariates=("x",), continuous=("x",)))


def test_missing_values_listed(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("z,x\n1,1.0\n0,\n1,3.0\n0,\n")
    with pytest.raises(MissingValueError, match="rows 2, 4"):
        ingest_csv(p, ColumnSpec(treatment="z", covariates=("x",)))


def test_non_binary_row_number(tmp_path):
    p = tmp_path / "b.csv"
    p.write_text("z,x\n1,1.0\n0,2.0\n2,3.0\n")
    with pytest.raises(ParseError, match="row 3"):
        ingest_csv(p, ColumnSpec(treatment="z", covariates=("x",)))


def test_missing_column_and_file(tmp_path, small_csv):
    with pytest.raises(ColumnError, match="nope"):
        ingest_csv(small_csv, ColumnSpec(treatment="z", covariates=("nope",)))
    with pytest.raises(ValidationError):
        ingest_csv(tmp_path / "absent.csv", ColumnSpec(treatment="z", covariates=("x1",)))


def test_401k_style_ingest(tmp_path):
    raw = synthetic_401k(500, 1)
    p = _write(tmp_path, raw)
    covs = ["age", "inc", "fsize", "educ", "db", "marr", "twoearn", "pira", "hown"]
    data, meta = ingest_csv(p, ColumnSpec("net_tfa", "e401", "p401", tuple(covs), tuple(K401_CONTINUOUS)))
    assert data.X.shape == (500, 9)
    assert set(meta["scaling"]) == set(K401_CONTINUOUS)
    for j, c in enumerate(covs):
        if c in K401_CONTINUOUS:
            assert data.X[:, j].min() == 0.0 and data.X[:, j].max() == 1.0
            s = meta["scaling"][c]
            # the recorded parameters reproduce the scaled column exactly
            assert np.array_equal((raw[c].to_numpy(float) - s["min"]) / (s["max"] - s["min"]), data.X[:, j])
        else:
            assert np.array_equal(data.X[:, j], raw[c].to_numpy(float))


def test_row_order_preserved(small_csv):
    data, _ = ingest_csv(small_csv, ColumnSpec("y", "z", "a", ("x1",)))
    assert np.array_equal(data.y, pd.read_csv(small_csv)["y"].to_numpy())


def test_late_with_perfect_compliance_equals_ate(tmp_path, small_csv):
    df = pd.read_csv(small_csv)
    df["a"] = df["z"]
    p = _write(tmp_path, df, "pc.csv")
    late = run_estimate(_cfg(p))["estimate"]["value"]
    ate = run_estimate(_cfg(p, estimand="ate", receipt=None))["estimate"]["value"]
    assert late == pytest.approx(ate, abs=1e-12)


def test_uniform_is_wald_ratio(small_csv):
    df = pd.read_csv(small_csv)
    g1, g0 = df[df.z == 1], df[df.z == 0]
    wald = (g1.y.mean() - g0.y.mean()) / (g1.a.mean() - g0.a.mean())
    out = run_estimate(_cfg(small_csv, weights="uniform"))
    assert out["estimate"]["value"] == pytest.approx(wald, rel=1e-12)


def test_estimate_output_and_round_trip(tmp_path, small_csv, capsys):
    out1 = tmp_path / "r1.json"
    rc = main(["estimate", "--data", str(small_csv), "--outcome", "y", "--treatment", "z",
               "--receipt", "a", "--covariates", "x1,x2,b", "--continuous", "x1,x2",
               "--ci", "both", "--replications", "100", "--subsample-size", "25",
               "--seed", "3", "--out", str(out1)])
    assert rc == 0
    r1 = json.loads(out1.read_text())
    assert {"version", "config", "estimate", "intervals", "diagnostics", "data"} <= set(r1)
    assert r1["diagnostics"]["solver"]["status"] == "solved"
    for ci in r1["intervals"].values():
        assert ci["lower"] <= ci["upper"]
    out2 = tmp_path / "r2.json"
    assert main(["estimate", "--config", str(out1), "--out", str(out2)]) == 0
    r2 = json.loads(out2.read_text())
    assert r2["estimate"] == r1["estimate"] and r2["intervals"] == r1["intervals"]
    assert r2["config"]["out"] == str(out2)


def test_flags_override_config(tmp_path, small_csv):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps(dict(_cfg(small_csv).to_dict(), weights="uniform")))
    out = tmp_path / "o.json"
    assert main(["estimate", "--config", str(conf), "--weights", "ipw", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["config"]["weights"] == "ipw"


def test_unknown_config_key(tmp_path, small_csv, capsys):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"data": str(small_csv), "bogus": 1}))
    assert main(["estimate", "--config", str(conf)]) == 2


def test_exit_codes(tmp_path, small_csv, capsys):
    rc = main(["estimate", "--data", str(small_csv), "--outcome", "y", "--receipt", "a",
               "--covariates", "x1,missing"])
    assert rc == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"]["type"] == "ColumnError" and "missing" in err["error"]["message"]
    df = pd.read_csv(small_csv)
    df["a"] = 0
    p = _write(tmp_path, df, "weak.csv")
    rc = main(["estimate", "--data", str(p), "--outcome", "y", "--receipt", "a",
               "--covariates", "x1", "--ci", "none", "--weights", "uniform"])
    assert rc == 3
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"]["type"] == "WeakInstrumentError"


def test_weights_command(tmp_path, small_csv, capsys):
    wcsv = tmp_path / "w.csv"
    rc = main(["weights", "--data", str(small_csv), "--covariates", "x1,x2,b",
               "--continuous", "x1,x2", "--density", "energy", "--out", str(wcsv)])
    assert rc == 0
    w = pd.read_csv(wcsv)
    z = pd.read_csv(small_csv)["z"].to_numpy()
    assert list(w.columns) == ["row_id", "weight"]
    assert w.weight[z == 1].sum() == pytest.approx(z.sum(), rel=1e-6)
    assert w.weight[z == 0].sum() == pytest.approx((1 - z).sum(), rel=1e-6)
    diag = json.loads(capsys.readouterr().out)["diagnostics"]
    assert diag["objective_after"] <= diag["objective_before"] + 1e-8
    assert diag["cfd_after"]["total_three_way"] < diag["cfd_before"]["total_three_way"]


def test_kernel_check(tmp_path, small_csv, capsys):
    out = tmp_path / "k.json"
    rc = main(["kernel-check", "--data", str(small_csv), "--covariates", "x1,x2",
               "--density", "laplacian", "--rf-check", "--out", str(out)])
    assert rc == 0
    g = json.loads(out.read_text())["gram"]
    assert g["psd"] and g["symmetric"] and g["diag_min"] == 1.0
    assert g["rf_max_abs_error"] < 0.1


def test_simulate_command(tmp_path, capsys):
    rc = main(["simulate", "--scenario", "linear", "--n", "40", "--reps", "2",
               "--methods", "uniform,oracle", "--ci", "none", "--oracle-m", "1000000",
               "--out", str(tmp_path / "st")])
    assert rc == 0
    table = pd.read_csv(tmp_path / "st" / "study.csv")
    assert list(table.method) == ["uniform", "oracle"]
    assert table.loc[1, "bias_x100"] == 0.0


def test_401k_style_estimate(tmp_path):
    p = _write(tmp_path, synthetic_401k(300, 2), "k.csv")
    cfg = RunConfig(data=str(p), outcome="net_tfa", treatment="e401", receipt="p401",
                    covariates=["age", "inc", "fsize", "educ", "db", "marr", "twoearn", "pira", "hown"],
                    continuous=K401_CONTINUOUS, ci="both", replications=100, subsample_size=40)
    out = run_estimate(cfg)
    assert np.isfinite(out["estimate"]["value"])
    assert set(out["intervals"]) == {"subsampling", "bootstrap"}
    assert out["config"] == cfg.to_dict()
