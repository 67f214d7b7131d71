import json
import math

import numpy as np
import pytest

from qstat import cli
from qstat.bank import LogLikSurface, ThetaGrid, loglik_surface
from qstat.gaussmarkov import GaussianRecord
from qstat.information import fisher_matrix
from qstat.optomech import OptomechConfig

BASE = {
    "optomech": {"g": 0.8, "gamma_a": 4.0, "gamma_b": 1.0, "s_a_prime": 0.5},
    "theta": {"s_a": 0.5, "s_b": 1.0},
    "record": {"dt": 0.2, "duration": 40.0},
    "grid": {"shape": [6, 7]},
    "info": {"theta0": {"s_a": 0.0, "s_b": 1.0}, "theta1": {"s_a": 0.5, "s_b": 1.0},
             "duration": 100.0, "n_omega": 1024},
    "jumps": {"gamma": 1.0, "s": 0.5, "n_samples": 50, "duration": 5.0},
    "seed": 11,
}


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def _run(args, capsys):
    code = cli.main(args)
    out, err = capsys.readouterr()
    return code, out, err


def test_simulate_is_deterministic(tmp_path, capsys):
    cfg = _write(tmp_path, BASE)
    assert _run(["simulate", cfg, "--out", str(tmp_path / "a")], capsys)[0] == 0
    assert _run(["simulate", cfg, "--out", str(tmp_path / "b")], capsys)[0] == 0
    for stem in ("record_minus", "record_plus"):
        for ext in (".csv", ".json"):
            a = (tmp_path / "a" / (stem + ext)).read_bytes()
            assert a == (tmp_path / "b" / (stem + ext)).read_bytes()
    rec = GaussianRecord.read(tmp_path / "a" / "record_minus")
    assert len(rec) == 200 and rec.meta["detuning"] == "red"
    _run(["simulate", cfg, "--out", str(tmp_path / "c"), "--seed", "12"], capsys)
    assert (tmp_path / "c" / "record_minus.csv").read_bytes() != \
        (tmp_path / "a" / "record_minus.csv").read_bytes()


def test_simulate_zero_duration(tmp_path, capsys):
    cfg = _write(tmp_path, BASE)
    code, _, _ = _run(["simulate", cfg, "--out", str(tmp_path), "--set", "record.duration=0"],
                      capsys)
    assert code == 0
    assert (tmp_path / "record_plus.csv").read_text() == "t,y_1,y_2\n"


def test_infer_outputs_match_library(tmp_path, capsys):
    cfg = _write(tmp_path, BASE)
    out = str(tmp_path)
    _run(["simulate", cfg, "--out", out], capsys)
    code, stdout, _ = _run(["infer", cfg, "--out", out], capsys)
    assert code == 0
    surf = LogLikSurface.read(tmp_path / "loglik_surface")
    rm = GaussianRecord.read(tmp_path / "record_minus")
    rp = GaussianRecord.read(tmp_path / "record_plus")
    ref = loglik_surface(OptomechConfig.from_dict(BASE["optomech"]),
                         ThetaGrid.uniform(shape=(6, 7)), rm, rp)
    np.testing.assert_array_equal(surf.loglik_total, ref.loglik_total)
    summary = json.loads((tmp_path / "posterior_summary.json").read_text())
    assert summary["credible_level"] == 0.95 and summary["credible_cells"]
    hyp = json.loads((tmp_path / "hypotheses.json").read_text())
    assert sum(h["posterior"] for h in hyp["hypotheses"]) == pytest.approx(1.0)
    post = np.loadtxt(tmp_path / "posterior.csv", delimiter=",", skiprows=1)
    assert post.shape == (42, 3)
    assert "posterior_mean" in json.loads(stdout)


def test_infer_prior_choice_only_reweights(tmp_path, capsys):
    cfg = _write(tmp_path, BASE)
    _run(["simulate", cfg, "--out", str(tmp_path)], capsys)
    _run(["infer", cfg, "--out", str(tmp_path / "flat"), "--records", str(tmp_path)], capsys)
    _run(["infer", cfg, "--out", str(tmp_path / "jeff"), "--records", str(tmp_path),
          "--prior", "jeffreys"], capsys)
    flat = np.loadtxt(tmp_path / "flat" / "posterior.csv", delimiter=",", skiprows=1)[:, 2]
    jeff = np.loadtxt(tmp_path / "jeff" / "posterior.csv", delimiter=",", skiprows=1)[:, 2]
    ratio = np.divide(jeff, flat, out=np.zeros_like(jeff), where=flat > 0)
    # the ratio is the (normalized) Jeffreys density, not a function of the data
    from qstat.inference import jeffreys_prior
    jp = jeffreys_prior(OptomechConfig.from_dict(BASE["optomech"]),
                        ThetaGrid.uniform(shape=(6, 7)), 40.0).ravel()
    ok = flat > 1e-200
    np.testing.assert_allclose(ratio[ok] / ratio[ok].max(), (jp / jp[ok].max())[ok], rtol=1e-6)


def test_infer_workers_do_not_change_results(tmp_path, capsys, monkeypatch):
    cfg = _write(tmp_path, BASE)
    _run(["simulate", cfg, "--out", str(tmp_path)], capsys)
    _run(["infer", cfg, "--out", str(tmp_path / "w1"), "--records", str(tmp_path),
          "--workers", "1"], capsys)
    monkeypatch.setenv("QSTAT_WORKERS", "2")
    _run(["infer", cfg, "--out", str(tmp_path / "w2"), "--records", str(tmp_path)], capsys)
    a = (tmp_path / "w1" / "loglik_surface.csv").read_bytes()
    assert a == (tmp_path / "w2" / "loglik_surface.csv").read_bytes()


def test_info_report(tmp_path, capsys):
    cfg = _write(tmp_path, BASE)
    code, _, _ = _run(["info", cfg, "--out", str(tmp_path)], capsys)
    assert code == 0
    doc = json.loads((tmp_path / "info_report.json").read_text())
    rep = doc["info_measures"]
    cfgobj = OptomechConfig.from_dict(BASE["optomech"])
    J = fisher_matrix(cfgobj, (0.5, 1.0), 100.0, omega=np.linspace(-80, 80, 1024))
    np.testing.assert_allclose(rep["fisher_matrix"], J, rtol=1e-12)
    crb = np.array(rep["crb"])
    np.testing.assert_allclose(doc["recommended_grid_spacing"], 0.25 * np.sqrt(np.diag(crb)))
    assert rep["error_prob_lower"] <= rep["error_prob_upper"]
    assert (tmp_path / "spectra.csv").read_text().startswith("omega,S_minus,S_plus\n")


def test_info_equal_hypotheses(tmp_path, capsys):
    cfg = dict(BASE, info={"theta0": {"s_a": 0.5, "s_b": 1.0},
                           "theta1": {"s_a": 0.5, "s_b": 1.0}, "duration": 10.0,
                           "n_omega": 512})
    code, _, _ = _run(["info", _write(tmp_path, cfg), "--out", str(tmp_path)], capsys)
    assert code == 0
    rep = json.loads((tmp_path / "info_report.json").read_text())["info_measures"]
    assert rep["relative_entropy_rate"] == pytest.approx(0.0, abs=1e-14)
    assert rep["chernoff_max_rate"] == pytest.approx(0.0, abs=1e-14)
    assert rep["error_prob_lower"] == pytest.approx(0.5)
    assert rep["error_prob_upper"] == pytest.approx(0.5)


def test_info_scales_with_duration(tmp_path, capsys):
    cfg = _write(tmp_path, BASE)
    _run(["info", cfg, "--out", str(tmp_path / "a")], capsys)
    _run(["info", cfg, "--out", str(tmp_path / "b"), "--set", "info.duration=200"], capsys)
    a = json.loads((tmp_path / "a" / "info_report.json").read_text())["info_measures"]
    b = json.loads((tmp_path / "b" / "info_report.json").read_text())["info_measures"]
    np.testing.assert_allclose(b["fisher_matrix"], 2 * np.array(a["fisher_matrix"]), rtol=1e-9)
    assert b["relative_entropy_rate"] == a["relative_entropy_rate"]


def test_jumps_command(tmp_path, capsys):
    cfg = _write(tmp_path, BASE)
    code, out, _ = _run(["jumps", cfg, "--out", str(tmp_path)], capsys)
    assert code == 0
    res = json.loads((tmp_path / "jump_test.json").read_text())
    assert res["n_samples"] == 50
    # zero temperature: every sparse sample is the ground level
    assert res["ln_lambda"] == pytest.approx(50 * -math.log(1 - math.exp(-2)), rel=1e-12)
    path = np.loadtxt(tmp_path / "energy_h1.csv", delimiter=",", skiprows=1, ndmin=2)
    assert path[-1, 1] == 0.5
    again = tmp_path / "again"
    _run(["jumps", cfg, "--out", str(again)], capsys)
    assert (again / "energy_h0.csv").read_bytes() == (tmp_path / "energy_h0.csv").read_bytes()


def test_validate_and_exit_codes(tmp_path, capsys):
    cfg = _write(tmp_path, BASE)
    code, out, _ = _run(["validate", cfg], capsys)
    assert code == 0 and json.loads(out)["valid"]
    bad = _write(tmp_path, dict(BASE, theta={"s_a": -1, "s_b": 1}), "bad.json")
    code, _, err = _run(["simulate", bad], capsys)
    assert code == 2 and json.loads(err)["exit_code"] == 2
    unstable = dict(BASE, optomech=dict(BASE["optomech"], g=1.5))
    code, _, err = _run(["validate", _write(tmp_path, unstable, "u.json")], capsys)
    assert code == 3 and json.loads(err)["error"] == "StabilityError"
    code, _, _ = _run(["simulate", str(tmp_path / "missing.json")], capsys)
    assert code == 4
    code, _, _ = _run(["infer", cfg, "--records", str(tmp_path / "none"),
                       "--out", str(tmp_path / "o")], capsys)
    assert code == 4
    assert _run(["frobnicate", cfg], capsys)[0] == 2
    (tmp_path / "junk.json").write_text("{not json")
    assert _run(["validate", str(tmp_path / "junk.json")], capsys)[0] == 2


def test_si_units_are_normalized():
    cfg = {"units": "si",
           "optomech": {"g": 8e3, "gamma_a": 4e4, "gamma_b": 1e4, "s_a_prime": 0.5},
           "record": {"dt": 2e-5, "duration": 4e-3}}
    out = cli.normalize_units(cfg)
    assert out["optomech"]["gamma_b"] == 1.0 and out["optomech"]["g"] == pytest.approx(0.8)
    assert out["record"]["dt"] == pytest.approx(0.2) and out["record"]["duration"] == 40.0
    assert out["si_rate_unit"] == 1e4
