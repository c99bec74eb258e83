import csv
import json

import numpy as np
import pytest

from condmix.cli import Report, main
from condmix.config import ConfigError, PRESETS, preset_target, read_config, target_from_config
from condmix.potentials import GaussianMixtureTarget, PowerPosteriorTarget


def test_presets_expand_exactly():
    nu1, nu2, nu3 = (preset_target(n) for n in ("nu1", "nu2", "nu3"))
    np.testing.assert_array_equal(nu1.weights, [0.9, 0.1])
    np.testing.assert_array_equal(nu1.means.ravel(), [-10, 10])
    np.testing.assert_array_equal(nu2.weights, [0.15, 0.15, 0.3, 0.2, 0.2])
    np.testing.assert_array_equal(nu2.means.ravel(), [-5, -2.5, 0, 2.5, 5])
    np.testing.assert_array_equal(nu3.weights, [0.4, 0.4, 0.1, 0.1])
    np.testing.assert_array_equal(nu3.means, [[-5, -5], [5, 5], [-5, 5], [5, -5]])
    np.testing.assert_array_equal(nu3.covariance, np.eye(2))
    assert nu1.covariance.item() == 1.0 and set(PRESETS) == {"nu1", "nu2", "nu3"}
    with pytest.raises(ConfigError):
        preset_target("nu4")


def test_config_file_mixture(tmp_path):
    p = tmp_path / "mix.cfg"
    p.write_text(
        "# two bumps\n"
        "weights = 0.3, 0.7\n"
        "means = -1 0; 2 1   # one row per component\n"
        "covariance = 1 0.2; 0.2 2\n"
        "h = 0.02\n"
        "region = voronoi:1\n"
        "region = voronoi:2\n"
    )
    cfg = read_config(p)
    assert cfg["region"] == ["voronoi:1", "voronoi:2"] and cfg["h"] == "0.02"
    t = target_from_config(cfg)
    assert isinstance(t, GaussianMixtureTarget) and t.dimension == 2
    np.testing.assert_allclose(t.covariance, [[1, 0.2], [0.2, 2]])


def test_config_file_power_posterior(tmp_path):
    data = tmp_path / "d.csv"
    np.savetxt(data, np.random.default_rng(0).normal(size=(20, 3)), delimiter=",")
    p = tmp_path / "post.cfg"
    p.write_text(f"data_file = {data}\nbeta = 0.5\ntheta0_norm = 2\n")
    assert isinstance(target_from_config(read_config(p)), PowerPosteriorTarget)


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        read_config(tmp_path / "missing.cfg")
    bad = tmp_path / "bad.cfg"
    bad.write_text("weights 0.5\n")
    with pytest.raises(ConfigError):
        read_config(bad)
    with pytest.raises(ConfigError):
        target_from_config({"weights": "0.5, 0.6", "means": "0; 1"})
    with pytest.raises(ConfigError):
        target_from_config({"h": "0.1"})


def test_report_schema(tmp_path):
    rep = Report("verify-poincare", 3, {"bins": 10})
    rep.check("a", 1.0, 2.0, True)
    rep.check("b", float("inf"), np.float64(1.0), False)
    rep.write(tmp_path)
    d = json.loads((tmp_path / "report.json").read_text())
    for key in ("command", "seed", "params", "checks", "artifacts"):
        assert key in d
    assert d["checks"][1] == {"name": "b", "value": "inf", "bound": 1.0, "pass": False}
    assert not rep.passed


def test_exit_codes(tmp_path, capsys):
    assert main(["verify-hessian-bound", "--instances", "3", "--points", "5", "--out", str(tmp_path / "h")]) == 0
    out = capsys.readouterr().out
    assert "[PASS]" in out
    # the conditional chi2 sweep reports the ratio form, which fails on some instances
    assert main(["verify", "hypercube", "--d", "3", "--instances", "10", "--out", str(tmp_path / "c")]) == 1
    assert "[FAIL]" in capsys.readouterr().out
    assert main(["verify-hypercube", "--d", "20", "--out", str(tmp_path / "x")]) == 2
    assert main(["experiment-gmm", "--preset", "nu9"]) == 2
    assert main(["no-such-command"]) == 2
    assert main(["verify-moment-bound", "--h", "0.5", "--out", str(tmp_path / "m")]) == 2
    assert main(["experiment-gmm", "--config", str(tmp_path / "absent.cfg")]) == 2


def test_hypercube_report_contents(tmp_path):
    main(["verify", "hypercube", "--d", "4", "--instances", "8", "--seed", "7", "--out", str(tmp_path)])
    d = json.loads((tmp_path / "report.json").read_text())
    assert d["command"] == "verify-hypercube" and d["seed"] == 7
    names = {c["name"]: c["pass"] for c in d["checks"]}
    assert all(v for k, v in names.items() if "ratio" not in k), names


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_experiment_gmm_small_run(tmp_path):
    out = tmp_path / "g"
    args = ["experiment-gmm", "--preset", "nu1", "--T", "60", "--particles", "2000", "--out", str(out)]
    main(args)
    trace = read_csv(out / "trace.csv")
    assert trace[0]["t"] == "0" and {r["region"] for r in trace} >= {"voronoi:0", "voronoi:1"}
    hist = read_csv(out / "histogram.csv")
    assert len(hist) == 300 and set(hist[0]) == {"x", "empirical", "target"}
    rep = json.loads((out / "report.json").read_text())
    assert rep["params"]["h"] == 0.01 and rep["params"]["particles"] == 2000
    first = (out / "trace.csv").read_bytes()
    main(args)
    assert (out / "trace.csv").read_bytes() == first


def test_experiment_restart_small_run(tmp_path):
    code = main(["experiment", "restart", "--T", "300", "--counts", "1,50", "--repeats", "3", "--out", str(tmp_path)])
    rows = read_csv(tmp_path / "occupancy.csv")
    assert set(rows[0]) == {"n", "repeat", "seed", "cell", "count", "fraction"}
    ones = [r for r in rows if r["n"] == "1"]
    assert len(ones) == 3 * 4 and sum(int(r["count"]) for r in ones) == 3
    assert code in (0, 1)


def test_verify_poincare_command(tmp_path):
    assert main(["verify-poincare", "--bins", "800", "--out", str(tmp_path)]) == 0


def test_config_driven_run(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("preset = nu3\nT = 20\nparticles = 500\ngrid = -10,10,20;-10,10,20\n")
    main(["experiment-gmm", "--config", str(cfg), "--out", str(tmp_path / "o")])
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["params"]["T"] == 20 and rep["params"]["particles"] == 500
    assert len(read_csv(tmp_path / "o" / "histogram.csv")) == 400
