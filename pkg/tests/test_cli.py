import json

import numpy as np
import pytest

from wsblab.cli import main
from wsblab.dynamics import SystemParams, effective_potential
from wsblab.equilibria import lagrange_points
from wsblab.manifolds import ManifoldCut, point_location, read_cut_csv

MU = 0.0121505856


def run(tmp_path, *args, config=None):
    argv = list(args) + ["--out", str(tmp_path)]
    if config is not None:
        tmp_path.mkdir(parents=True, exist_ok=True)
        cfg = tmp_path / "config.json"
        cfg.write_text(json.dumps(config))
        argv += ["--config", str(cfg)]
    return main(argv)


def load(tmp_path, name):
    return json.loads((tmp_path / name).read_text())


def test_lagrange_table(tmp_path):
    assert run(tmp_path, "lagrange", "--mu", "0.5") == 0
    assert load(tmp_path, "lagrange.json")["x_plus"] == 0.5
    assert run(tmp_path, "lagrange") == 0
    doc = load(tmp_path, "lagrange.json")
    e = doc["energies"]
    assert e["L5"] == e["L4"] > e["L3"] > e["L2"] > e["L1"]
    ref = lagrange_points(SystemParams(MU))
    assert doc["x_plus"] == pytest.approx(ref.x_plus, rel=1e-9)
    assert doc["energies"]["L1"] == pytest.approx(ref.energies["L1"], rel=1e-9)
    man = load(tmp_path, "manifest.json")
    assert man["config"]["mu"] == MU and "numpy" in man["versions"]


def test_zvc(tmp_path):
    H = -1.5997
    assert run(tmp_path, "zvc", "--energy", str(H)) == 0
    rows = np.loadtxt(tmp_path / "zvc.csv", delimiter=",", skiprows=1)
    p = SystemParams(MU)
    # 10 significant digits in the file bound the residual
    assert max(abs(effective_potential(x, y, p) + H) for _, x, y in rows) < 1e-8
    assert set(rows[:, 0]) == {0.0, 1.0}


def test_lyapunov_and_out_of_range(tmp_path, capsys):
    assert run(tmp_path, "lyapunov", "--energy", "-1.5997") == 0
    assert load(tmp_path, "lyapunov.json")["residual"] < 1e-10
    assert run(tmp_path, "lyapunov", "--energy", "-1.7") == 2
    assert "OutOfRange" in capsys.readouterr().err
    err = load(tmp_path, "error.json")
    assert err["exit_code"] == 2 and err["error"] == "OutOfRange"


def test_cut_roundtrip(tmp_path):
    H = lagrange_points(SystemParams(MU)).energies["L1"] + 5e-4
    assert run(tmp_path, "cut", "--energy", repr(H), "--order", "0", config={"n_seeds": 60}) == 0
    meta, pts = read_cut_csv(tmp_path / "cut_0.csv")
    c = ManifoldCut(meta["theta0"], meta["cut_index"], pts, np.arange(len(pts)), True, meta["H"])
    assert point_location(c, pts.mean(axis=0)) == "inside"


def test_config_errors(tmp_path):
    assert run(tmp_path, "lagrange", config={"bogus": 1}) == 1
    assert load(tmp_path, "error.json")["error"] == "ConfigError"
    assert run(tmp_path, "lyapunov") == 1


def test_flags_override_config(tmp_path):
    assert run(tmp_path, "lagrange", "--mu", "0.1", config={"mu": 0.2}) == 0
    assert load(tmp_path, "lagrange.json")["mu"] == 0.1


def test_wsb_deterministic_and_order_structure(tmp_path):
    cfg = {"e0": 0.405}
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert run(a, "wsb", "--order", "2", "--threads", "1", config=cfg) == 0
    assert run(b, "wsb", "--order", "2", "--threads", "1", config=cfg) == 0
    assert (a / "wsb.csv").read_bytes() == (b / "wsb.csv").read_bytes()
    assert run(c, "wsb", "--order", "1", config=cfg) == 0
    n2 = load(a, "stable_intervals.json")["stable"]
    n1 = load(c, "stable_intervals.json")["stable"]
    assert len(n2) >= len(n1)
    block = load(a, "block.json")
    assert set(block) == {"mu", "a", "b", "H_star", "D1", "y_b", "theta1", "validation", "samples"}
    header = (a / "wsb.csv").read_text().splitlines()
    assert header[0] == "mu,theta0,rdot0,e0,n"
    assert header[2] == "r_star,H_star,bracket_lo,bracket_hi,side"
