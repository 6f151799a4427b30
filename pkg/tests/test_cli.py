import csv
import math
from dataclasses import replace

import pytest

from superscale import experiments as ex
from superscale.cli import main
from superscale.config import parse_scenario
from superscale.fluid import fluid_solution
from superscale.network import NetworkParams, analytic_flow

N_F = 40.0
LAM = 2.0 / math.pi * N_F**2


def scenario_text(lam=LAM, extra=""):
    return f"""\
[model]
lambda = {lam!r}
file_size = 1.0
range = 1.0

[rate]
kind = "tcp"
C = 1.0

[sim]
min_departures = 400

[run]
name = "t"
replications = 3
seed_base = 7
n_f_grid = [1.0, 4.0]
K_grid = [10, 20]
lambda_factors = [1.0, 4.0]
{extra}"""


def write(tmp_path, text, name="s.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_fluid_and_heuristic_to_stdout(tmp_path, capsys):
    cfg = write(tmp_path, scenario_text())
    assert main(["fluid", "--config", str(cfg)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("lambda,file_size,rate")
    row = dict(zip(out[0].split(","), out[1].split(",")))
    assert float(row["n_f"]) == pytest.approx(N_F)
    assert main(["heuristic", "--n-f", "1,10"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "n_f,m_hat,m_hat_constant,inv_n_f" and len(lines) == 3


def test_chunk_eta_reports_threshold(capsys):
    assert main(["chunk-eta", "--K", "2,50"]) == 0
    cap = capsys.readouterr()
    rows = list(csv.DictReader(cap.out.splitlines()))
    assert float(rows[0]["eta_many"]) == pytest.approx(2 / 3, abs=1e-12)
    k = ex.eta_threshold(0.95)
    assert f": {k}" in cap.err
    assert ex.eta_many_to_one(k).eta_harmonic >= 0.95 > ex.eta_many_to_one(k - 1).eta_harmonic


def test_config_error_exit_status(tmp_path, capsys):
    bad = write(tmp_path, scenario_text(extra="bogus = 1\n"))
    assert main(["fluid", "--config", str(bad)]) == 2
    assert "line 20: [run].bogus" in capsys.readouterr().err
    assert main(["simulate"]) == 2
    assert main(["netload", "--config", str(write(tmp_path, scenario_text()))]) == 1


def test_simulate_csv_is_deterministic(tmp_path):
    cfg = write(tmp_path, scenario_text(lam=2.0 / math.pi * 4.0))
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert main(["simulate", "--config", str(cfg), "--out", str(a)]) == 0
    assert main(["simulate", "--config", str(cfg), "--out", str(b)]) == 0
    assert main(["simulate", "--config", str(cfg), "--out", str(c), "--jobs", "2"]) == 0
    data = (a / "simulate.csv").read_bytes()
    assert data == (b / "simulate.csv").read_bytes() == (c / "simulate.csv").read_bytes()
    rows = read_csv(a / "simulate.csv")
    assert [r["seed"] for r in rows] == ["7", "8", "9"]
    assert list(rows[0]) == list(ex.SIM_CSV_COLUMNS)


def test_seed_and_replication_flags(tmp_path):
    cfg = write(tmp_path, scenario_text(lam=2.0 / math.pi * 4.0))
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(cfg), "--out", str(out), "--seed", "100", "--replications", "2"]) == 0
    assert [r["seed"] for r in read_csv(out / "simulate.csv")] == ["100", "101"]


def test_presets(tmp_path):
    cfg = write(tmp_path, scenario_text(extra="replications = 1\n").replace("replications = 3\n", ""))
    out = tmp_path / "o"
    assert main(["sweep", "--preset", "fig2", "--config", str(cfg), "--out", str(out)]) == 0
    rows = read_csv(out / "fig2.csv")
    assert [float(r["n_f"]) for r in rows] == [1.0, 4.0]
    assert list(rows[0]) == ["n_f", "seed", "m_emp", "ci", "m_hat", "inv_n_f"]
    assert float(rows[1]["inv_n_f"]) == 0.25
    assert main(["sweep", "--preset", "superscaling", "--config", str(cfg), "--out", str(out)]) == 0
    rows = read_csv(out / "superscaling.csv")
    assert float(rows[0]["W_ratio"]) == 1.0 and 0.3 < float(rows[1]["W_ratio"]) < 0.8


def test_eta_sweep_preset(tmp_path):
    text = scenario_text(lam=2.0 / math.pi * 100.0, extra="replications = 1\n").replace("replications = 3\n", "")
    text = text.replace("min_departures = 400", "min_departures = 300")
    text += "\n[chunks]\nK = 10\n"
    out = tmp_path / "o"
    assert main(["sweep", "--preset", "eta-sweep", "--config", str(write(tmp_path, text)), "--out", str(out)]) == 0
    rows = read_csv(out / "eta_sweep.csv")
    assert [int(r["K"]) for r in rows] == [10, 20]
    for r in rows:
        assert float(r["eta_bound"]) < float(r["eta_many"]) <= 1.0


def test_netload_rows(tmp_path):
    text = scenario_text(lam=2.0 / math.pi * 400.0, extra="replications = 1\n").replace("replications = 3\n", "")
    text += "\n[network]\ntheta = 100.0\nE = 100.0\n"
    sc = parse_scenario(text)
    sc = replace(sc, sim=replace(sc.sim, min_departures=200))
    rows = ex.netload_rows(sc, empirical=True)
    assert len(rows) == 2
    assert rows[1]["psi_analytic"] == pytest.approx(4 * rows[0]["psi_analytic"])
    assert rows[1]["headroom"] == pytest.approx(rows[0]["headroom"] / 4)
    for r in rows:
        assert r["psi_emp"] == pytest.approx(r["psi_analytic"], rel=0.2)


def feasible_scenario(lam=LAM):
    sc = parse_scenario(scenario_text(lam=LAM) + "\n[chunks]\nK = 200\n")
    p = sc.params
    mu = fluid_solution(p).mu_f
    psi = analytic_flow(p)
    # xi = 2 sqrt(theta) E = 2 psi
    net = NetworkParams(theta=1.0, E=psi)
    ext = replace(sc.extensions, upload_cap=2 * mu)
    return replace(sc, network=net, extensions=ext, params=replace(p, lam=lam))


def test_feasibility_report_all_pass():
    rep = ex.feasibility_report(feasible_scenario())
    assert rep.all_ok
    assert rep.headroom == pytest.approx(2.0)
    assert rep.n_f == pytest.approx(N_F)
    rows = ex.feasibility_rows(rep)
    assert [r["ok"] for r in rows] == ["pass"] * 4


def test_feasibility_report_load_scaling():
    base = ex.feasibility_report(feasible_scenario())
    sc = feasible_scenario()
    sc = replace(sc, extensions=replace(sc.extensions, upload_cap=fluid_solution(sc.params).mu_f))
    quad = ex.feasibility_report(replace(sc, params=replace(sc.params, lam=4 * LAM)))
    assert quad.access_ok is False
    assert quad.headroom == pytest.approx(base.headroom / 4)


def test_feasibility_report_not_evaluated(tmp_path, capsys):
    rep = ex.feasibility_report(parse_scenario(scenario_text(lam=1.0)))
    assert rep.chunk_regime_ok is None and rep.network_ok is None and rep.access_ok is None
    assert rep.peer_regime_ok is False
    cfg = write(tmp_path, scenario_text(lam=1.0))
    assert main(["feasibility", "--config", str(cfg)]) == 0
    assert "not evaluated" in capsys.readouterr().out


def test_write_csv_round_trip(tmp_path):
    rows = [{"a": 0.1, "b": True, "c": None}, {"a": 1e-300, "b": False, "c": "x"}]
    path = ex.write_csv(tmp_path / "x.csv", ("a", "b", "c"), rows)
    back = read_csv(path)
    assert float(back[0]["a"]) == 0.1 and float(back[1]["a"]) == 1e-300
    assert back[0]["b"] == "true" and back[0]["c"] == ""
