import csv
import io
import json

import numpy as np
import pytest

import curvflow.cli as cli
import curvflow.report as report_mod
from curvflow.catalog import ConfigError
from curvflow.flow import MomentEstimate
from curvflow.report import (BANNER, CSV_COLUMNS, SCHEMA_VERSION, CoherenceError, ReportOptions, StageError,
                             build_report, to_csv, to_json)

SPHERE2 = {"kind": "sphere", "n": 2, "r": 1.0}
TORUS = {"kind": "clifford_torus", "r1": 1.0, "r2": 1.0}
S1xS2 = {"kind": "product", "factors": [{"kind": "sphere", "n": 1}, {"kind": "sphere", "n": 2}]}


def quick(grid=32, **kw):
    return ReportOptions(grid=grid, simulate=False, **kw)


def all_claims(rep):
    """Every vanishing claim in a report, as (label, value) pairs."""
    out = []
    for row in rep["rows"]:
        out += [(f"H_{row['q']}", row["verdicts"]["H_q"]), (f"H_n-{row['q']}", row["verdicts"]["H_n_minus_q"])]
    g = rep["global"]
    out += [(f"H_{k}", v["vanishes"]) for k, v in g["homology"].items()]
    out += [("pi1", g["pi1_zero"]["value"]), ("pi2", g["pi2_zero"]["value"]),
            ("homotopy_sphere", g["homotopy_sphere"]["value"])]
    return out


@pytest.fixture(scope="module")
def sphere2_report():
    return build_report(SPHERE2, quick())


def test_round_two_sphere_verdicts(sphere2_report):
    rep = sphere2_report
    assert rep["schema_version"] == SCHEMA_VERSION and rep["banner"] == BANNER and rep["complete"]
    row1 = rep["rows"][0]
    assert row1["q"] == 1 and row1["verdicts"]["H_q"] is True
    assert row1["hpq"][0]["spectral_lambda_min"] == pytest.approx(1.0, abs=1e-8)
    assert row1["hpq"][0]["bound"] == pytest.approx(-0.5, abs=1e-8)
    g = rep["global"]
    assert g["pi1_zero"]["value"] is True
    # at q = n = 2 the potential vanishes identically, so no strict margin
    assert g["pi2_zero"]["value"] is False
    assert g["homotopy_sphere"]["value"] is True


@pytest.mark.parametrize("doc", [TORUS, S1xS2], ids=["torus", "s1xs2"])
def test_no_vanishing_claims_on_obstructed_manifolds(doc):
    rep = build_report(doc, quick(grid=16))
    assert not any(v for _, v in all_claims(rep))
    row1 = rep["rows"][0]
    assert row1["hpq"][0]["spectral_lambda_min"] <= row1["hpq"][0]["spectral_tolerance"]
    assert not row1["criteria"]["h1q_spectral"]["positive"]


def test_four_sphere_is_a_homotopy_sphere():
    rep = build_report({"kind": "sphere", "n": 4}, quick(grid=10))
    g = rep["global"]
    assert all(g["homology"][str(k)]["vanishes"] for k in (1, 2, 3))
    assert g["homotopy_sphere"]["value"] is True
    for row in rep["rows"][:3]:
        q = row["q"]
        assert row["hpq"][0]["sup"] == pytest.approx(q * (q - 4) / 2, abs=1e-8)


def test_json_is_deterministic_and_strict(sphere2_report):
    again = build_report(SPHERE2, quick())
    assert to_json(sphere2_report) == to_json(again)
    doc = json.loads(to_json(sphere2_report))
    assert doc["provenance"]["version"]


def test_csv_has_one_line_per_q_and_p():
    rep = build_report(SPHERE2, quick(ps=(0.5, 1.0)))
    rows = list(csv.DictReader(io.StringIO(to_csv(rep))))
    assert tuple(rows[0].keys()) == CSV_COLUMNS
    assert [(r["q"], r["p"]) for r in rows] == [("1", "0.5"), ("1", "1.0"), ("2", "0.5"), ("2", "1.0")]


def test_options_are_validated():
    with pytest.raises(ConfigError):
        build_report(SPHERE2, quick(qs=(3,)))
    with pytest.raises(ConfigError):
        build_report(SPHERE2, quick(ps=(-1.0,)))


def test_stage_failures_carry_the_stage_name(monkeypatch):
    def boom(*a, **k):
        raise np.linalg.LinAlgError("singular")

    monkeypatch.setattr(report_mod, "laplacian_matrix", boom)
    with pytest.raises(StageError) as info:
        build_report(SPHERE2, quick())
    assert info.value.partial["complete"] is False
    assert info.value.stage in str(info.value)


def fake_estimate(mu):
    def est(samples, p, q, norm="op"):
        return MomentEstimate(p, q, mu, 0.001, [], [{"index": 0, "mu_hat": mu, "stderr": 0.001}])
    return est


def test_incoherent_simulation_aborts(monkeypatch):
    monkeypatch.setattr(report_mod, "estimate_moment", fake_estimate(5.0))
    opts = ReportOptions(grid=32, qs=(1,), paths=20, dt=1e-2, t_final=0.1)
    with pytest.raises(CoherenceError) as info:
        build_report(SPHERE2, opts)
    assert info.value.report["failed_stage"] == "coherence"


# ----------------------------------------------------------------- cli


@pytest.fixture
def configs(tmp_path):
    paths = {}
    for name, doc in {"sphere2": SPHERE2, "torus": TORUS}.items():
        p = tmp_path / f"{name}.json"
        p.write_text(json.dumps(doc))
        paths[name] = str(p)
    bad = tmp_path / "bad.json"
    bad.write_text('{"kind": "klein_bottle"}')
    paths["bad"] = str(bad)
    return paths


def test_catalog_lists_five_families(capsys):
    assert cli.run_cli(["catalog"]) == 0
    fams = json.loads(capsys.readouterr().out)["families"]
    assert sorted(fams) == ["clifford_torus", "ellipsoid", "minimal_clifford_torus", "product", "sphere"]


def test_analyze_torus_emits_no_verdicts(configs, tmp_path):
    out = tmp_path / "r.json"
    assert cli.run_cli(["analyze", "--config", configs["torus"], "--q", "1", "--grid", "16", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["rows"][0]["verdicts"]["H_q"] is False
    assert rep["global"]["pi1_zero"]["value"] is False


def test_analyze_csv(configs, capsys):
    assert cli.run_cli(["analyze", "--config", configs["sphere2"], "--q", "1", "--grid", "32",
                        "--format", "csv"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split(",") == list(CSV_COLUMNS)
    assert len(lines) == 2


def test_spectrum_height_potential(configs, capsys):
    assert cli.run_cli(["spectrum", "--config", configs["sphere2"], "--potential", "height", "--eps", "0.1"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["lambda_min"] == pytest.approx(-0.006655, abs=5e-5)
    assert out["positive"] is False


def test_spectrum_laplacian(configs, capsys):
    assert cli.run_cli(["spectrum", "--config", configs["sphere2"], "--potential", "laplacian", "--k", "4"]) == 0
    ev = json.loads(capsys.readouterr().out)["eigenvalues"]
    np.testing.assert_allclose(ev[1:], 2.0, rtol=1e-2)


def test_simulate_command(configs, capsys):
    assert cli.run_cli(["simulate", "--config", configs["sphere2"], "--paths", "200", "--dt", "0.01",
                        "--t-final", "0.5", "--format", "csv"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "manifold,q,p,mu_hat,stderr" and len(lines) == 2


@pytest.mark.parametrize("argv", [
    ["analyze", "--config", "{bad}"],
    ["analyze", "--config", "/no/such/file.json"],
    ["analyze", "--config", "{sphere2}", "--bogus"],
    ["analyze", "--config", "{sphere2}", "--q", "3"],
    ["analyze", "--config", "{sphere2}", "--grid", "4"],
    ["report", "--config", "{sphere2}", "--dt", "-1"],
    ["frobnicate"],
])
def test_config_and_usage_errors_exit_2(configs, argv):
    argv = [a.format(**configs) for a in argv]
    assert cli.run_cli(argv) == 2


def test_numerical_failure_exits_3(configs, monkeypatch, tmp_path):
    def boom(*a, **k):
        raise np.linalg.LinAlgError("singular")

    monkeypatch.setattr(report_mod, "laplacian_matrix", boom)
    out = tmp_path / "partial.json"
    assert cli.run_cli(["analyze", "--config", configs["sphere2"], "--grid", "32", "--out", str(out)]) == 3
    assert json.loads(out.read_text())["complete"] is False


def test_incoherence_exits_3(configs, monkeypatch, capsys):
    monkeypatch.setattr(report_mod, "estimate_moment", fake_estimate(5.0))
    rc = cli.run_cli(["report", "--config", configs["sphere2"], "--q", "1", "--grid", "32", "--paths", "20",
                      "--dt", "0.01", "--t-final", "0.1"])
    assert rc == 3
    assert json.loads(capsys.readouterr().out)["failed_stage"] == "coherence"
