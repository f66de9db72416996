import csv
import hashlib

import numpy as np
import pytest
import yaml

from lamegap import cli
from lamegap import harness as H
from lamegap.concentration import StarredData
from lamegap.geometry import CurvilinearSquareGeometry

FAST = dict(eps_list=[1e-2, 3e-3, 1e-3], mesh={"n_layers": 4, "c_g": 0.6, "h_max": 0.12})


def fast_cfg(**kw):
    d = {**FAST, **kw}
    return H.ExperimentConfig(**d)


def write_cfg(tmp_path, **kw):
    d = {**FAST, "outputs": str(tmp_path / "out"), **kw}
    p = tmp_path / "cfg.yaml"
    p.write_text(yaml.safe_dump(d))
    return p


# ---------------------------------------------------------------- config

def test_config_validation(tmp_path):
    with pytest.raises(H.ConfigError):
        H.ExperimentConfig(eps_list=[1e-3, 1e-2])
    with pytest.raises(H.ConfigError):
        H.ExperimentConfig(eps_list=[1e-3, 1e-8])
    with pytest.raises(H.ConfigError):
        H.ExperimentConfig(geometry={"kind": "ellipse"})
    with pytest.raises(H.ConfigError):
        H.ExperimentConfig(mesh={"layers": 3})
    p = tmp_path / "bad.yaml"
    p.write_text("eps_list: [1.0e-3]\nfoo: 1\n")
    with pytest.raises(H.ConfigError):
        H.load_config(p)


def test_config_roundtrip(tmp_path):
    p = write_cfg(tmp_path, seed=7)
    cfg = H.load_config(p)
    assert cfg.seed == 7 and cfg.eps_list == FAST["eps_list"]
    assert cfg.mesh_params().n_layers == 4
    assert cfg.all_eps == sorted(FAST["eps_list"], reverse=True)


def test_phi_catalog_normalized():
    for kind in list(H.PHI_CATALOG) + ["polynomial"]:
        phi = H.build_phi({"kind": kind, "terms": [[0, 0, 2.0, -1.0], [1, 1, 0.5, 0.0]]})
        np.testing.assert_allclose(phi(np.zeros(2)), 0.0)
    poly = H.build_phi({"kind": "polynomial", "terms": [[2, 1, 1.0, 0.0]]})
    x = np.array([0.3, -0.7])
    np.testing.assert_allclose(poly.grad(x)[0], [2 * 0.3 * -0.7, 0.09])
    with pytest.raises(H.ConfigError):
        H.build_phi({"kind": "spiral"})


def test_geometry_kinds():
    assert isinstance(H.build_geometry({"kind": "curvilinear_square"}, 1e-3), CurvilinearSquareGeometry)
    g = H.build_geometry({"kind": "custom", "alpha": 0.5, "tau": 2.0,
                          "upper": [[1.0, 2.0], [2.0, 1.5]], "lower": [[1.0, 2.0]]}, 1e-3)
    np.testing.assert_allclose(g.profile.difference(np.array([0.1])), 2.0 * 0.1**1.5, rtol=1e-12)
    with pytest.raises(H.ConfigError):
        H.build_geometry({"kind": "custom", "alpha": 0.5, "tau": 1.0, "upper": [[1.0, 0.5]]}, 1e-3)


# ---------------------------------------------------------------- sweeps

def test_three_point_sweep_and_determinism(tmp_path):
    cfg = fast_cfg()
    r1 = H.run_sweep(cfg)
    r2 = H.run_sweep(cfg)
    assert len(r1) == 3 and all(r.status == "ok" and r.certified for r in r1)
    H.write_sweep_csv(r1, tmp_path / "a.csv")
    H.write_sweep_csv(r2, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    back = H.read_sweep_csv(tmp_path / "a.csv")
    assert [r.A for r in back] == [r.A for r in r1]
    header = next(csv.reader(open(tmp_path / "a.csv")))
    assert header == H.SWEEP_COLUMNS


def test_parallel_sweep_matches_serial(tmp_path):
    cfg = fast_cfg(certify=False)
    a = H.run_sweep(cfg, workers=1)
    b = H.run_sweep(cfg, workers=2)
    H.write_sweep_csv(a, tmp_path / "a.csv")
    H.write_sweep_csv(b, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_failed_point_is_recorded():
    cfg = fast_cfg(mesh={"n_layers": 4, "tol": 1e-30})
    recs = H.run_sweep(cfg)
    assert len(recs) == 3
    assert all(r.status == "error" and not r.certified and r.message for r in recs)
    row = H.record_row(recs[0])
    assert np.isnan(row["a11"])


def test_rigid_sweep_is_flat(rigid_sweep):
    cfg, recs = rigid_sweep
    main = [r for r in recs if r.eps in cfg.eps_list]
    vals = [r.max_grad_axis for r in main]
    assert max(vals) / min(vals) < 1.01
    assert abs(H.fit_rate(main).slope) < 0.05
    for r in main:
        np.testing.assert_allclose(r.C, [0.0, 0.0, 1.0], atol=1e-6)


# ---------------------------------------------------------------- fits

def _synthetic(eps, f):
    return [H.SweepRecord(eps=e, max_grad_axis=f(e), certified=True) for e in eps]


def test_fit_rate_exact_power():
    recs = _synthetic([1e-2, 1e-3, 1e-4, 1e-5], lambda e: 7.0 * e ** (-2 / 3))
    fit = H.fit_rate(recs)
    assert fit.slope == pytest.approx(-2 / 3, abs=1e-10)
    assert np.exp(fit.intercept) == pytest.approx(7.0, rel=1e-10)
    assert fit.r2 == pytest.approx(1.0)


def test_fit_rate_rejections():
    with pytest.raises(ValueError):
        H.fit_rate(_synthetic([1e-2, 1e-3], lambda e: 1.0))
    with pytest.raises(ValueError):
        H.fit_rate(_synthetic([1e-2, 1e-3, 1e-4], lambda e: -1.0))
    uncertified = _synthetic([1e-2, 1e-3, 1e-4], lambda e: e)
    uncertified[0].certified = False
    with pytest.raises(ValueError):
        H.fit_rate(uncertified)
    assert H.fit_rate(uncertified, certified_only=False).slope == pytest.approx(1.0)


def test_default_fits(default_sweep):
    cfg, recs = default_sweep
    main = [r for r in recs if r.eps in cfg.eps_list]
    assert H.fit_rate(main).slope == pytest.approx(-2 / 3, abs=0.1)
    tail = sorted(recs, key=lambda r: r.eps)[:3]
    assert H.fit_rate(tail, "a11").slope == pytest.approx(-1 / 3, abs=0.05)
    assert H.fit_rate(tail, "a22").slope == pytest.approx(-1 / 3, abs=0.05)


def test_off_diagonal_log_growth(default_sweep):
    cfg, recs = default_sweep
    per_log = [abs(r.A[0][1]) / abs(np.log(r.eps)) for r in recs]
    assert max(per_log) < 1e-6  # a12 vanishes by the mirror symmetry of the default geometry


# ---------------------------------------------------------------- comparison

def test_default_comparison(default_sweep, default_starred):
    cfg, recs = default_sweep
    table = H.compare_asymptotics(recs, default_starred, cfg)
    eps, err = table.errors("center")
    assert eps == cfg.eps_list
    assert err[-1] < err[0]
    assert all(table.monotone.values())
    H.attach_predictions(recs, table)
    assert recs[0].rel_error == err[0]


def test_zero_phi_empty_table(default_sweep, default_starred, tmp_path):
    cfg, recs = default_sweep
    zcfg = H.ExperimentConfig(**{**cfg.to_dict(), "phi": {"kind": "zero"}})
    zero_st = StarredData(default_starred.a_star, np.zeros(3), 2)
    table = H.compare_asymptotics(recs, zero_st, zcfg)
    assert table.rows == [] and "hypotheses unmet" in table.note
    H.write_comparison_csv(table, tmp_path / "c.csv")
    assert "hypotheses unmet" in (tmp_path / "c.csv").read_text()


def test_uncertified_records_excluded(default_sweep, default_starred):
    cfg, recs = default_sweep
    import copy
    recs = copy.deepcopy(recs)
    recs[0].certified = False
    table = H.compare_asymptotics(recs, default_starred, cfg)
    assert cfg.eps_list[0] not in {r.eps for r in table.rows}


def test_constants_table():
    rows = H.constants_table(H.ExperimentConfig(geometry={"kind": "curvilinear_square"}))
    names = [r[0] for r in rows]
    assert "M_alpha_tau" in names and "G_star_2" in names
    assert all(np.isfinite(r[3]) for r in rows)


# ---------------------------------------------------------------- CLI

def test_cli_fast_path(tmp_path):
    p = write_cfg(tmp_path)
    out = tmp_path / "out"
    assert cli.main(["constants", "--config", str(p)]) == 0
    assert cli.main(["validate-geometry", "--config", str(p)]) == 0
    assert cli.main(["solve", "--config", str(p), "--eps", "1e-2"]) == 0
    assert cli.main(["sweep", "--config", str(p), "--workers", "1"]) == 0
    for name in ("constants.csv", "conditions.csv", "boundary.csv", "boundary.svg", "nodes.csv", "u0.csv",
                 "system.csv", "sweep.csv"):
        assert (out / name).exists(), name
    header = next(csv.reader(open(out / "constants.csv")))
    assert header == ["name", "alpha", "tau", "value"]


def test_cli_svg_deterministic(tmp_path):
    p = write_cfg(tmp_path)
    cli.main(["validate-geometry", "--config", str(p), "--out", str(tmp_path / "a")])
    cli.main(["validate-geometry", "--config", str(p), "--out", str(tmp_path / "b")])
    h = [hashlib.sha256((tmp_path / d / "boundary.svg").read_bytes()).hexdigest() for d in "ab"]
    assert h[0] == h[1]


def test_cli_failing_geometry(tmp_path):
    p = write_cfg(tmp_path, geometry={"kind": "custom", "alpha": 0.5, "tau": 3.0,
                                      "upper": [[1.0, 2.0], [1.0, 1.5]], "lower": [[1.0, 2.0]]})
    # tau is declared as 3 but the profile has coefficient 1: the fitted-tau check fails
    assert cli.main(["validate-geometry", "--config", str(p)]) == 1


def test_cli_bad_config(tmp_path, capsys):
    p = tmp_path / "x.yaml"
    p.write_text("eps_list: [1.0e-3, 1.0e-2]\n")
    assert cli.main(["constants", "--config", str(p)]) == 2
    assert "strictly decreasing" in capsys.readouterr().err
