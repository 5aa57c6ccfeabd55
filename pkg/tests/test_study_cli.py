import json
import math

import pytest

from stokes_hybrid.cli import main
from stokes_hybrid.mesh import generate_rectangle, write_gmsh
from stokes_hybrid.study import (COLUMNS, StudyConfig, StudyResult, StudyRow, emit, load_config,
                                 read_csv, run_study)


def _write(tmp_path, text, name="tiny.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


TINY = """
case = "smooth"
variants = ["HDG", "EDG"]
degrees = [1]
levels = 2
nx = 2
ny = 2
solver = "direct"
"""


@pytest.fixture
def tiny_cfg(tmp_path):
    return load_config(_write(tmp_path, TINY), {"out": str(tmp_path / "out")})


def test_empty_result_header_only(tmp_path, tiny_cfg):
    path = emit(StudyResult(tiny_cfg, []), tmp_path)
    assert path.read_text().strip() == ",".join(COLUMNS)
    assert read_csv(path) == []


def test_rows_sorted_and_rates(tiny_cfg):
    res = run_study(tiny_cfg, workers=1)
    keys = [(r.variant, r.k, r.level) for r in res.rows]
    assert keys == [("HDG", 1, 0), ("HDG", 1, 1), ("EDG", 1, 0), ("EDG", 1, 1)]
    assert res.all_converged
    for r in res.rows:
        assert math.isnan(r.rate_u) == (r.level == 0)
        assert math.isnan(r.rate_p) == (r.level == 0)
    fine = res.select(variant="HDG", level=1)[0]
    coarse = res.select(variant="HDG", level=0)[0]
    assert fine.rate_u == pytest.approx(math.log2(coarse.err_u / fine.err_u))
    assert fine.cells == 4 * coarse.cells


def test_csv_round_trip(tmp_path, tiny_cfg):
    res = run_study(tiny_cfg, workers=1)
    path = emit(res, tmp_path, "csv")
    back = read_csv(path)
    assert len(back) == len(res.rows)
    for rec, row in zip(back, res.rows):
        for key, val in row.record().items():
            if isinstance(val, float) and math.isnan(val):
                assert math.isnan(rec[key])
            else:
                assert rec[key] == val, key
    lines = path.read_text().splitlines()
    assert lines[1].split(",")[COLUMNS.index("rate_u")] == ""


def test_json_mirrors_csv(tmp_path, tiny_cfg):
    res = run_study(tiny_cfg, workers=1)
    recs = json.loads(emit(res, tmp_path, "json").read_text())
    assert [list(r) for r in recs] == [COLUMNS] * len(res.rows)
    assert recs[0]["rate_u"] is None
    assert recs[1]["err_u"] == res.rows[1].err_u


def test_deterministic(tiny_cfg):
    a = run_study(tiny_cfg, workers=1)
    b = run_study(tiny_cfg, workers=2)
    cols = ["err_u", "err_p", "div_norm", "jump_norm", "iters", "dofs_condensed"]
    assert [[getattr(r, c) for c in cols] for r in a.rows] == \
        [[getattr(r, c) for c in cols] for r in b.rows]


def test_failed_row_flagged(tmp_path):
    cfg = load_config(_write(tmp_path, TINY), {"solver": "minres", "maxit": 2})
    res = run_study(cfg, workers=1)
    assert len(res.rows) == 4 and not res.all_converged
    assert all(r.reason for r in res.rows if not r.converged)


@pytest.mark.parametrize("bad", [dict(case="nope"), dict(case="smooth", degrees=[0]),
                                 dict(case="smooth", levels=0), dict(case="smooth", tol=0.0),
                                 dict(case="smooth", variants=[]),
                                 dict(case="smooth", variants=["DG"]),
                                 dict(case="smooth", solver="cg"),
                                 dict(case="smooth", colour="red")])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        StudyConfig.from_dict(bad)


def test_config_defaults(tmp_path):
    cfg = load_config(_write(tmp_path, 'case = "curl"\n', "robust.toml"))
    assert cfg.nu == [1.0, 1e-6] and cfg.tol == 1e-12 and cfg.name == "robust"
    assert cfg.variants == ["HDG", "EDG_HDG", "EDG"]


def test_cli_run_ok(tmp_path, capsys):
    cfg = _write(tmp_path, TINY)
    out = tmp_path / "res"
    assert main(["run", str(cfg), "--out", str(out), "--format", "json"]) == 0
    assert (out / "tiny.json").exists()
    assert str(out / "tiny.json") in capsys.readouterr().out


def test_cli_run_unconverged(tmp_path, capsys):
    cfg = _write(tmp_path, TINY)
    code = main(["run", str(cfg), "--out", str(tmp_path), "--solver", "minres", "--maxit", "2",
                 "--variants", "HDG"])
    assert code == 1
    assert "row failed" in capsys.readouterr().err
    assert len(read_csv(tmp_path / "tiny.csv")) == 2


def test_cli_bad_config(tmp_path, capsys):
    assert main(["run", str(tmp_path / "missing.toml")]) == 2
    assert main(["run", str(_write(tmp_path, 'case = "x"\n'))]) == 2


def test_cli_mesh_info(tmp_path, capsys):
    path = tmp_path / "m.msh"
    write_gmsh(generate_rectangle(0, 0, 2, 1, 2, 1), path)
    assert main(["mesh-info", str(path)]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["cells"] == 4 and info["area"] == pytest.approx(2.0)
    (tmp_path / "bad.msh").write_text("garbage\n")
    assert main(["mesh-info", str(tmp_path / "bad.msh")]) == 2


def test_study_on_msh_mesh(tmp_path):
    path = tmp_path / "unit.msh"
    write_gmsh(generate_rectangle(0, 0, 1, 1, 2, 2), path)
    cfg = load_config(_write(tmp_path, TINY), {"mesh": str(path), "levels": 1})
    assert run_study(cfg, workers=1).all_converged


def test_row_record_columns():
    row = StudyRow("smooth", "HDG", 1, 0, 8, 10, 1.0)
    assert list(row.record()) == COLUMNS
