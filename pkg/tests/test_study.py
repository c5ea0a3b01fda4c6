import csv
import dataclasses
import math

import numpy as np
import pytest

from mixedvhi.fem_stokes import assemble
from mixedvhi.mesh import BoundaryTag, TriangleMesh, structured_unit_square
from mixedvhi.study import (CSV_COLUMNS, PROFILE_COLUMNS, ErrorReport, ErrorRow, LevelSolution, PointLocationError,
                            StudyConfig, StudyError, boundary_coordinate, compute_errors, convergence_order,
                            emit_csv, emit_table, interpolate_boundary, read_csv, run_study, write_profiles)
from mixedvhi.uzawa import UzawaState

from conftest import EXAMPLE1_FRICTION, solve_example1


@pytest.fixture(scope="module")
def sol8():
    return solve_example1(8)[0]


def _with_fields(sol, u_full=None, p=None):
    st = sol.state
    new = UzawaState(st.u, st.p if p is None else p, st.lam1, st.lam2, st.iteration,
                     u_full=st.u_full if u_full is None else u_full)
    return dataclasses.replace(sol, state=new)


def _linear_solution(n):
    """Exact P1 interpolant of the divergence-free field (1 - 2y, 1 - 2x), bubbles zero."""
    mesh = structured_unit_square(n)
    system = assemble(mesh, 1.0)
    x, y = mesh.vertices.T
    u_full = np.zeros(system.n_full)
    nv = mesh.n_vertices
    u_full[:nv], u_full[nv:2 * nv] = 1 - 2 * y, 1 - 2 * x
    lam = [np.zeros((len(system.traces[t].vertices), 2)) for t in (BoundaryTag.SLIP1, BoundaryTag.SLIP2)]
    st = UzawaState(np.zeros(system.n_free), np.zeros(nv), *lam, u_full=u_full)
    return LevelSolution(str(n), 1.0 / n, mesh, system, st)


# ---------------------------------------------------------------- compute_errors

def test_identical_solutions_give_zero(sol8):
    row = compute_errors(sol8, sol8)
    for k in ("err_u_L2", "err_u_H1", "err_p_L2", "err_lam1", "err_lam2"):
        assert getattr(row, k) <= 1e-14, k


def test_constant_pressure_difference(sol8):
    shifted = _with_fields(sol8, p=sol8.state.p + 1.0)
    row = compute_errors(shifted, sol8)
    assert row.err_p_L2 == pytest.approx(1.0, abs=1e-12)
    assert row.err_u_L2 <= 1e-14


def test_linear_field_is_reproduced_exactly():
    row = compute_errors(_linear_solution(4), _linear_solution(16))
    assert row.err_u_H1 <= 1e-12 and row.err_u_L2 <= 1e-12


def test_semi_norm_switch(sol8):
    ref = _with_fields(sol8, u_full=sol8.state.u_full * 1.1)
    full = compute_errors(sol8, ref, h1="full")
    semi = compute_errors(sol8, ref, h1="semi")
    assert full.err_u_H1 == pytest.approx(math.hypot(full.err_u_L2, semi.err_u_H1), rel=1e-12)


def test_error_against_finer_reference(sol8):
    e = compute_errors(sol8, solve_example1(16)[0])
    assert 0 < e.err_u_L2 < e.err_u_H1
    assert e.err_p_L2 > 0 and e.err_lam1 > 0 and e.err_lam2 > 0


def test_point_outside_coarse_mesh(sol8):
    small = structured_unit_square(4)
    shrunk = TriangleMesh(small.vertices * 0.9, small.cells, small.facets, small.facet_tags)
    coarse = LevelSolution("s", 0.25, shrunk, assemble(shrunk, 1.0), sol8.state)
    with pytest.raises(PointLocationError) as exc:
        compute_errors(coarse, sol8)
    assert len(exc.value.points) > 0
    assert np.all(np.max(exc.value.points, axis=1) > 0.9 - 1e-12)


def test_boundary_coordinate_conventions():
    pts = np.array([[0.7, 0.6], [0.5, 0.8], [0.3, 0.6], [0.5, 0.4]])
    np.testing.assert_allclose(boundary_coordinate(pts, "angle"), [0, np.pi / 2, np.pi, 3 * np.pi / 2], atol=1e-15)
    np.testing.assert_array_equal(boundary_coordinate(pts, "x"), pts[:, 0])


def test_periodic_interpolation_wraps():
    s = np.array([0.5, 2.0, 4.0, 6.0])
    v = np.column_stack([s, 2 * s])
    out = interpolate_boundary(s, v, np.array([1.0, 0.1]), periodic=True)
    assert out[0, 0] == pytest.approx(0.5 + (2.0 - 0.5) * (0.5 / 1.5))
    # between 6.0 and 0.5 + 2 pi the value goes back from 6 to 0.5
    t = (0.1 + 2 * np.pi - 6.0) / (0.5 + 2 * np.pi - 6.0)
    assert out[1, 0] == pytest.approx(6.0 + t * (0.5 - 6.0))


# ---------------------------------------------------------------- orders

def test_order_examples():
    assert convergence_order(1.0, 0.5) == pytest.approx(1.0)
    assert convergence_order(1.0, 0.25) == pytest.approx(2.0)
    assert round(convergence_order(6.505e-03, 1.860e-03), 2) == 1.81
    assert convergence_order(0.0, 1.0) is None and convergence_order(1.0, -1.0) is None


# ---------------------------------------------------------------- configuration

def test_config_parsing():
    cfg = StudyConfig.from_text("""
        # comment
        geometry = gmsh
        levels = a.msh, b.msh
        h = 1/8, 1/16
        reference = c.msh
        reference_h = 1/32
        tag_map = 1: dirichlet, 2: slip1, 3: slip2
        rho = 10
        max_iter = 400
        circle_center = 0.5, 0.6
        profiles = no
    """)
    assert cfg.levels == ("a.msh", "b.msh")
    assert cfg.h == (0.125, 0.0625) and cfg.reference_h == 1 / 32
    assert cfg.tag_map[3] == BoundaryTag.SLIP2
    assert cfg.max_iter == 400 and cfg.rho == 10.0 and cfg.circle_center == (0.5, 0.6)
    assert cfg.profiles is False
    assert cfg.uzawa.max_iter == 400


def test_shipped_configs_parse():
    from pathlib import Path
    root = Path(__file__).resolve().parents[1] / "configs"
    e1 = StudyConfig.from_file(root / "example1.cfg")
    assert e1.levels == (8, 16, 32, 64) and e1.reference == 128
    assert (e1.rho, e1.max_iter, e1.tol) == (10.0, 200, 1e-6)
    e2 = StudyConfig.from_file(root / "example2.cfg")
    assert e2.geometry == "gmsh" and e2.coord_slip1 == "angle"


@pytest.mark.parametrize("text, msg", [
    ("bogus = 1", "unknown config keys"),
    ("levels = 8, 16\nreference = 16", "finer"),
    ("mu = -1", "positive"),
    ("no equals sign", "key = value"),
    ("geometry = cube", "geometry"),
])
def test_config_errors(text, msg):
    with pytest.raises(ValueError, match=msg):
        StudyConfig.from_text(text)


def test_zero_forcing_study(tmp_path):
    cfg = StudyConfig(levels=(4, 8), reference=16, source="zero", out_dir=str(tmp_path))
    res = run_study(cfg)
    for r in res.report.rows:
        assert (r.err_u_L2, r.err_u_H1, r.err_p_L2, r.err_lam1, r.err_lam2) == (0, 0, 0, 0, 0)
        assert 1 <= r.iterations <= 2
    assert res.reference.iterations <= 2
    # all orders undefined, with blank CSV cells
    rows = read_csv(res.paths["csv"])
    assert all(rec["ord_u_L2"] is None for rec in rows)


def test_study_writes_artifacts(tmp_path):
    cfg = StudyConfig(levels=(4, 8), reference=16, out_dir=str(tmp_path), increments=True)
    res = run_study(cfg)
    assert (tmp_path / "table.txt").exists() and (tmp_path / "errors.csv").exists()
    assert (tmp_path / "increments_reference.csv").exists() and (tmp_path / "increments_8.csv").exists()
    for p in res.paths["profiles"]:
        with open(p, newline="") as fh:
            assert next(csv.reader(fh)) == PROFILE_COLUMNS
    assert res.report.reference_norms["ref_u_L2"] > 0


def test_missing_mesh_is_reported():
    cfg = StudyConfig(geometry="gmsh", levels=("missing.msh",), reference="example2_h16.msh", out_dir="unused")
    with pytest.raises(StudyError, match="missing.msh"):
        run_study(cfg, write=False)


# ---------------------------------------------------------------- output formats

def _report(n):
    rows = [ErrorRow(1 / 2 ** (3 + i), 1e-2 / 4 ** i * (1 + 0.1 * i), 1e-1 / 2 ** i, 7e-2 / 3 ** i, 0.3 / 2 ** i,
                     0.2 / 2 ** i, 100 + i) for i in range(n)]
    return ErrorReport(rows)


def test_csv_single_level_has_blank_orders(tmp_path):
    path = tmp_path / "e.csv"
    emit_csv(_report(1), path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == CSV_COLUMNS
    assert len(rows) == 2
    for k in CSV_COLUMNS:
        if k.startswith("ord_"):
            assert rows[1][CSV_COLUMNS.index(k)] == ""


def test_csv_two_levels_carry_orders(tmp_path):
    path = tmp_path / "e.csv"
    emit_csv(_report(2), path)
    rec = read_csv(path)
    assert rec[0]["ord_u_H1"] is None
    assert rec[1]["ord_u_H1"] == pytest.approx(1.0, abs=1e-14)
    assert rec[1]["ord_p_L2"] == pytest.approx(math.log2(3), abs=1e-14)


def test_csv_round_trip_twelve_digits(tmp_path):
    rep = _report(3)
    path = tmp_path / "e.csv"
    emit_csv(rep, path)
    rec = read_csv(path)
    for r, d in zip(rep.rows, rec):
        for k in ("h", "err_u_L2", "err_u_H1", "err_p_L2", "err_lam1", "err_lam2"):
            assert float(f"{getattr(r, k):.12g}") == float(f"{d[k]:.12g}")
        assert d["iterations"] == r.iterations


def test_table_layout():
    text = emit_table(_report(2))
    lines = text.splitlines()
    assert "order" in lines[0] and "iters" in lines[0]
    assert lines[2].split()[0] == "1/8" and lines[3].split()[0] == "1/16"
    assert lines[2].split()[2] == "-"
    assert len({len(l) for l in lines[:4]}) == 1


def test_profile_rows_sorted(tmp_path, sol8):
    paths = write_profiles(sol8, *EXAMPLE1_FRICTION, tmp_path)
    assert len(paths) == 2
    for p in paths:
        data = np.loadtxt(p, delimiter=",", skiprows=1)
        assert np.all(np.diff(data[:, 0]) >= 0)
        np.testing.assert_allclose(data[:, 5], np.hypot(data[:, 3], data[:, 4]), rtol=1e-15)
