"""Mesh-refinement studies against a fine-mesh reference solution.

Coarse solutions are evaluated at the quadrature points of the reference mesh,
so every norm is integrated on the reference triangulation.  Boundary
multipliers are compared along a scalar boundary coordinate (``x`` or the polar
angle about a center) by piecewise-linear interpolation between coarse
multiplier vertices.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .fem_stokes import StokesSystem, assemble, evaluate
from .friction import MonotoneFriction, NonmonotoneFriction, omega
from .mesh import BoundaryTag, TriangleMesh, load_gmsh_file, structured_unit_square
from .quadrature import triangle_rule
from .uzawa import UzawaConfig, UzawaSolver, UzawaState, recover_traction

log = logging.getLogger(__name__)

DATA_DIR = Path(__file__).resolve().parent / "data"

CSV_COLUMNS = ["h", "err_u_L2", "ord_u_L2", "err_u_H1", "ord_u_H1", "err_p_L2", "ord_p_L2",
               "err_lam1", "ord_lam1", "err_lam2", "ord_lam2", "iterations"]
ERROR_KEYS = ["err_u_L2", "err_u_H1", "err_p_L2", "err_lam1", "err_lam2"]


class StudyError(RuntimeError):
    pass


class PointLocationError(StudyError):
    def __init__(self, message, points):
        super().__init__(message)
        self.points = points


# ----------------------------------------------------------------------
# sources
# ----------------------------------------------------------------------
def channel_source(x, y):
    """Source term of the flow driven in the unit square (used by both examples)."""
    fx = 2 * (-10 * (1 - 6 * x + 6 * x ** 2) * y * (1 - y) * (1 - 2 * y)
              + 30 * x ** 2 * (1 - x) ** 2 * (1 - 2 * y) - (1 - 2 * y))
    fy = 2 * (10 * (1 - 6 * y + 6 * y ** 2) * x * (1 - x) * (1 - 2 * x)
              - 30 * y ** 2 * (1 - y) ** 2 * (1 - 2 * x) - (1 - 2 * x))
    return fx, fy


def zero_source(x, y):
    return np.zeros_like(x), np.zeros_like(x)


SOURCES = {"channel": channel_source, "zero": zero_source}


# ----------------------------------------------------------------------
# configuration
# ----------------------------------------------------------------------
def _resolve_mesh_path(name, base):
    p = Path(name)
    if not p.is_absolute() and base is not None and (Path(base) / p).exists():
        return str(Path(base) / p)
    if p.exists():
        return str(p)
    if (DATA_DIR / p.name).exists():
        return str(DATA_DIR / p.name)
    raise StudyError(f"mesh file not found: {name}")


def parse_tag_map(text):
    """``"1: dirichlet, 2: slip1"`` -> {1: BoundaryTag.DIRICHLET, 2: BoundaryTag.SLIP1}."""
    out = {}
    for item in text.split(","):
        if not item.strip():
            continue
        k, v = item.split(":")
        out[int(k)] = BoundaryTag.parse(v.strip())
    return out


@dataclass
class StudyConfig:
    geometry: str = "structured"          # structured | gmsh
    levels: tuple = (8, 16, 32)           # n per side, or Gmsh file names
    reference: object = 128
    h: tuple = None                       # nominal h per level (Gmsh); default 1/n or h_max
    reference_h: float = None
    mu: float = 1.0
    g: float = 0.2
    a: float = 0.35
    b: float = 0.25
    beta: float = 1.0
    rho: float = 10.0
    max_iter: int = 200
    tol: float = 1e-6
    source: str = "channel"
    tag_map: dict = field(default_factory=lambda: {1: BoundaryTag.DIRICHLET, 2: BoundaryTag.SLIP1,
                                                    3: BoundaryTag.SLIP2})
    h1: str = "full"                      # full | semi
    coord_slip1: str = "x"                # x | angle
    coord_slip2: str = "x"
    circle_center: tuple = (0.5, 0.6)
    outside_tol: float = None             # default: 1e-10 structured, h_coarse^2 for Gmsh
    out_dir: str = "study_out"
    table: str = "table.txt"
    csv: str = "errors.csv"
    profiles: bool = True
    increments: bool = False
    workers: int = 1
    base_dir: str = None

    def __post_init__(self):
        if self.geometry not in ("structured", "gmsh"):
            raise ValueError("geometry must be 'structured' or 'gmsh'")
        if self.h1 not in ("full", "semi"):
            raise ValueError("h1 must be 'full' or 'semi'")
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")
        for k in ("mu", "g", "a", "b", "beta", "rho", "tol"):
            if not getattr(self, k) > 0:
                raise ValueError(f"{k} must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        for c in (self.coord_slip1, self.coord_slip2):
            if c not in ("x", "angle"):
                raise ValueError("boundary coordinate must be 'x' or 'angle'")
        if not self.levels:
            raise ValueError("at least one study level is needed")
        if self.geometry == "structured":
            self.levels = tuple(int(n) for n in self.levels)
            self.reference = int(self.reference)
            if self.reference <= max(self.levels):
                raise ValueError("reference level must be finer than every study level")
        else:
            self.levels = tuple(str(s) for s in self.levels)
            self.reference = str(self.reference)
            if self.h is not None and self.reference_h is not None and self.reference_h >= min(self.h):
                raise ValueError("reference level must be finer than every study level")
        if self.h is not None and len(self.h) != len(self.levels):
            raise ValueError("one h per level is needed")

    @property
    def friction(self):
        return MonotoneFriction(self.g), NonmonotoneFriction(self.a, self.b, self.beta)

    @property
    def uzawa(self):
        return UzawaConfig(self.rho, self.max_iter, self.tol)

    @classmethod
    def from_text(cls, text, base_dir=None):
        kv = {}
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"expected 'key = value': {raw!r}")
            k, v = (s.strip() for s in line.split("=", 1))
            kv[k] = v
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(kv) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        args = {"base_dir": base_dir}
        lst = lambda s: tuple(x.strip() for x in s.split(",") if x.strip())
        for k, v in kv.items():
            if k in ("levels",):
                args[k] = lst(v)
            elif k in ("h",):
                args[k] = tuple(_num(x) for x in lst(v))
            elif k == "circle_center":
                args[k] = tuple(float(x) for x in lst(v))
            elif k == "tag_map":
                args[k] = parse_tag_map(v)
            elif k in ("max_iter", "workers"):
                args[k] = int(v)
            elif k in ("profiles", "increments"):
                args[k] = v.lower() in ("1", "true", "yes", "on")
            elif k in ("mu", "g", "a", "b", "beta", "rho", "tol", "reference_h", "outside_tol"):
                args[k] = _num(v)
            else:
                args[k] = v
        return cls(**args)

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            return cls.from_text(fh.read(), base_dir=str(Path(path).resolve().parent))


def _num(s):
    s = s.strip()
    if "/" in s:
        a, b = s.split("/")
        return float(a) / float(b)
    return float(s)


# ----------------------------------------------------------------------
# solving one level
# ----------------------------------------------------------------------
@dataclass
class LevelSolution:
    label: str
    h: float
    mesh: TriangleMesh
    system: StokesSystem
    state: UzawaState

    @property
    def iterations(self):
        return self.state.iteration


def load_level_mesh(cfg: StudyConfig, level) -> TriangleMesh:
    if cfg.geometry == "structured":
        return structured_unit_square(int(level))
    return load_gmsh_file(_resolve_mesh_path(level, cfg.base_dir), cfg.tag_map)


def solve_level(cfg: StudyConfig, level, h=None, label=None) -> LevelSolution:
    mesh = load_level_mesh(cfg, level)
    if h is None:
        h = 1.0 / int(level) if cfg.geometry == "structured" else mesh.h_max()
    system = assemble(mesh, cfg.mu, SOURCES[cfg.source])
    f1, f2 = cfg.friction
    try:
        state = UzawaSolver(system, f1, f2, cfg.uzawa).run()
    except Exception as exc:
        raise StudyError(f"level {level}: {exc}") from exc
    return LevelSolution(label or str(level), float(h), mesh, system, state)


# ----------------------------------------------------------------------
# errors
# ----------------------------------------------------------------------
def boundary_coordinate(points, kind, center=(0.5, 0.6)):
    """Scalar boundary parameter: the x coordinate or the angle in [0, 2 pi)."""
    points = np.asarray(points, dtype=float)
    if kind == "x":
        return points[:, 0].copy()
    ang = np.arctan2(points[:, 1] - center[1], points[:, 0] - center[0])
    return np.mod(ang, 2 * np.pi)


def interpolate_boundary(s_nodes, values, s_query, periodic=False):
    """Piecewise-linear interpolation of (n, k) nodal values along a boundary parameter."""
    o = np.argsort(s_nodes)
    s, v = s_nodes[o], values[o]
    out = np.empty((len(s_query), v.shape[1]))
    for j in range(v.shape[1]):
        out[:, j] = np.interp(s_query, s, v[:, j], period=2 * np.pi if periodic else None)
    return out


@dataclass
class ErrorRow:
    h: float
    err_u_L2: float
    err_u_H1: float
    err_p_L2: float
    err_lam1: float
    err_lam2: float
    iterations: int


def _reference_quadrature(mesh, degree=6):
    bary, w = triangle_rule(degree)
    nc = mesh.n_cells
    cells = np.repeat(np.arange(nc), len(w))
    B = np.tile(bary, (nc, 1))
    W = np.repeat(mesh.cell_areas(), len(w)) * np.tile(w, nc)
    pts = np.einsum("nk,nkd->nd", B, mesh.vertices[mesh.cells[cells]])
    return cells, B, W, pts


def field_norms(sol: LevelSolution, h1="full"):
    """L2/H1 norms of u, L2 of p and boundary L2 of both multipliers."""
    cells, B, W, _ = _reference_quadrature(sol.mesh)
    v, g, p = evaluate(sol.system, sol.state.u_full, sol.state.p, cells, B)
    l2 = math.sqrt(float(W @ (v ** 2).sum(1)))
    semi = math.sqrt(float(W @ (g ** 2).sum((1, 2))))
    out = {"u_L2": l2, "u_H1": math.hypot(l2, semi) if h1 == "full" else semi,
           "p_L2": math.sqrt(float(W @ p ** 2))}
    for name, tag, lam in (("lam1", BoundaryTag.SLIP1, sol.state.lam1), ("lam2", BoundaryTag.SLIP2, sol.state.lam2)):
        t = sol.system.traces[tag]
        lq = t.interp @ lam if t.n_points else np.zeros((0, 2))
        out[name] = math.sqrt(float(t.weights @ (lq ** 2).sum(1))) if t.n_points else 0.0
    return out


def compute_errors(coarse: LevelSolution, ref: LevelSolution, h1="full", outside_tol=1e-10,
                   coords=("x", "x"), center=(0.5, 0.6)) -> ErrorRow:
    """Errors of ``coarse`` against ``ref``, integrated on the reference mesh."""
    cells, B, W, pts = _reference_quadrature(ref.mesh)
    grid = _kernels.BucketGrid(coarse.mesh.vertices, coarse.mesh.cells)
    cc, cb, dist = _kernels.locate_points(grid, pts, tol=1e-12)
    bad = dist > outside_tol
    if np.any(bad):
        raise PointLocationError(f"{int(bad.sum())} reference points lie outside the coarse mesh, "
                                 f"first at {pts[bad][0].tolist()}", pts[bad])
    vr, gr, pr = evaluate(ref.system, ref.state.u_full, ref.state.p, cells, B)
    vc, gc, pc = evaluate(coarse.system, coarse.state.u_full, coarse.state.p, cc, cb)
    l2 = math.sqrt(float(W @ ((vr - vc) ** 2).sum(1)))
    semi = math.sqrt(float(W @ ((gr - gc) ** 2).sum((1, 2))))
    eh1 = math.hypot(l2, semi) if h1 == "full" else semi
    ep = math.sqrt(float(W @ (pr - pc) ** 2))
    elam = []
    for tag, kind, lr, lc in ((BoundaryTag.SLIP1, coords[0], ref.state.lam1, coarse.state.lam1),
                              (BoundaryTag.SLIP2, coords[1], ref.state.lam2, coarse.state.lam2)):
        tr, tc = ref.system.traces[tag], coarse.system.traces[tag]
        if not tr.n_points:
            elam.append(0.0)
            continue
        lam_r = tr.interp @ lr
        s_q = boundary_coordinate(tr.points, kind, center)
        s_c = boundary_coordinate(coarse.mesh.vertices[tc.vertices], kind, center)
        lam_c = interpolate_boundary(s_c, lc, s_q, periodic=(kind == "angle"))
        elam.append(math.sqrt(float(tr.weights @ ((lam_r - lam_c) ** 2).sum(1))))
    return ErrorRow(coarse.h, l2, eh1, ep, elam[0], elam[1], coarse.iterations)


def convergence_order(e_coarse, e_fine):
    """log2(e_coarse / e_fine); None when either error is not positive."""
    if not (e_coarse > 0 and e_fine > 0):
        return None
    return math.log2(e_coarse / e_fine)


@dataclass
class ErrorReport:
    rows: list
    reference_norms: dict = field(default_factory=dict)

    def orders(self, key):
        """One entry per row: None for the first row and wherever undefined."""
        out = [None]
        for prev, cur in zip(self.rows, self.rows[1:]):
            out.append(convergence_order(getattr(prev, key), getattr(cur, key)))
        return out


# ----------------------------------------------------------------------
# output
# ----------------------------------------------------------------------
def _fmt_h(h):
    inv = 1.0 / h if h > 0 else 0
    return f"1/{round(inv)}" if h > 0 and abs(inv - round(inv)) < 1e-9 else f"{h:.4g}"


def emit_table(report: ErrorReport, path=None) -> str:
    """Aligned text table with errors, orders and iteration counts."""
    head = ["h", "|u-u*|_L2", "order", "|u-u*|_H1", "order", "|p-p*|_L2", "order",
            "|l1-l1*|", "order", "|l2-l2*|", "order", "iters"]
    orders = {k: report.orders(k) for k in ERROR_KEYS}
    body = []
    for i, r in enumerate(report.rows):
        line = [_fmt_h(r.h)]
        for k in ERROR_KEYS:
            o = orders[k][i]
            line += [f"{getattr(r, k):.3e}", "-" if o is None else f"{o:.2f}"]
        line.append(str(r.iterations))
        body.append(line)
    widths = [max(len(x) for x in col) for col in zip(head, *body)]
    fmt = lambda row: "  ".join(x.rjust(w) for x, w in zip(row, widths))
    lines = [fmt(head), fmt(["-" * w for w in widths])] + [fmt(b) for b in body]
    if report.reference_norms:
        lines.append("")
        lines.append("reference norms: " + ", ".join(f"{k}={v:.4e}" for k, v in report.reference_norms.items()))
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def emit_csv(report: ErrorReport, path):
    orders = {k: report.orders(k) for k in ERROR_KEYS}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for i, r in enumerate(report.rows):
            row = [f"{r.h:.17g}"]
            for k in ERROR_KEYS:
                o = orders[k][i]
                row += [f"{getattr(r, k):.17g}", "" if o is None else f"{o:.17g}"]
            row.append(str(r.iterations))
            w.writerow(row)


def read_csv(path):
    """Parse an emitted error CSV; blank cells come back as None."""
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if header != CSV_COLUMNS:
            raise StudyError(f"unexpected columns {header}")
        out = []
        for row in rd:
            rec = {}
            for k, v in zip(header, row):
                rec[k] = None if v == "" else (int(v) if k == "iterations" else float(v))
            out.append(rec)
    return out


PROFILE_COLUMNS = ["s", "x", "y", "u_tau_x", "u_tau_y", "abs_u_tau", "sigma_tau_x", "sigma_tau_y", "abs_sigma_tau"]


def boundary_profiles(sol: LevelSolution, fric1, fric2, coords=("x", "x"), center=(0.5, 0.6)):
    """Per slip tag: rows of PROFILE_COLUMNS sorted by the boundary coordinate."""
    out = {}
    for tag, tr in recover_traction(sol.system, sol.state, fric1, fric2).items():
        kind = coords[0] if tag == BoundaryTag.SLIP1 else coords[1]
        s = boundary_coordinate(tr.points, kind, center)
        rows = np.column_stack([s, tr.points, tr.u_tau, np.linalg.norm(tr.u_tau, axis=1),
                                tr.sigma_tau, np.linalg.norm(tr.sigma_tau, axis=1)])
        out[tag] = rows[np.argsort(s)]
    return out


def write_profiles(sol, fric1, fric2, out_dir, prefix="profile", coords=("x", "x"), center=(0.5, 0.6)):
    paths = []
    for tag, rows in boundary_profiles(sol, fric1, fric2, coords, center).items():
        path = os.path.join(out_dir, f"{prefix}_{tag.name.lower()}.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(PROFILE_COLUMNS)
            for r in rows:
                w.writerow([f"{x:.17g}" for x in r])
        paths.append(path)
    return paths


def stick_interval(sol: LevelSolution, fric1, fric2, tag=BoundaryTag.SLIP1, select=None, rel_margin=1e-3):
    """x-range of multiplier vertices whose traction stays below the friction bound.

    ``select`` is an optional mask over the tag's vertices (for example the lower
    half of a hole).  Returns None without stick vertices.
    """
    tr = recover_traction(sol.system, sol.state, fric1, fric2)[tag]
    if tag == BoundaryTag.SLIP1:
        bound = fric1.g
    else:
        bound = omega(fric2, np.linalg.norm(tr.u_tau, axis=1))
    stick = np.linalg.norm(tr.sigma_tau, axis=1) < bound * (1 - rel_margin)
    if select is not None:
        stick &= select(tr.points)
    if not stick.any():
        return None
    xs = tr.points[stick, 0]
    return float(xs.min()), float(xs.max())


# ----------------------------------------------------------------------
# driver
# ----------------------------------------------------------------------
@dataclass
class StudyResult:
    report: ErrorReport
    reference: LevelSolution
    levels: list
    paths: dict


def run_study(cfg: StudyConfig, write=True) -> StudyResult:
    """Solve the reference level, then every study level; report errors and orders."""
    coords = (cfg.coord_slip1, cfg.coord_slip2)
    ref = solve_level(cfg, cfg.reference, h=cfg.reference_h, label="reference")
    hs = cfg.h or [None] * len(cfg.levels)
    with ThreadPoolExecutor(max(1, cfg.workers)) as ex:
        sols = list(ex.map(lambda lh: solve_level(cfg, lh[0], h=lh[1]), zip(cfg.levels, hs)))
    if any(s.h <= ref.h for s in sols):
        raise StudyError("reference level must be finer than every study level")
    rows = []
    for s in sols:
        tol = cfg.outside_tol
        if tol is None:
            tol = 1e-10 if cfg.geometry == "structured" else s.mesh.h_max() ** 2
        try:
            rows.append(compute_errors(s, ref, cfg.h1, tol, coords, cfg.circle_center))
        except Exception as exc:
            raise StudyError(f"level {s.label}: {exc}") from exc
    report = ErrorReport(rows, {f"ref_{k}": v for k, v in field_norms(ref, cfg.h1).items()})
    paths = {}
    if write:
        os.makedirs(cfg.out_dir, exist_ok=True)
        paths["table"] = os.path.join(cfg.out_dir, cfg.table)
        paths["csv"] = os.path.join(cfg.out_dir, cfg.csv)
        emit_table(report, paths["table"])
        emit_csv(report, paths["csv"])
        if cfg.profiles:
            f1, f2 = cfg.friction
            paths["profiles"] = write_profiles(ref, f1, f2, cfg.out_dir, "reference_profile", coords, cfg.circle_center)
        if cfg.increments:
            for s in [ref] + sols:
                p = os.path.join(cfg.out_dir, f"increments_{Path(s.label).stem}.csv")
                s.state.write_increments(p)
    return StudyResult(report, ref, sols, paths)
