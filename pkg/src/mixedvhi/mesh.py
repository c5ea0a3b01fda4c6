"""Triangle meshes with tagged boundary facets."""

from __future__ import annotations

import enum
import io
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


class BoundaryTag(enum.IntEnum):
    DIRICHLET = 0
    SLIP1 = 1
    SLIP2 = 2

    @classmethod
    def parse(cls, name):
        key = str(name).strip().upper().replace("_", "")
        aliases = {"DIRICHLET": cls.DIRICHLET, "D": cls.DIRICHLET,
                   "SLIP1": cls.SLIP1, "S1": cls.SLIP1,
                   "SLIP2": cls.SLIP2, "S2": cls.SLIP2}
        if key not in aliases:
            raise ValueError(f"unknown boundary tag {name!r}")
        return aliases[key]


class MeshError(ValueError):
    pass


class GmshParseError(MeshError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class FacetGeometry:
    length: float
    outward_normal: np.ndarray
    tangent: np.ndarray


@dataclass
class TriangleMesh:
    vertices: np.ndarray          # (nv, 2)
    cells: np.ndarray             # (nc, 3), counter-clockwise
    facets: np.ndarray            # (nf, 2) boundary vertex pairs
    facet_tags: np.ndarray        # (nf,) BoundaryTag values
    facet_cells: np.ndarray = field(default=None)   # owning cell per facet
    orientation_fixes: int = 0

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.cells = np.asarray(self.cells, dtype=np.int64).reshape(-1, 3)
        self.facets = np.asarray(self.facets, dtype=np.int64).reshape(-1, 2)
        self.facet_tags = np.asarray(self.facet_tags, dtype=np.int64).reshape(-1)
        self.orientation_fixes += _orient_ccw(self.vertices, self.cells)
        if self.facet_cells is None:
            self.facet_cells = _owner_cells(self.cells, self.facets)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_cells(self):
        return len(self.cells)

    def cell_areas(self):
        p = self.vertices[self.cells]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def facets_with(self, tag):
        return np.nonzero(self.facet_tags == int(tag))[0]

    def boundary_edges(self):
        """All edges that belong to a single cell, tagged or not."""
        e = np.sort(np.concatenate([self.cells[:, [0, 1]], self.cells[:, [1, 2]],
                                    self.cells[:, [2, 0]]]), axis=1)
        uniq, counts = np.unique(e, axis=0, return_counts=True)
        return uniq[counts == 1]

    def h_max(self):
        p = self.vertices[self.cells]
        lens = [np.linalg.norm(p[:, i] - p[:, (i + 1) % 3], axis=1) for i in range(3)]
        return float(np.max(lens))

    def vertex_normals(self, tags=(BoundaryTag.SLIP1, BoundaryTag.SLIP2)):
        """Length-weighted averaged outward normals at vertices of the given facets."""
        acc = np.zeros_like(self.vertices)
        sel = np.isin(self.facet_tags, [int(t) for t in tags])
        for f in np.nonzero(sel)[0]:
            g = facet_geometry(self, f)
            for v in self.facets[f]:
                acc[v] += g.length * g.outward_normal
        norm = np.linalg.norm(acc, axis=1)
        has = norm > 0
        acc[has] /= norm[has, None]
        return acc, has


def _orient_ccw(vertices, cells):
    p = vertices[cells]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    flip = det < 0
    if flip.any():
        cells[flip, 1], cells[flip, 2] = cells[flip, 2].copy(), cells[flip, 1].copy()
    return int(flip.sum())


def _owner_cells(cells, facets):
    if len(facets) == 0:
        return np.zeros(0, dtype=np.int64)
    edges = np.concatenate([cells[:, [0, 1]], cells[:, [1, 2]], cells[:, [2, 0]]])
    owner = np.tile(np.arange(len(cells)), 3)
    key_e = np.sort(edges, axis=1)
    lookup = {}
    for (a, b), c in zip(map(tuple, key_e), owner):
        lookup.setdefault((a, b), []).append(c)
    out = np.full(len(facets), -1, dtype=np.int64)
    for i, (a, b) in enumerate(np.sort(facets, axis=1)):
        owners = lookup.get((int(a), int(b)), [])
        if len(owners) == 1:
            out[i] = owners[0]
        elif len(owners) > 1:
            out[i] = -2      # interior edge tagged as boundary
    return out


def structured_unit_square(n: int) -> TriangleMesh:
    """Uniform n x n grid of squares, each cut along the bottom-left to top-right diagonal.

    Left and right sides are Dirichlet, top is Slip1, bottom is Slip2.
    """
    if n < 1:
        raise ValueError("structured_unit_square needs n >= 1")
    x = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(x, x, indexing="xy")
    verts = np.column_stack([X.ravel(), Y.ravel()])
    vid = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)     # [row j (y), col i (x)]
    v00 = vid[:-1, :-1].ravel()
    v10 = vid[:-1, 1:].ravel()
    v01 = vid[1:, :-1].ravel()
    v11 = vid[1:, 1:].ravel()
    cells = np.concatenate([np.column_stack([v00, v10, v11]),
                            np.column_stack([v00, v11, v01])])
    bottom = np.column_stack([vid[0, :-1], vid[0, 1:]])
    right = np.column_stack([vid[:-1, -1], vid[1:, -1]])
    top = np.column_stack([vid[-1, 1:], vid[-1, :-1]])
    left = np.column_stack([vid[1:, 0], vid[:-1, 0]])
    facets = np.concatenate([bottom, right, top, left])
    tags = np.concatenate([np.full(n, BoundaryTag.SLIP2), np.full(n, BoundaryTag.DIRICHLET),
                           np.full(n, BoundaryTag.SLIP1), np.full(n, BoundaryTag.DIRICHLET)])
    return TriangleMesh(verts, cells, facets, tags)


def facet_geometry(mesh: TriangleMesh, facet_id: int) -> FacetGeometry:
    if not 0 <= facet_id < len(mesh.facets):
        raise IndexError(f"facet {facet_id} out of range")
    a, b = mesh.facets[facet_id]
    pa, pb = mesh.vertices[a], mesh.vertices[b]
    t = pb - pa
    L = float(np.hypot(*t))
    t = t / L
    n = np.array([t[1], -t[0]])
    c = mesh.facet_cells[facet_id]
    if c >= 0:
        opposite = [v for v in mesh.cells[c] if v != a and v != b][0]
        mid = 0.5 * (pa + pb)
        if np.dot(n, mesh.vertices[opposite] - mid) > 0:
            n = -n
    tangent = np.array([-n[1], n[0]])
    return FacetGeometry(L, n, tangent)


def facet_geometry_all(mesh: TriangleMesh, ids=None):
    """Vectorized facet lengths, outward normals and tangents."""
    ids = np.arange(len(mesh.facets)) if ids is None else np.asarray(ids)
    a = mesh.facets[ids, 0]
    b = mesh.facets[ids, 1]
    pa, pb = mesh.vertices[a], mesh.vertices[b]
    t = pb - pa
    L = np.hypot(t[:, 0], t[:, 1])
    t = t / L[:, None]
    n = np.column_stack([t[:, 1], -t[:, 0]])
    cells = mesh.cells[mesh.facet_cells[ids]]
    opp = cells.sum(axis=1) - a - b
    mid = 0.5 * (pa + pb)
    s = np.einsum("ij,ij->i", n, mesh.vertices[opp] - mid)
    n[s > 0] *= -1
    tan = np.column_stack([-n[:, 1], n[:, 0]])
    return L, n, tan


@dataclass
class ValidationReport:
    ok: bool
    orientation_fixes: int
    min_angle_deg: float
    untagged_facets: list
    duplicate_vertices: int
    messages: list

    def raise_if_failed(self):
        if not self.ok:
            raise MeshError("; ".join(self.messages))


def validate(mesh: TriangleMesh) -> ValidationReport:
    msgs = []
    p = mesh.vertices[mesh.cells]
    angles = []
    for i in range(3):
        u = p[:, (i + 1) % 3] - p[:, i]
        v = p[:, (i + 2) % 3] - p[:, i]
        cosang = np.einsum("ij,ij->i", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        angles.append(np.degrees(np.arccos(np.clip(cosang, -1, 1))))
    min_angle = float(np.min(angles)) if len(mesh.cells) else 0.0

    tagged = {tuple(sorted(f)) for f in mesh.facets.tolist()}
    untagged = [tuple(e) for e in mesh.boundary_edges().tolist() if tuple(e) not in tagged]
    for e in untagged:
        msgs.append(f"untagged boundary facet {e}")
    bad_owner = np.nonzero(mesh.facet_cells < 0)[0]
    for f in bad_owner:
        msgs.append(f"facet {f} {tuple(mesh.facets[f])} is not on the boundary of exactly one cell")
    if np.any(mesh.cell_areas() <= 0):
        msgs.append("degenerate cell")

    q = np.round(mesh.vertices / 1e-12).astype(np.int64)
    dup = len(q) - len(np.unique(q, axis=0))
    if dup:
        msgs.append(f"{dup} duplicate vertices")

    ok = not untagged and len(bad_owner) == 0 and dup == 0 and not np.any(mesh.cell_areas() <= 0)
    return ValidationReport(ok, mesh.orientation_fixes, min_angle, untagged, dup, msgs)


# ---------------------------------------------------------------------------
# Gmsh MSH 2.2 ASCII
# ---------------------------------------------------------------------------

def parse_gmsh(text, tag_map) -> TriangleMesh:
    """Read an ASCII MSH 2.2 mesh.

    ``tag_map`` maps physical group ids of line elements to :class:`BoundaryTag`.
    Only element types 1 (2-node line) and 2 (3-node triangle) are kept; the
    count of skipped elements is logged.
    """
    if isinstance(text, (bytes, bytearray)):
        text = text.decode("ascii")
    if hasattr(text, "read"):
        text = text.read()
        if isinstance(text, bytes):
            text = text.decode("ascii")
    tag_map = {int(k): BoundaryTag.parse(v) if not isinstance(v, BoundaryTag) else v
               for k, v in tag_map.items()}
    lines = text.splitlines()
    pos = 0

    def expect(header):
        nonlocal pos
        while pos < len(lines) and not lines[pos].strip():
            pos += 1
        if pos >= len(lines) or lines[pos].strip() != header:
            got = lines[pos].strip() if pos < len(lines) else "<eof>"
            raise GmshParseError(f"expected {header}, found {got!r}", pos + 1)
        pos += 1

    def next_line():
        nonlocal pos
        if pos >= len(lines):
            raise GmshParseError("unexpected end of file", pos + 1)
        pos += 1
        return lines[pos - 1]

    expect("$MeshFormat")
    fmt = next_line().split()
    if len(fmt) < 3 or not fmt[0].startswith("2"):
        raise GmshParseError(f"unsupported MSH version {fmt[:1]}", pos)
    if fmt[1] != "0":
        raise GmshParseError("binary MSH is not supported", pos)
    expect("$EndMeshFormat")

    node_index = {}
    coords = []
    tris = []
    lines_el = []
    skipped = 0
    have_nodes = False
    have_elements = False
    while pos < len(lines):
        head = lines[pos].strip()
        if not head:
            pos += 1
            continue
        if head == "$Nodes":
            pos += 1
            try:
                n = int(next_line().split()[0])
                for _ in range(n):
                    parts = next_line().split()
                    node_index[int(parts[0])] = len(coords)
                    coords.append((float(parts[1]), float(parts[2])))
            except (ValueError, IndexError) as exc:
                raise GmshParseError(f"bad node record: {exc}", pos) from exc
            expect("$EndNodes")
            have_nodes = True
        elif head == "$Elements":
            pos += 1
            try:
                n = int(next_line().split()[0])
                for _ in range(n):
                    lineno = pos + 1
                    parts = [int(t) for t in next_line().split()]
                    etype, ntags = parts[1], parts[2]
                    tags = parts[3:3 + ntags]
                    nodes = parts[3 + ntags:]
                    if etype not in (1, 2):
                        skipped += 1
                        continue
                    try:
                        ids = [node_index[v] for v in nodes]
                    except KeyError as exc:
                        raise GmshParseError(f"element references unknown node {exc}", lineno) from None
                    phys = tags[0] if tags else 0
                    if etype == 2:
                        tris.append(ids[:3])
                    else:
                        lines_el.append((ids[:2], phys, lineno))
            except ValueError as exc:
                raise GmshParseError(f"bad element record: {exc}", pos) from exc
            expect("$EndElements")
            have_elements = True
        elif head.startswith("$"):
            # skip unknown section
            name = head[1:]
            pos += 1
            while pos < len(lines) and lines[pos].strip() != f"$End{name}":
                pos += 1
            if pos >= len(lines):
                raise GmshParseError(f"section {head} is not closed", pos)
            pos += 1
        else:
            raise GmshParseError(f"unexpected content {head!r}", pos + 1)
    if not have_nodes or not have_elements:
        raise GmshParseError("missing $Nodes or $Elements section")
    if skipped:
        log.warning("parse_gmsh: skipped %d elements of unsupported type", skipped)

    facets, ftags = [], []
    for ids, phys, lineno in lines_el:
        if phys not in tag_map:
            raise GmshParseError(f"physical group {phys} has no boundary tag mapping", lineno)
        facets.append(ids)
        ftags.append(int(tag_map[phys]))

    mesh = TriangleMesh(np.array(coords, dtype=float).reshape(-1, 2),
                        np.array(tris, dtype=np.int64).reshape(-1, 3),
                        np.array(facets, dtype=np.int64).reshape(-1, 2),
                        np.array(ftags, dtype=np.int64))
    mesh.skipped_elements = skipped
    return mesh


def write_gmsh(mesh: TriangleMesh, phys_ids=None) -> str:
    """Serialize to ASCII MSH 2.2; facet tags are written as physical ids."""
    phys_ids = phys_ids or {t: int(t) + 1 for t in BoundaryTag}
    out = io.StringIO()
    out.write("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n")
    out.write(f"{mesh.n_vertices}\n")
    for i, (x, y) in enumerate(mesh.vertices):
        out.write(f"{i + 1} {float(x)!r} {float(y)!r} 0\n")
    out.write("$EndNodes\n$Elements\n")
    out.write(f"{len(mesh.facets) + mesh.n_cells}\n")
    k = 1
    for (a, b), t in zip(mesh.facets, mesh.facet_tags):
        pid = phys_ids[BoundaryTag(int(t))]
        out.write(f"{k} 1 2 {pid} {pid} {a + 1} {b + 1}\n")
        k += 1
    for a, b, c in mesh.cells:
        out.write(f"{k} 2 2 100 1 {a + 1} {b + 1} {c + 1}\n")
        k += 1
    out.write("$EndElements\n")
    return out.getvalue()


def load_gmsh_file(path, tag_map) -> TriangleMesh:
    with open(path, "r", encoding="ascii") as fh:
        return parse_gmsh(fh.read(), tag_map)
