"""P1-bubble / P1 (MINI) discretization of the Stokes forms with slip constraints.

Velocity dofs on the full space are laid out as

    [vertex x | vertex y | bubble x | bubble y]

and the constrained ("free") space is reached through a sparse map ``T`` with
``u_full = T @ u_free``.  Dirichlet vertices contribute no free dof, slip
vertices contribute one tangential dof in their rotated frame, interior vertices
and bubbles contribute two each.

The divergence matrix stores ``B[q, j] = int q div(phi_j)``, i.e. minus the form
``b(v, q) = -int q div v``, so the discrete problem reads
``[[A, B^T], [B, 0]] [u; p] = [F; 0]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels
from .mesh import BoundaryTag, MeshError, TriangleMesh, facet_geometry_all
from .quadrature import gauss_interval, triangle_rule
from .sparse_linalg import IterationLimitError, SaddleSolver, SparseMatrix, TripletBuffer, compress


class AssemblyError(MeshError):
    pass


@dataclass
class TraceTable:
    """Facet quadrature data for one slip tag (vertex dofs only; bubbles have zero trace)."""

    tag: BoundaryTag
    facets: np.ndarray           # facet ids
    points: np.ndarray           # (nq, 2)
    weights: np.ndarray          # (nq,) = facet length * rule weight
    normals: np.ndarray          # (nq, 2) facet outward normal at each point
    vertices: np.ndarray         # multiplier vertices of this tag (sorted)
    interp: sp.csr_matrix        # (nq, nvt)  P1 interpolation from tag vertices
    trace: sp.csr_matrix         # (2nq, n_full) full velocity -> u_tau at points
    vertex_trace: sp.csr_matrix  # (2nvt, n_full) full velocity -> u_tau at tag vertices

    @property
    def n_points(self):
        return len(self.weights)

    def length(self):
        return float(self.weights.sum())


@dataclass
class StokesSystem:
    mesh: TriangleMesh
    mu: float
    with_bubble: bool
    n_full: int
    T: sp.csr_matrix             # (n_full, n_free)
    A_full: sp.csr_matrix
    B_full: sp.csr_matrix
    M_full: sp.csr_matrix        # velocity mass
    A: SparseMatrix              # T^T A_full T
    B: SparseMatrix              # B_full T
    Mp: sp.csr_matrix            # pressure mass
    mean_weights: np.ndarray     # int phi_q
    load: np.ndarray             # free-space load vector
    interior_free: np.ndarray    # free dofs belonging to V_0 (boundary-free)
    traces: dict
    cell_dofs: np.ndarray
    vertex_frame: np.ndarray     # (nv, 2) tangent used for slip vertices
    vertex_kind: np.ndarray      # 0 interior, 1 slip, 2 dirichlet

    @property
    def n_free(self):
        return self.T.shape[1]

    @property
    def bubble_dofs(self):
        """Free-space indices of the bubble dofs (they come last)."""
        if not self.with_bubble:
            return np.zeros(0, dtype=np.int64)
        nb = 2 * self.mesh.n_cells
        return np.arange(self.n_free - nb, self.n_free)

    def saddle_solver(self, method="auto"):
        """Factorized saddle operator; bubbles are condensed out when present."""
        return SaddleSolver(self.A, self.B, mean_weights=self.mean_weights, method=method,
                            condense=self.bubble_dofs if self.with_bubble else None)

    @property
    def n_pressure(self):
        return self.mesh.n_vertices

    def to_full(self, u_free):
        return self.T @ u_free

    def to_free(self, u_full):
        """Least-squares restriction (exact for fields in the range of T)."""
        TT = (self.T.T @ self.T).tocsc()
        return spla.spsolve(TT, self.T.T @ u_full)

    def l2_velocity(self, u_full):
        return float(np.sqrt(max(u_full @ (self.M_full @ u_full), 0.0)))

    def tangential_trace(self, u, tag):
        return tangential_trace(self, u, tag)


def cell_dof_map(mesh, with_bubble=True):
    nv, nc = mesh.n_vertices, mesh.n_cells
    c = mesh.cells
    if with_bubble:
        bx = 2 * nv + np.arange(nc)
        by = 2 * nv + nc + np.arange(nc)
        return np.column_stack([c, bx, c + nv, by]), 2 * nv + 2 * nc
    return np.column_stack([c, c + nv]), 2 * nv


def _classify_vertices(mesh):
    nv = mesh.n_vertices
    kind = np.zeros(nv, dtype=np.int64)
    slip = np.isin(mesh.facet_tags, [BoundaryTag.SLIP1, BoundaryTag.SLIP2])
    kind[np.unique(mesh.facets[slip])] = 1
    dir_ = mesh.facet_tags == BoundaryTag.DIRICHLET
    kind[np.unique(mesh.facets[dir_])] = 2   # Dirichlet wins at corners
    return kind


def _constraint_map(mesh, n_full, with_bubble):
    nv, nc = mesh.n_vertices, mesh.n_cells
    kind = _classify_vertices(mesh)
    normals, has = mesh.vertex_normals()
    tangent = np.column_stack([-normals[:, 1], normals[:, 0]])

    rows, cols, vals = [], [], []
    col = 0
    interior = np.nonzero(kind == 0)[0]
    k = len(interior)
    rows += [interior, interior + nv]
    cols += [col + np.arange(k), col + k + np.arange(k)]
    vals += [np.ones(k), np.ones(k)]
    interior_cols = [col + np.arange(2 * k)]
    col += 2 * k

    slip = np.nonzero(kind == 1)[0]
    if np.any(~has[slip]):
        raise AssemblyError("slip vertex without a boundary normal")
    s = len(slip)
    rows += [slip, slip + nv]
    cols += [col + np.arange(s), col + np.arange(s)]
    vals += [tangent[slip, 0], tangent[slip, 1]]
    col += s

    if with_bubble:
        nb = 2 * nc
        rows.append(2 * nv + np.arange(nb))
        cols.append(col + np.arange(nb))
        vals.append(np.ones(nb))
        interior_cols.append(col + np.arange(nb))
        col += nb

    T = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n_full, col))
    T.eliminate_zeros()
    frame = np.zeros((nv, 2))
    frame[slip] = tangent[slip]
    return T, np.concatenate(interior_cols), frame, kind


def _trace_table(mesh, tag, n_full, npts=2):
    nv = mesh.n_vertices
    fids = mesh.facets_with(tag)
    verts = np.unique(mesh.facets[fids]) if len(fids) else np.zeros(0, dtype=np.int64)
    pos = {int(v): i for i, v in enumerate(verts)}
    xi, wi = gauss_interval(npts)
    if len(fids) == 0:
        z = sp.csr_matrix((0, n_full))
        return TraceTable(tag, fids, np.zeros((0, 2)), np.zeros(0), np.zeros((0, 2)), verts,
                          sp.csr_matrix((0, 0)), z, sp.csr_matrix((0, n_full)))
    L, nrm, _ = facet_geometry_all(mesh, fids)
    a = mesh.facets[fids, 0]
    b = mesh.facets[fids, 1]
    pa, pb = mesh.vertices[a], mesh.vertices[b]

    nq = len(fids) * npts
    pts = (pa[:, None, :] * (1 - xi)[None, :, None] + pb[:, None, :] * xi[None, :, None]).reshape(nq, 2)
    w = (L[:, None] * wi[None, :]).ravel()
    qn = np.repeat(nrm, npts, axis=0)
    phi_a = np.tile(1 - xi, len(fids))
    phi_b = np.tile(xi, len(fids))
    qa = np.repeat(a, npts)
    qb = np.repeat(b, npts)
    q = np.arange(nq)

    ia = np.array([pos[int(v)] for v in qa])
    ib = np.array([pos[int(v)] for v in qb])
    interp = sp.csr_matrix((np.concatenate([phi_a, phi_b]), (np.concatenate([q, q]), np.concatenate([ia, ib]))),
                           shape=(nq, len(verts)))

    # u_tau = (I - n n^T) (phi_a u_a + phi_b u_b)
    P = np.eye(2)[None, :, :] - qn[:, :, None] * qn[:, None, :]   # (nq, 2, 2)
    r, c, v = [], [], []
    for comp_out in range(2):
        for comp_in in range(2):
            coef = P[:, comp_out, comp_in]
            off = comp_in * nv
            r += [2 * q + comp_out, 2 * q + comp_out]
            c += [qa + off, qb + off]
            v += [coef * phi_a, coef * phi_b]
    trace = sp.csr_matrix((np.concatenate(v), (np.concatenate(r), np.concatenate(c))), shape=(2 * nq, n_full))

    vn, _ = mesh.vertex_normals()
    Pv = np.eye(2)[None] - vn[verts][:, :, None] * vn[verts][:, None, :]
    r, c, v = [], [], []
    idx = np.arange(len(verts))
    for comp_out in range(2):
        for comp_in in range(2):
            r.append(2 * idx + comp_out)
            c.append(verts + comp_in * nv)
            v.append(Pv[:, comp_out, comp_in])
    vtrace = sp.csr_matrix((np.concatenate(v), (np.concatenate(r), np.concatenate(c))),
                           shape=(2 * len(verts), n_full))
    return TraceTable(tag, fids, pts, w, qn, verts, interp, trace, vtrace)


def velocity_mass_matrices(area, with_bubble=True):
    """Exact local velocity mass matrices: the reference matrix scaled by the cell area.

    The bubble-bubble entry has degree 6, one above the stiffness rule.
    """
    bary, w = triangle_rule(6)
    vals = _kernels._basis_at(bary, with_bubble)
    ref = np.einsum("q,qi,qj->ij", w, vals, vals)
    nb = ref.shape[0]
    blk = np.zeros((2 * nb, 2 * nb))
    blk[:nb, :nb] = ref
    blk[nb:, nb:] = ref
    return area[:, None, None] * blk[None]


def assemble(mesh: TriangleMesh, mu: float, f=None, with_bubble=True, quad_degree=4) -> StokesSystem:
    """Assemble the constrained Stokes operators on ``mesh`` with viscosity ``mu``.

    ``f`` is an optional vectorized source ``f(x, y) -> (fx, fy)``.
    """
    if mu <= 0:
        raise ValueError("viscosity must be positive")
    area = mesh.cell_areas()
    if np.any(area < 1e-14):
        bad = int(np.argmin(area))
        raise AssemblyError(f"degenerate cell {bad} with area {area[bad]:.3e}")

    bary, wq = triangle_rule(quad_degree)
    Aloc, Bloc, _ = _kernels.element_matrices(mesh.vertices, mesh.cells, bary, wq, mu, with_bubble)
    Mloc = velocity_mass_matrices(area, with_bubble)
    dofs, n_full = cell_dof_map(mesh, with_bubble)
    nv = mesh.n_vertices

    buf = TripletBuffer()
    buf.add_blocks(dofs, dofs, Aloc)
    A_full = compress(buf, n_full, n_full).to_scipy()
    buf = TripletBuffer()
    buf.add_blocks(mesh.cells, dofs, Bloc)
    B_full = compress(buf, nv, n_full).to_scipy()
    buf = TripletBuffer()
    buf.add_blocks(dofs, dofs, Mloc)
    M_full = compress(buf, n_full, n_full).to_scipy()

    pm = (area[:, None, None] / 12.0) * (np.ones((3, 3)) + np.eye(3))[None]
    buf = TripletBuffer()
    buf.add_blocks(mesh.cells, mesh.cells, pm)
    Mp = compress(buf, nv, nv).to_scipy()
    mean_w = np.asarray(Mp.sum(axis=1)).ravel()

    T, interior_free, frame, kind = _constraint_map(mesh, n_full, with_bubble)
    A = SparseMatrix.from_scipy(T.T @ A_full @ T)
    B = SparseMatrix.from_scipy(B_full @ T)
    traces = {tag: _trace_table(mesh, tag, n_full) for tag in (BoundaryTag.SLIP1, BoundaryTag.SLIP2)}

    system = StokesSystem(mesh, float(mu), with_bubble, n_full, T, A_full, B_full, M_full, A, B, Mp,
                          mean_w, np.zeros(T.shape[1]), interior_free, traces, dofs, frame, kind)
    if f is not None:
        system.load = assemble_load(mesh, system, f)
    return system


def assemble_load(mesh, space: StokesSystem, f, quad_degree=4):
    """Free-space load vector ``(f, v)``; f is vectorized ``f(x, y) -> (fx, fy)``."""
    bary, wq = triangle_rule(quad_degree)
    area = mesh.cell_areas()
    xq = np.einsum("qk,ckd->cqd", bary, mesh.vertices[mesh.cells])
    fx, fy = f(xq[..., 0], xq[..., 1])
    fx = np.broadcast_to(np.asarray(fx, dtype=float), xq.shape[:2])
    fy = np.broadcast_to(np.asarray(fy, dtype=float), xq.shape[:2])
    vals = _kernels._basis_at(bary, space.with_bubble)
    wa = area[:, None] * wq[None, :]
    lx = np.einsum("cq,cq,qi->ci", wa, fx, vals)
    ly = np.einsum("cq,cq,qi->ci", wa, fy, vals)
    loc = np.concatenate([lx, ly], axis=1)
    full = np.bincount(space.cell_dofs.ravel(), weights=loc.ravel(), minlength=space.n_full)
    return space.T.T @ full


def tangential_trace(system: StokesSystem, u, tag):
    """u_tau at every facet quadrature point of ``tag`` as an (nq, 2) array.

    ``u`` may be given on the free or on the full velocity space.
    """
    tag = BoundaryTag(tag)
    if tag == BoundaryTag.DIRICHLET:
        raise ValueError("tangential_trace is defined on slip boundaries only")
    u = np.asarray(u, dtype=float)
    if u.shape[0] == system.n_free and system.n_free != system.n_full:
        u = system.T @ u
    return (system.traces[tag].trace @ u).reshape(-1, 2)


def boundary_load(system: StokesSystem, tag, lam_vertices, weight_q):
    """Free-space vector of ``int weight * lam . v_tau ds`` over ``tag``.

    ``lam_vertices`` is (nvt, 2) at the tag's vertices, ``weight_q`` is a scalar
    or one value per quadrature point.
    """
    tbl = system.traces[BoundaryTag(tag)]
    if tbl.n_points == 0:
        return np.zeros(system.n_free)
    lam_q = tbl.interp @ lam_vertices
    coef = (tbl.weights * np.broadcast_to(weight_q, tbl.weights.shape))[:, None] * lam_q
    return system.T.T @ (tbl.trace.T @ coef.ravel())


def boundary_mass(system: StokesSystem, tag):
    """Free-space matrix of ``int u_tau . v_tau ds`` over ``tag``."""
    tbl = system.traces[BoundaryTag(tag)]
    W = sp.diags(np.repeat(tbl.weights, 2))
    Mb = tbl.trace.T @ W @ tbl.trace
    return (system.T.T @ Mb @ system.T).tocsr()


# ---------------------------------------------------------------------------
# stability diagnostics
# ---------------------------------------------------------------------------

def _interior_blocks(system):
    idx = system.interior_free
    if len(idx) == 0:
        raise ValueError("no interior velocity dofs: V_0^h is empty")
    A = system.A.to_scipy()
    A0 = A[idx][:, idx].tocsc()
    B0 = system.B.to_scipy()[:, idx].tocsc()
    return A0, B0


def infsup_constant(system: StokesSystem, n_eigs=12, zero_tol=1e-8) -> float:
    """Discrete inf-sup constant of the pair on V_0^h.

    Smallest nonzero eigenvalue beta^2 of ``B0 A0^{-1} B0^T q = beta^2 Mp q``
    (a-norm on velocities, L2 on pressures), found by shift-invert Lanczos on
    the equivalent saddle pencil.  Exact zero modes (constants, and corner
    modes of unstable pairs) are skipped.
    """
    A0, B0 = _interior_blocks(system)
    n0 = A0.shape[0]
    npr = B0.shape[0]
    Mp = system.Mp
    K = sp.bmat([[A0, B0.T], [B0, None]], format="csc")
    N = sp.bmat([[sp.csc_matrix((n0, n0)), None], [None, Mp]], format="csc")
    # the pencil eigenvalues -beta^2 are dimensionless, so the shift is too
    sigma = 1e-3
    k = min(n_eigs, npr - 1)
    while True:
        # K x = mu N x with mu = -beta^2; sigma > 0 sits above the kernel
        lu = spla.splu((K - sigma * N).tocsc())
        op = spla.LinearOperator(K.shape, matvec=lu.solve)
        vals = spla.eigsh(K, k=k, M=N, sigma=sigma, which="LM", OPinv=op,
                          return_eigenvectors=False, tol=1e-12, maxiter=5000)
        beta2 = np.sort(-np.real(vals))
        ref = max(np.abs(beta2).max(), 1e-300)
        nonzero = beta2[beta2 > zero_tol * ref]
        if len(nonzero) >= 2 or k >= npr - 1:
            break
        k = min(2 * k, npr - 1)
    if len(nonzero) == 0:
        return 0.0
    return float(np.sqrt(nonzero[0]))


def infsup_dense(system: StokesSystem, zero_tol=1e-8) -> float:
    """Dense reference computation of :func:`infsup_constant` (small meshes only)."""
    A0, B0 = _interior_blocks(system)
    X = spla.splu(A0).solve(B0.T.toarray())
    S = B0 @ X
    S = 0.5 * (S + S.T)
    ev = sla.eigh(S, system.Mp.toarray(), eigvals_only=True)
    pos = ev[ev > zero_tol * ev.max()]
    return float(np.sqrt(pos.min()))


def estimate_lambda0(system: StokesSystem, mesh=None, tol=1e-10, maxiter=2000, seed=0) -> float:
    """Smallest eigenvalue of ``a(u, v) = lambda int_{Slip2} u_tau . v_tau ds`` on V^h.

    Inverse iteration ``x <- A^{-1} M x``; its dominant eigenvalue is 1/lambda_0.
    """
    Mb = boundary_mass(system, BoundaryTag.SLIP2)
    if Mb.nnz == 0 or system.traces[BoundaryTag.SLIP2].n_points == 0:
        raise ValueError("Slip2 boundary is empty")
    A = system.A.to_scipy().tocsc()
    lu = spla.splu(A)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(A.shape[0])
    nu_old = 0.0
    nu = 0.0
    for _ in range(maxiter):
        y = lu.solve(Mb @ x)
        # Rayleigh quotient in the A inner product
        nu = float((y @ (Mb @ y)) / (y @ (A @ y)))
        x = y / np.sqrt(y @ (A @ y))
        if abs(nu - nu_old) <= tol * abs(nu):
            return 1.0 / nu
        nu_old = nu
    raise IterationLimitError("lambda_0 inverse iteration did not converge", residual=1.0 / nu)


def lambda0_dense(system: StokesSystem) -> float:
    Mb = boundary_mass(system, BoundaryTag.SLIP2).toarray()
    A = system.A.to_dense()
    nu = sla.eigh(Mb, A, eigvals_only=True)
    return float(1.0 / nu.max())


# ---------------------------------------------------------------------------
# pointwise evaluation
# ---------------------------------------------------------------------------

def evaluate(system: StokesSystem, u_full, p, cells, bary):
    """Velocity (n, 2), velocity gradient (n, 2, 2) and pressure (n,) at points.

    Points are given by their containing cell and barycentric coordinates.
    ``grad[k, i, j] = d u_i / d x_j``.
    """
    mesh = system.mesh
    G, _ = _kernels._cell_gradients_np(mesh.vertices, mesh.cells[cells])   # (n, 3, 2)
    verts = mesh.cells[cells]
    nv = mesh.n_vertices
    ux = u_full[verts]
    uy = u_full[verts + nv]
    val = np.column_stack([(bary * ux).sum(1), (bary * uy).sum(1)])
    grad = np.stack([np.einsum("nk,nkd->nd", ux, G), np.einsum("nk,nkd->nd", uy, G)], axis=1)
    if system.with_bubble:
        nc = mesh.n_cells
        bx = u_full[2 * nv + cells]
        by = u_full[2 * nv + nc + cells]
        b = 27 * bary.prod(axis=1)
        l0, l1, l2 = bary[:, 0], bary[:, 1], bary[:, 2]
        coef = np.column_stack([l1 * l2, l0 * l2, l0 * l1])
        gb = 27 * np.einsum("nk,nkd->nd", coef, G)
        val += np.column_stack([bx * b, by * b])
        grad[:, 0, :] += bx[:, None] * gb
        grad[:, 1, :] += by[:, None] * gb
    pv = None if p is None else (bary * p[verts]).sum(1)
    return val, grad, pv
