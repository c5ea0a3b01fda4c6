"""CSR storage, triplet assembly and saddle-point solvers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from . import _kernels


class StructuralError(ValueError):
    """Bad indices or shapes handed to the sparse layer."""


class SolverError(RuntimeError):
    """Direct factorization broke down."""

    def __init__(self, message, pivot=None):
        super().__init__(message if pivot is None else f"{message} (pivot {pivot})")
        self.pivot = pivot


class IterationLimitError(RuntimeError):
    """An iterative method stopped before reaching its tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message if residual is None else f"{message} (last value {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class SparseMatrix:
    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self):
        return int(self.row_offsets[-1])

    def to_scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.values, self.col_indices, self.row_offsets), shape=self.shape)

    @classmethod
    def from_scipy(cls, mat) -> "SparseMatrix":
        m = sp.csr_matrix(mat, dtype=float)
        m.sum_duplicates()
        m.sort_indices()
        return cls(m.shape[0], m.shape[1], m.indptr.astype(np.int64),
                   m.indices.astype(np.int64), m.data.astype(float))

    @classmethod
    def from_dense(cls, arr) -> "SparseMatrix":
        return cls.from_scipy(sp.csr_matrix(np.asarray(arr, dtype=float)))

    def to_dense(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def transpose(self) -> "SparseMatrix":
        return SparseMatrix.from_scipy(self.to_scipy().T)

    def __matmul__(self, x):
        return matvec(self, x)

    def check(self):
        """Raise StructuralError unless the CSR invariants hold."""
        ro = self.row_offsets
        if ro.shape != (self.n_rows + 1,) or ro[0] != 0 or np.any(np.diff(ro) < 0):
            raise StructuralError("row_offsets must be nondecreasing of length n_rows+1")
        if len(self.values) != ro[-1] or len(self.col_indices) != ro[-1]:
            raise StructuralError("values/col_indices length mismatch")
        if self.nnz and (self.col_indices.min() < 0 or self.col_indices.max() >= self.n_cols):
            raise StructuralError("column index out of range")
        rows = np.repeat(np.arange(self.n_rows), np.diff(ro))
        same_row = rows[1:] == rows[:-1]
        if np.any(np.diff(self.col_indices)[same_row] <= 0):
            raise StructuralError("columns must be strictly increasing inside a row")


@dataclass
class TripletBuffer:
    """Append-only (row, col, value) store; duplicates are summed on compress."""

    rows: list = field(default_factory=list)
    cols: list = field(default_factory=list)
    vals: list = field(default_factory=list)

    def add(self, r, c, v):
        self.rows.append(np.atleast_1d(np.asarray(r, dtype=np.int64)).ravel())
        self.cols.append(np.atleast_1d(np.asarray(c, dtype=np.int64)).ravel())
        self.vals.append(np.atleast_1d(np.asarray(v, dtype=float)).ravel())

    def add_blocks(self, dofs_row, dofs_col, blocks):
        """Scatter a stack of dense local blocks (ncell, nr, nc)."""
        nr = dofs_row.shape[1]
        nc = dofs_col.shape[1]
        r = np.repeat(dofs_row[:, :, None], nc, axis=2)
        c = np.repeat(dofs_col[:, None, :], nr, axis=1)
        self.add(r, c, blocks)

    @property
    def entries(self):
        if not self.rows:
            e = np.zeros(0, dtype=np.int64)
            return e, e, np.zeros(0)
        return np.concatenate(self.rows), np.concatenate(self.cols), np.concatenate(self.vals)


def compress(buf: TripletBuffer, n_rows: int, n_cols: int) -> SparseMatrix:
    r, c, v = buf.entries
    if r.size and (r.min() < 0 or r.max() >= n_rows or c.min() < 0 or c.max() >= n_cols):
        raise StructuralError(f"triplet index outside {n_rows}x{n_cols}")
    mat = sp.coo_matrix((v, (r, c)), shape=(n_rows, n_cols)).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    out = SparseMatrix(n_rows, n_cols, mat.indptr.astype(np.int64),
                       mat.indices.astype(np.int64), mat.data.astype(float))
    return out


def matvec(M: SparseMatrix, x) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=float)
    if x.shape != (M.n_cols,):
        raise StructuralError(f"matvec: vector of length {x.shape} for matrix {M.shape}")
    return _kernels.csr_matvec(M.row_offsets, M.col_indices, M.values, x)


def _as_csr(M):
    if isinstance(M, SparseMatrix):
        return M.to_scipy()
    return sp.csr_matrix(M, dtype=float)


def block_diagonal_inverse(M, max_block=16):
    """Inverse of a sparse matrix whose graph splits into small dense blocks."""
    M = _as_csr(M)
    n = M.shape[0]
    ncomp, lab = connected_components(M, directed=False)
    sizes = np.bincount(lab, minlength=ncomp)
    if sizes.max() > max_block:
        raise StructuralError(f"block of size {sizes.max()} is too large to invert directly")
    order = np.argsort(lab, kind="stable")
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    pos = np.empty(n, dtype=np.int64)
    pos[order] = np.arange(n) - starts[lab[order]]
    coo = M.tocoo()
    rows, cols, vals = [], [], []
    for size in np.unique(sizes):
        comps = np.nonzero(sizes == size)[0]
        gidx = np.full(ncomp, -1, dtype=np.int64)
        gidx[comps] = np.arange(len(comps))
        blocks = np.zeros((len(comps), size, size))
        sel = gidx[lab[coo.row]] >= 0
        blocks[gidx[lab[coo.row[sel]]], pos[coo.row[sel]], pos[coo.col[sel]]] = coo.data[sel]
        try:
            inv = np.linalg.inv(blocks)
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"singular diagonal block: {exc}") from exc
        members = order[starts[comps][:, None] + np.arange(size)[None, :]]      # (k, size)
        rows.append(np.repeat(members, size, axis=1).ravel())
        cols.append(np.tile(members, (1, size)).ravel())
        vals.append(inv.ravel())
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


class SaddleSolver:
    """Factor ``[[A, B^T], [B, 0]]`` once and solve for many right-hand sides.

    When ``mean_weights`` is given, the pressure is normalized to
    ``mean_weights @ p = 0``.  ``method`` is ``"direct"`` (sparse LU of the
    whole matrix with one extra row/column for the mean), ``"condensed"``,
    ``"minres"`` or ``"auto"``.

    The condensed path needs ``condense``: velocity dofs that couple only among
    themselves in A, in small blocks (cell bubbles).  They are eliminated
    exactly, leaving the quasi-definite matrix ``[[A_rr, B_r^T], [B_r, -C]]``
    with ``C = B_c A_cc^{-1} B_c^T``.  Quasi-definite matrices factor stably in
    any symmetric ordering, so a minimum-degree ordering keeps the fill low.
    With ``mean_weights`` the constant pressure mode is removed by fixing one
    pressure value and shifting afterwards, which requires ``B^T 1 = 0``.

    ``auto`` uses the condensed path when ``condense`` is given, the full LU
    otherwise, and MINRES if the factorization runs out of memory.
    """

    def __init__(self, A, B, mean_weights=None, method="auto", rtol=1e-10, maxiter=20000, condense=None):
        A = _as_csr(A)
        B = _as_csr(B)
        if A.shape[0] != A.shape[1] or B.shape[1] != A.shape[0]:
            raise StructuralError(f"incompatible saddle blocks A{A.shape} B{B.shape}")
        self.nu = A.shape[0]
        self.np_ = B.shape[0]
        self.A, self.B = A, B
        self.mean = None if mean_weights is None else np.asarray(mean_weights, dtype=float)
        self.rtol = rtol
        self.maxiter = maxiter
        self._lu = None
        self._K = None
        if method == "auto":
            method = "condensed" if condense is not None and len(condense) else "direct"
        if method == "condensed" and (condense is None or not len(condense)):
            raise StructuralError("condensed method needs the dofs to eliminate")
        self.method = method
        try:
            if method == "direct":
                self._factor()
            elif method == "condensed":
                self._factor_condensed(np.asarray(condense, dtype=np.int64))
            elif method != "minres":
                raise ValueError(f"unknown method {method!r}")
        except MemoryError:
            self.method = "minres"

    @property
    def K(self):
        """The full saddle matrix (with the mean row/column when normalizing)."""
        if self._K is None:
            blocks = [[self.A, self.B.T], [self.B, None]]
            if self.mean is not None:
                m = sp.csr_matrix(self.mean.reshape(-1, 1))
                blocks = [[self.A, self.B.T, None], [self.B, None, m], [None, m.T, None]]
            self._K = sp.bmat(blocks, format="csc")
        return self._K

    @staticmethod
    def _check_pivots(lu, perm):
        d = np.abs(lu.U.diagonal())
        small = d <= 1e-13 * max(d.max(), 1e-300)
        if small.any():
            raise SolverError("numerically singular saddle matrix", pivot=int(perm[np.argmax(small)]))

    def _factor(self):
        try:
            lu = spla.splu(self.K, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise SolverError(f"saddle factorization failed: {exc}") from exc
        self._check_pivots(lu, lu.perm_c)
        self._lu = lu

    def _factor_condensed(self, c):
        nu = self.nu
        keep = np.ones(nu, dtype=bool)
        keep[c] = False
        r = np.nonzero(keep)[0]
        A, B = self.A, self.B
        scale = max(abs(A).max(), 1e-300)
        cross = A[r][:, c]
        if cross.nnz and abs(cross).max() > 1e-12 * scale:
            raise StructuralError("condensed dofs couple to the remaining velocity dofs")
        Ainv = block_diagonal_inverse(A[c][:, c])
        Bc = B[:, c].tocsr()
        Br = B[:, r].tocsr()
        C = (Bc @ Ainv @ Bc.T).tocsr()
        self._c, self._r, self._Ainv, self._Bc = c, r, Ainv, Bc
        pin = None
        if self.mean is not None:
            ones = np.ones(self.np_)
            if np.abs(B.T @ ones).max() > 1e-10 * max(abs(B).max(), 1e-300):
                raise StructuralError("constant pressure is not in the kernel of B^T; use method='direct'")
            pin = int(np.argmax(self.mean))
        self._pin = pin
        pk = np.ones(self.np_, dtype=bool)
        if pin is not None:
            pk[pin] = False
        self._pk = np.nonzero(pk)[0]
        Kr = sp.bmat([[A[r][:, r], Br[self._pk].T], [Br[self._pk], -C[self._pk][:, self._pk]]], format="csc")
        try:
            lu = spla.splu(Kr, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                           options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise SolverError(f"condensed factorization failed: {exc}") from exc
        self._check_pivots(lu, lu.perm_c)
        self._lu = lu

    def _solve_condensed(self, f, g):
        c, r, Ainv, Bc = self._c, self._r, self._Ainv, self._Bc
        yc = Ainv @ f[c]
        rhs = np.concatenate([f[r], (g - Bc @ yc)[self._pk]])
        x = self._lu.solve(rhs)
        nr = len(r)
        p = np.zeros(self.np_)
        p[self._pk] = x[nr:]
        u = np.empty(self.nu)
        u[r] = x[:nr]
        u[c] = yc - Ainv @ (Bc.T @ p)
        if self.mean is not None:
            p -= (self.mean @ p) / self.mean.sum()
        return u, p

    def _minres(self, rhs):
        # block-diagonal Jacobi-type preconditioner
        dA = np.abs(self.A.diagonal())
        dA[dA == 0] = 1.0
        BD = self.B.multiply(1.0 / dA).dot(self.B.T)
        dS = np.abs(BD.diagonal())
        dS[dS == 0] = 1.0
        diag = np.concatenate([dA, dS] + ([np.ones(1)] if self.mean is not None else []))
        Minv = spla.LinearOperator(self.K.shape, matvec=lambda v: v / diag)
        it = [0]

        def cb(_):
            it[0] += 1

        x, info = spla.minres(self.K, rhs, M=Minv, rtol=self.rtol * 1e-2, maxiter=self.maxiter, callback=cb)
        res = np.linalg.norm(self.K @ x - rhs)
        if info != 0:
            raise IterationLimitError(f"MINRES stopped after {it[0]} iterations", residual=res)
        return x

    def solve(self, f, g=None):
        f = np.asarray(f, dtype=float)
        g = np.zeros(self.np_) if g is None else np.asarray(g, dtype=float)
        if self.method == "condensed":
            u, p = self._solve_condensed(f, g)
            # one step of iterative refinement on the full system
            du, dp = self._solve_condensed(f - self.A @ u - self.B.T @ p, g - self.B @ u)
            u, p = u + du, p + dp
        else:
            rhs = np.concatenate([f, g] + ([np.zeros(1)] if self.mean is not None else []))
            if self.method == "minres":
                x = self._minres(rhs)
            else:
                x = self._lu.solve(rhs)
                r = rhs - self.K @ x
                x = x + self._lu.solve(r)
            u = x[:self.nu]
            p = x[self.nu:self.nu + self.np_]
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(p))):
            raise SolverError("non-finite saddle solution")
        return u, p

    def residuals(self, u, p, f, g=None):
        g = np.zeros(self.np_) if g is None else g
        r1 = self.A @ u + self.B.T @ p - f
        r2 = self.B @ u - g
        return float(np.linalg.norm(r1)), float(np.linalg.norm(r2))


def solve_saddle(A, B, f, g=None, mean_weights=None, method="auto", condense=None):
    """Solve ``A u + B^T p = f``, ``B u = g``; see :class:`SaddleSolver`."""
    solver = SaddleSolver(A, B, mean_weights=mean_weights, method=method, condense=condense)
    u, p = solver.solve(f, g)
    r1, r2 = solver.residuals(u, p, np.asarray(f, float), g)
    bound = 1e-10 * (1.0 + np.linalg.norm(f))
    if r1 > bound or r2 > bound:
        raise SolverError(f"saddle residuals {r1:.2e}, {r2:.2e} exceed {bound:.2e}")
    return u, p


def min_singular_estimate(S, tol=1e-10, maxiter=500, seed=0) -> float:
    """Smallest singular value of S by inverse power iteration on S^T S.

    Accuracy degrades when the two smallest singular values are close; the
    iteration then converges slowly and may hit ``maxiter``.
    """
    S = _as_csr(S)
    if S.nnz == 0:
        raise StructuralError("min_singular_estimate: zero matrix")
    N = (S.T @ S).tocsc()
    try:
        lu = spla.splu(N)
    except RuntimeError:
        return 0.0
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(N.shape[0])
    x /= np.linalg.norm(x)
    rq_old = np.inf
    rq = np.inf
    for _ in range(maxiter):
        y = lu.solve(x)
        y /= np.linalg.norm(y)
        rq = float(y @ (N @ y))
        x = y
        if abs(rq - rq_old) <= tol * abs(rq):
            return float(np.sqrt(max(rq, 0.0)))
        rq_old = rq
    raise IterationLimitError("inverse iteration did not settle", residual=np.sqrt(max(rq, 0.0)))
