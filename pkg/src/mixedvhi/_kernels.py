"""Hot numeric kernels, each with a numba loop version and a numpy version.

The public wrappers at the bottom pick one according to
:data:`mixedvhi._accel.USE_NUMBA`.  Both versions are always importable so the
test-suite and the benchmark can compare them directly.
"""

import numpy as np

from . import _accel
from ._accel import njit


# ---------------------------------------------------------------------------
# CSR matvec
# ---------------------------------------------------------------------------

@njit
def _csr_matvec_nb(row_offsets, col_indices, values, x):
    n = row_offsets.shape[0] - 1
    y = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for k in range(row_offsets[i], row_offsets[i + 1]):
            acc += values[k] * x[col_indices[k]]
        y[i] = acc
    return y


def _csr_matvec_np(row_offsets, col_indices, values, x):
    n = row_offsets.shape[0] - 1
    prod = values * x[col_indices]
    counts = np.diff(row_offsets)
    rows = np.repeat(np.arange(n), counts)
    return np.bincount(rows, weights=prod, minlength=n).astype(float)


# ---------------------------------------------------------------------------
# MINI (P1-bubble / P1) element matrices
# ---------------------------------------------------------------------------
# Local velocity ordering is component-major: [phi_0..phi_{nb-1}] for the x
# component followed by the same list for y.  nb = 4 with the bubble, 3 without.

def _basis_at(bary, with_bubble):
    """Scalar basis values (nq, nb) at barycentric points (nq, 3)."""
    if with_bubble:
        bub = 27.0 * bary[:, 0] * bary[:, 1] * bary[:, 2]
        return np.column_stack([bary, bub])
    return bary.copy()


def _cell_gradients_np(xy, cells):
    p0 = xy[cells[:, 0]]
    p1 = xy[cells[:, 1]]
    p2 = xy[cells[:, 2]]
    e1 = p1 - p0
    e2 = p2 - p0
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    g1 = np.column_stack([e2[:, 1], -e2[:, 0]]) / det[:, None]
    g2 = np.column_stack([-e1[:, 1], e1[:, 0]]) / det[:, None]
    g0 = -g1 - g2
    return np.stack([g0, g1, g2], axis=1), 0.5 * det


def _element_matrices_np(xy, cells, bary, weights, mu, with_bubble):
    G, area = _cell_gradients_np(xy, cells)            # (nc,3,2), (nc,)
    nc = cells.shape[0]
    nq = bary.shape[0]
    nb = 4 if with_bubble else 3

    grads = np.empty((nc, nq, nb, 2))
    grads[:, :, :3, :] = G[:, None, :, :]
    if with_bubble:
        l0, l1, l2 = bary[:, 0], bary[:, 1], bary[:, 2]
        coef = np.stack([l1 * l2, l0 * l2, l0 * l1], axis=1)  # (nq, 3)
        grads[:, :, 3, :] = 27.0 * np.einsum("qk,ckd->cqd", coef, G)

    wa = weights[None, :] * area[:, None]               # (nc, nq)
    # delta_cd grad(phi_i).grad(phi_j) + d_d phi_i d_c phi_j
    lap = np.einsum("cq,cqid,cqjd->cij", wa, grads, grads)
    cross = np.einsum("cq,cqie,cqjf->cijef", wa, grads, grads)

    nl = 2 * nb
    A = np.zeros((nc, nl, nl))
    for c in range(2):
        for d in range(2):
            blk = cross[:, :, :, d, c]
            if c == d:
                blk = blk + lap
            A[:, c * nb:(c + 1) * nb, d * nb:(d + 1) * nb] = mu * blk

    # B[q, (c, j)] = int lambda_q d_c phi_j
    Bl = np.zeros((nc, 3, nl))
    for c in range(2):
        Bl[:, :, c * nb:(c + 1) * nb] = np.einsum("cq,qk,cqj->ckj", wa, bary, grads[:, :, :, c])

    return A, Bl, area


@njit
def _element_matrices_nb(xy, cells, bary, weights, mu, with_bubble):
    nc = cells.shape[0]
    nq = bary.shape[0]
    nb = 4 if with_bubble else 3
    nl = 2 * nb
    A = np.zeros((nc, nl, nl))
    Bl = np.zeros((nc, 3, nl))
    area = np.zeros(nc)
    G = np.zeros((3, 2))
    gr = np.zeros((nb, 2))
    for c in range(nc):
        a0 = cells[c, 0]
        a1 = cells[c, 1]
        a2 = cells[c, 2]
        e1x = xy[a1, 0] - xy[a0, 0]
        e1y = xy[a1, 1] - xy[a0, 1]
        e2x = xy[a2, 0] - xy[a0, 0]
        e2y = xy[a2, 1] - xy[a0, 1]
        det = e1x * e2y - e1y * e2x
        G[1, 0] = e2y / det
        G[1, 1] = -e2x / det
        G[2, 0] = -e1y / det
        G[2, 1] = e1x / det
        G[0, 0] = -G[1, 0] - G[2, 0]
        G[0, 1] = -G[1, 1] - G[2, 1]
        ar = 0.5 * det
        area[c] = ar
        for q in range(nq):
            l0 = bary[q, 0]
            l1 = bary[q, 1]
            l2 = bary[q, 2]
            w = weights[q] * ar
            for k in range(3):
                gr[k, 0] = G[k, 0]
                gr[k, 1] = G[k, 1]
            if with_bubble:
                for d in range(2):
                    gr[3, d] = 27.0 * (l1 * l2 * G[0, d] + l0 * l2 * G[1, d] + l0 * l1 * G[2, d])
            for i in range(nb):
                for j in range(nb):
                    dot = gr[i, 0] * gr[j, 0] + gr[i, 1] * gr[j, 1]
                    for cc in range(2):
                        for dd in range(2):
                            v = gr[i, dd] * gr[j, cc]
                            if cc == dd:
                                v += dot
                            A[c, cc * nb + i, dd * nb + j] += mu * w * v
            for k in range(3):
                for j in range(nb):
                    for cc in range(2):
                        Bl[c, k, cc * nb + j] += w * bary[q, k] * gr[j, cc]
    return A, Bl, area


# ---------------------------------------------------------------------------
# Point location on a triangle mesh through a uniform bucket grid
# ---------------------------------------------------------------------------

class BucketGrid:
    """Uniform grid of buckets, each listing the cells whose bounding box hits it."""

    def __init__(self, xy, cells, target_per_bucket=2.0):
        self.xy = np.ascontiguousarray(xy, dtype=float)
        self.cells = np.ascontiguousarray(cells, dtype=np.int64)
        lo = self.xy.min(axis=0)
        hi = self.xy.max(axis=0)
        span = np.maximum(hi - lo, 1e-300)
        nc = len(cells)
        nside = max(1, int(np.sqrt(nc / target_per_bucket)))
        self.shape = np.array([nside, nside], dtype=np.int64)
        self.lo = lo - 1e-9 * span
        self.width = span * (1 + 2e-9) / nside

        tri = self.xy[self.cells]
        cmin = np.floor((tri.min(axis=1) - self.lo) / self.width).astype(np.int64)
        cmax = np.floor((tri.max(axis=1) - self.lo) / self.width).astype(np.int64)
        cmin = np.clip(cmin, 0, nside - 1)
        cmax = np.clip(cmax, 0, nside - 1)
        ids, owners = [], []
        for c in range(nc):
            bx = np.arange(cmin[c, 0], cmax[c, 0] + 1)
            by = np.arange(cmin[c, 1], cmax[c, 1] + 1)
            b = (bx[:, None] * nside + by[None, :]).ravel()
            ids.append(b)
            owners.append(np.full(b.size, c))
        ids = np.concatenate(ids)
        owners = np.concatenate(owners)
        order = np.argsort(ids, kind="stable")
        self.bucket_cells = owners[order].astype(np.int64)
        counts = np.bincount(ids, minlength=nside * nside)
        self.bucket_offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)

    def bucket_of(self, pts):
        ij = np.floor((pts - self.lo) / self.width).astype(np.int64)
        ij = np.clip(ij, 0, self.shape - 1)
        return ij[:, 0] * self.shape[1] + ij[:, 1]


@njit
def _bary_nb(xy, cells, c, px, py, out):
    a0 = cells[c, 0]
    a1 = cells[c, 1]
    a2 = cells[c, 2]
    x0 = xy[a0, 0]
    y0 = xy[a0, 1]
    e1x = xy[a1, 0] - x0
    e1y = xy[a1, 1] - y0
    e2x = xy[a2, 0] - x0
    e2y = xy[a2, 1] - y0
    det = e1x * e2y - e1y * e2x
    dx = px - x0
    dy = py - y0
    l1 = (dx * e2y - dy * e2x) / det
    l2 = (e1x * dy - e1y * dx) / det
    out[0] = 1.0 - l1 - l2
    out[1] = l1
    out[2] = l2


@njit
def _seg_dist2_nb(px, py, ax, ay, bx, by):
    ex = bx - ax
    ey = by - ay
    L2 = ex * ex + ey * ey
    t = 0.0
    if L2 > 0.0:
        t = ((px - ax) * ex + (py - ay) * ey) / L2
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
    qx = ax + t * ex - px
    qy = ay + t * ey - py
    return qx * qx + qy * qy


@njit
def _tri_dist_nb(xy, cells, c, px, py, lam):
    if lam[0] >= 0.0 and lam[1] >= 0.0 and lam[2] >= 0.0:
        return 0.0
    best = 1e300
    for k in range(3):
        a = cells[c, k]
        b = cells[c, (k + 1) % 3]
        d2 = _seg_dist2_nb(px, py, xy[a, 0], xy[a, 1], xy[b, 0], xy[b, 1])
        if d2 < best:
            best = d2
    return np.sqrt(best)


@njit
def _locate_nb(xy, cells, bucket_offsets, bucket_cells, buckets, pts, tol):
    n = pts.shape[0]
    found = np.full(n, -1, dtype=np.int64)
    bary = np.zeros((n, 3))
    dist = np.zeros(n)
    lam = np.zeros(3)
    for p in range(n):
        px = pts[p, 0]
        py = pts[p, 1]
        b = buckets[p]
        best_c = -1
        best_m = -1e300
        for k in range(bucket_offsets[b], bucket_offsets[b + 1]):
            c = bucket_cells[k]
            _bary_nb(xy, cells, c, px, py, lam)
            m = min(lam[0], min(lam[1], lam[2]))
            if m > best_m:
                best_m = m
                best_c = c
                bary[p, 0] = lam[0]
                bary[p, 1] = lam[1]
                bary[p, 2] = lam[2]
            if m >= -tol:
                break
        if best_c >= 0 and best_m >= -tol:
            found[p] = best_c
            continue
        # outside every candidate of the bucket: nearest cell by true distance
        best_d = 1e300
        for c in range(cells.shape[0]):
            _bary_nb(xy, cells, c, px, py, lam)
            d = _tri_dist_nb(xy, cells, c, px, py, lam)
            if d < best_d:
                best_d = d
                best_c = c
                bary[p, 0] = lam[0]
                bary[p, 1] = lam[1]
                bary[p, 2] = lam[2]
        found[p] = best_c
        dist[p] = best_d
    return found, bary, dist


def _bary_np(xy, cells, cand, pts):
    """Barycentric coordinates of pts[i] in cells cand[i, k] -> (..., 3)."""
    tri = xy[cells[cand]]                      # (n, k, 3, 2)
    x0 = tri[..., 0, :]
    e1 = tri[..., 1, :] - x0
    e2 = tri[..., 2, :] - x0
    d = pts[:, None, :] - x0
    det = e1[..., 0] * e2[..., 1] - e1[..., 1] * e2[..., 0]
    l1 = (d[..., 0] * e2[..., 1] - d[..., 1] * e2[..., 0]) / det
    l2 = (e1[..., 0] * d[..., 1] - e1[..., 1] * d[..., 0]) / det
    return np.stack([1.0 - l1 - l2, l1, l2], axis=-1)


def _tri_dist_np(xy, cells, pts):
    """Distance from every point to every cell, (npts, ncells)."""
    tri = xy[cells]
    out = np.full((len(pts), len(cells)), np.inf)
    for k in range(3):
        a = tri[None, :, k, :]
        b = tri[None, :, (k + 1) % 3, :]
        e = b - a
        L2 = np.maximum((e ** 2).sum(-1), 1e-300)
        t = np.clip(((pts[:, None, :] - a) * e).sum(-1) / L2, 0.0, 1.0)
        q = a + t[..., None] * e - pts[:, None, :]
        out = np.minimum(out, np.sqrt((q ** 2).sum(-1)))
    lam = _bary_np(xy, cells, np.broadcast_to(np.arange(len(cells)), out.shape), pts)
    out[(lam >= 0.0).all(-1)] = 0.0
    return out, lam


def _locate_np(xy, cells, bucket_offsets, bucket_cells, buckets, pts, tol):
    n = len(pts)
    counts = np.diff(bucket_offsets)
    width = max(1, int(counts.max()))
    # padded candidate table per point
    start = bucket_offsets[buckets]
    cnt = counts[buckets]
    k = np.arange(width)
    valid = k[None, :] < cnt[:, None]
    cand = bucket_cells[np.minimum(start[:, None] + k[None, :], len(bucket_cells) - 1)]
    cand = np.where(valid, cand, 0)
    lam = _bary_np(xy, cells, cand, pts)
    score = np.where(valid, lam.min(-1), -np.inf)
    inside = score >= -tol
    # first accepted candidate, otherwise the best score
    first = np.where(inside.any(1), inside.argmax(1), score.argmax(1))
    rows = np.arange(n)
    found = cand[rows, first].astype(np.int64)
    bary = lam[rows, first]
    dist = np.zeros(n)
    bad = ~inside.any(1)
    if bad.any():
        idx = np.nonzero(bad)[0]
        for chunk in np.array_split(idx, max(1, len(idx) // 256)):
            d, lam_all = _tri_dist_np(xy, cells, pts[chunk])
            j = d.argmin(1)
            found[chunk] = j
            bary[chunk] = lam_all[np.arange(len(chunk)), j]
            dist[chunk] = d[np.arange(len(chunk)), j]
    return found, bary, dist


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def csr_matvec(row_offsets, col_indices, values, x):
    if _accel.USE_NUMBA:
        return _csr_matvec_nb(row_offsets, col_indices, values, x)
    return _csr_matvec_np(row_offsets, col_indices, values, x)


def element_matrices(xy, cells, bary, weights, mu, with_bubble=True):
    """Local stiffness and divergence matrices and the area of every cell."""
    args = (np.ascontiguousarray(xy, float), np.ascontiguousarray(cells, np.int64),
            np.ascontiguousarray(bary, float), np.ascontiguousarray(weights, float),
            float(mu), bool(with_bubble))
    if _accel.USE_NUMBA:
        return _element_matrices_nb(*args)
    return _element_matrices_np(*args)


def locate_points(grid, pts, tol=1e-12):
    """Return (cell, barycentric, distance) per point; distance 0 when inside."""
    pts = np.ascontiguousarray(pts, dtype=float)
    buckets = grid.bucket_of(pts)
    args = (grid.xy, grid.cells, grid.bucket_offsets, grid.bucket_cells, buckets, pts, float(tol))
    if _accel.USE_NUMBA:
        return _locate_nb(*args)
    return _locate_np(*args)
