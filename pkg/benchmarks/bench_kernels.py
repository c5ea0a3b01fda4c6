"""Time the numba and numpy versions of the hot kernels side by side.

    python benchmarks/bench_kernels.py [--n 128] [--repeat 5]

Both versions are called directly, so the environment flag does not matter
here.  The first numba call (compilation or cache load) is excluded.
"""

import argparse
import time

import numpy as np

from mixedvhi import _kernels
from mixedvhi.fem_stokes import assemble
from mixedvhi.mesh import structured_unit_square
from mixedvhi.quadrature import triangle_rule


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=128)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    mesh = structured_unit_square(args.n)
    xy, cells = mesh.vertices, mesh.cells
    bary, w = triangle_rule(4)
    system = assemble(mesh, 1.0)
    A = system.A
    x = np.random.default_rng(0).standard_normal(A.n_cols)
    coarse = structured_unit_square(max(2, args.n // 4))
    grid = _kernels.BucketGrid(coarse.vertices, coarse.cells)
    pts = np.random.default_rng(1).uniform(0, 1, (20000, 2))
    buckets = grid.bucket_of(pts)
    loc_args = (grid.xy, grid.cells, grid.bucket_offsets, grid.bucket_cells, buckets, pts, 1e-12)

    cases = [
        ("element_matrices", lambda: _kernels._element_matrices_nb(xy, cells, bary, w, 1.0, True),
         lambda: _kernels._element_matrices_np(xy, cells, bary, w, 1.0, True)),
        ("csr_matvec", lambda: _kernels._csr_matvec_nb(A.row_offsets, A.col_indices, A.values, x),
         lambda: _kernels._csr_matvec_np(A.row_offsets, A.col_indices, A.values, x)),
        ("locate_points", lambda: _kernels._locate_nb(*loc_args), lambda: _kernels._locate_np(*loc_args)),
    ]
    print(f"mesh 1/{args.n}: {mesh.n_cells} cells, A nnz {A.values.size}")
    print(f"{'kernel':18s} {'numba [ms]':>11s} {'numpy [ms]':>11s} {'speedup':>8s}   max |diff|")
    for name, f_nb, f_np in cases:
        t_nb = best_of(f_nb, args.repeat)
        t_np = best_of(f_np, args.repeat)
        a, b = f_nb(), f_np()
        a = a if isinstance(a, tuple) else (a,)
        b = b if isinstance(b, tuple) else (b,)
        diff = max(float(np.max(np.abs(np.asarray(p, float) - np.asarray(q, float)))) for p, q in zip(a, b))
        print(f"{name:18s} {1e3 * t_nb:11.2f} {1e3 * t_np:11.2f} {t_np / t_nb:8.1f}   {diff:.1e}")


if __name__ == "__main__":
    main()
