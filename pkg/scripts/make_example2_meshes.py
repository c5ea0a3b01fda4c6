"""Generate the Gmsh fixtures for the curved channel with a circular hole.

The domain is bounded below by y = 0.1 sin(2 pi x), on the other sides by the
unit square, and has a disk of radius 0.2 centered at (0.5, 0.6) removed.

Physical groups: 1 walls (left, top, right), 2 circle, 3 bottom curve,
4 the surface.  Needs the ``gmsh`` Python module; the package itself does not.

    python scripts/make_example2_meshes.py src/mixedvhi/data
"""

import argparse
import math
import os

import gmsh

# characteristic length SIZE_SCALE[n] / n (CIRCLE_SCALE[n] / n on the hole),
# tuned so that the cell counts land near 128, 511, 2055 and 8187 on the
# levels n = 8, 16, 32, 64
SIZE_SCALE = {8: 1.118, 16: 1.114, 32: 1.042, 64: 1.021, 128: 1.0}
CIRCLE_SCALE = {8: 1.26}


def build(n, n_curve=65):
    gmsh.model.add(f"channel_{n}")
    geo = gmsh.model.geo
    lc = SIZE_SCALE[n] / n
    xs = [i / (n_curve - 1) for i in range(n_curve)]
    bottom_pts = [geo.addPoint(x, 0.1 * math.sin(2 * math.pi * x), 0, lc) for x in xs]
    p_tr = geo.addPoint(1, 1, 0, lc)
    p_tl = geo.addPoint(0, 1, 0, lc)
    bottom = geo.addSpline(bottom_pts)
    right = geo.addLine(bottom_pts[-1], p_tr)
    top = geo.addLine(p_tr, p_tl)
    left = geo.addLine(p_tl, bottom_pts[0])
    outer = geo.addCurveLoop([bottom, right, top, left])

    lc_hole = CIRCLE_SCALE.get(n, SIZE_SCALE[n]) / n
    c = geo.addPoint(0.5, 0.6, 0, lc_hole)
    arcs_pts = [geo.addPoint(0.5 + 0.2 * math.cos(t), 0.6 + 0.2 * math.sin(t), 0, lc_hole)
                for t in (0, math.pi / 2, math.pi, 3 * math.pi / 2)]
    arcs = [geo.addCircleArc(arcs_pts[i], c, arcs_pts[(i + 1) % 4]) for i in range(4)]
    hole = geo.addCurveLoop(arcs)
    surf = geo.addPlaneSurface([outer, hole])
    geo.synchronize()
    gmsh.model.addPhysicalGroup(1, [right, top, left], 1)
    gmsh.model.addPhysicalGroup(1, arcs, 2)
    gmsh.model.addPhysicalGroup(1, [bottom], 3)
    gmsh.model.addPhysicalGroup(2, [surf], 4)
    gmsh.model.mesh.generate(2)
    _, _, tris = gmsh.model.mesh.getElements(2)
    return sum(len(t) for t in tris) // 3


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("outdir")
    ap.add_argument("--levels", default="8,16,32,64,128")
    args = ap.parse_args(argv)
    os.makedirs(args.outdir, exist_ok=True)
    gmsh.initialize()
    gmsh.option.setNumber("General.Terminal", 0)
    gmsh.option.setNumber("Mesh.MshFileVersion", 2.2)
    gmsh.option.setNumber("Mesh.Algorithm", 6)
    gmsh.option.setNumber("Mesh.MeshSizeFromCurvature", 0)
    for n in (int(s) for s in args.levels.split(",")):
        gmsh.clear()
        cells = build(n)
        path = os.path.join(args.outdir, f"example2_h{n}.msh")
        gmsh.write(path)
        print(f"h=1/{n}: {cells} cells -> {path}")
    gmsh.finalize()


if __name__ == "__main__":
    main()
