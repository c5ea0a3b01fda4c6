"""Quadrature rules on the reference triangle and interval.

Triangle rules are given in barycentric coordinates with weights summing to 1,
so that ``int_T f = |T| * sum(w * f(x_q))``.
"""

import itertools

import numpy as np


def _orbit(a, b, c):
    return sorted(set(itertools.permutations((a, b, c))))


def _build(groups):
    pts, wts = [], []
    for w, bary in groups:
        for p in _orbit(*bary):
            pts.append(p)
            wts.append(w)
    return np.array(pts, dtype=float), np.array(wts, dtype=float)


# Dunavant rules
_DEG4 = [
    (0.223381589678011, (0.108103018168070, 0.445948490915965, 0.445948490915965)),
    (0.109951743655322, (0.816847572980459, 0.091576213509771, 0.091576213509771)),
]
_DEG6 = [
    (0.116786275726379, (0.501426509658179, 0.249286745170910, 0.249286745170910)),
    (0.050844906370207, (0.873821971016996, 0.063089014491502, 0.063089014491502)),
    (0.082851075618374, (0.053145049844817, 0.310352451033784, 0.636502499121399)),
]


def triangle_rule(degree):
    """(barycentric points (nq, 3), weights (nq,)) exact up to ``degree``."""
    if degree <= 1:
        return np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0])
    if degree <= 2:
        return np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]]), np.full(3, 1 / 3)
    if degree <= 4:
        pts, w = _build(_DEG4)
    elif degree <= 6:
        pts, w = _build(_DEG6)
    else:
        raise ValueError(f"no triangle rule of degree {degree}")
    # re-normalize the last printed digit away
    pts = pts / pts.sum(axis=1, keepdims=True)
    return pts, w / w.sum()


def gauss_interval(npts):
    """Gauss-Legendre points on [0, 1] with weights summing to 1."""
    x, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w
