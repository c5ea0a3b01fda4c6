"""Slip friction laws: monotone ``phi(z) = g|z|`` and the non-monotone radial law.

The non-monotone potential is ``psi(z) = int_0^{|z|} omega(t) dt`` with density
``omega(t) = (a - b) exp(-beta t) + b``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MonotoneFriction:
    g: float

    def __post_init__(self):
        if not self.g > 0:
            raise ValueError("friction bound g must be positive")

    def phi(self, z):
        return self.g * np.linalg.norm(np.atleast_2d(z), axis=-1)


@dataclass(frozen=True)
class NonmonotoneFriction:
    a: float
    b: float
    beta: float

    def __post_init__(self):
        # a == b is admitted: constant density, convex potential
        if not (self.a >= self.b > 0 and self.beta > 0):
            raise ValueError("need a >= b > 0 and beta > 0")

    def psi(self, z):
        r = np.linalg.norm(np.atleast_1d(z), axis=-1)
        return self.b * r + (self.a - self.b) * (1 - np.exp(-self.beta * r)) / self.beta

    def concave_part(self, r):
        """``psi = a|z| + k(|z|)`` with k concave, C^1 and k'(0) = 0."""
        return (self.a - self.b) * ((1 - np.exp(-self.beta * r)) / self.beta - r)

    def concave_slope(self, r):
        return (self.a - self.b) * (np.exp(-self.beta * r) - 1.0)

    @property
    def lipschitz_omega(self):
        return self.beta * (self.a - self.b)


def omega(fric: NonmonotoneFriction, t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("omega is defined for t >= 0")
    out = (fric.a - fric.b) * np.exp(-fric.beta * t) + fric.b
    return float(out) if out.ndim == 0 else out


def project_unit_ball(z):
    """Orthogonal projection onto the closed unit ball; works row-wise on (n, d)."""
    z = np.asarray(z, dtype=float)
    r = np.linalg.norm(z, axis=-1, keepdims=True)
    return np.where(r > 1.0, z / np.maximum(r, 1e-300), z)


def psi0(fric: NonmonotoneFriction, z, d):
    """Clarke directional derivative of the radial potential at z in direction d."""
    z = np.asarray(z, dtype=float)
    d = np.asarray(d, dtype=float)
    r = np.linalg.norm(z)
    if r == 0.0:
        return float(omega(fric, 0.0) * np.linalg.norm(d))
    return float(omega(fric, r) * np.dot(z, d) / r)


def psi0_limsup(fn, z, d, radius=1e-4, step=1e-6, samples=400, seed=0):
    """Numeric Clarke derivative: max difference quotient over w near z.

    ``fn`` is the potential.  Sampling covers a disc of ``radius`` around z
    plus z itself; the result approximates the limsup as both scales shrink.
    """
    rng = np.random.default_rng(seed)
    z = np.asarray(z, dtype=float)
    d = np.asarray(d, dtype=float)
    ang = rng.uniform(0, 2 * np.pi, samples)
    rad = radius * np.sqrt(rng.uniform(0, 1, samples))
    offs = np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])[:, :z.size]
    w = np.vstack([z[None, :], z + offs])
    best = -np.inf
    for lam in (step, step / 4):
        q = (fn(w + lam * d) - fn(w)) / lam
        best = max(best, float(np.max(q)))
    return best


def alpha_psi_estimate(fric: NonmonotoneFriction, rmax=5.0, n_radii=120, n_angles=24, rmin=1e-7) -> float:
    """Grid supremum of ``[psi0(z1; z2-z1) + psi0(z2; z1-z2)] / |z1-z2|^2``.

    The grid couples geometric radii in [rmin, rmax] with equispaced angles and
    includes z = 0; by rotational symmetry z1 is kept on the positive x axis.
    """
    radii = np.concatenate([[0.0], np.geomspace(rmin, rmax, n_radii)])
    ang = np.linspace(0, 2 * np.pi, n_angles, endpoint=False)
    z1 = np.column_stack([radii, np.zeros_like(radii)])                     # (n1, 2)
    z2 = (radii[:, None, None] * np.stack([np.cos(ang), np.sin(ang)], -1)[None]).reshape(-1, 2)

    def clarke(za, dd):
        r = np.linalg.norm(za, axis=-1)
        out = np.empty(r.shape)
        zero = r == 0
        out[zero] = fric.a * np.linalg.norm(dd[zero], axis=-1)
        nz = ~zero
        out[nz] = omega(fric, r[nz]) * np.einsum("ij,ij->i", za[nz], dd[nz]) / r[nz]
        return out

    Z1 = np.repeat(z1, len(z2), axis=0)
    Z2 = np.tile(z2, (len(z1), 1))
    diff = Z2 - Z1
    den = (diff ** 2).sum(-1)
    keep = den > 1e-30
    num = clarke(Z1[keep], diff[keep]) + clarke(Z2[keep], -diff[keep])
    return float(max(0.0, np.max(num / den[keep])))


def smallness_check(alpha_psi, mu, lambda0):
    """``alpha_psi < 2 mu lambda0``; returns (ok, margin)."""
    margin = 2.0 * mu * lambda0 - alpha_psi
    return bool(margin > 0), float(margin)
