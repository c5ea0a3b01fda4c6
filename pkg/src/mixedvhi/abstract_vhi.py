"""Finite-dimensional mixed variational-hemivariational inequalities.

The unknowns are ``u`` in ``V = R^n`` and ``p`` in ``Q = R^m``.  The problem

    <A u, v - u> + Phi(u, v) - Phi(u, u) + Psi0(u; v - u) >= <f, v - u> - (v - u)^T B^T p
    (q - p)^T B u <= 0        for all v in K_V, q in K_Q

is solved by an outer projection iteration ``p <- P_KQ(p + rho B u(p))`` where
``u(p)`` solves the inner inequality with ``p`` frozen.

Building blocks used here:

* ``A(u) = K u + gamma * tanh(u)`` with K symmetric positive definite.
* ``Phi(u, v) = sum_k g_k(u) |v_{G_k}|`` with ``g_k(u) = g0_k + g1_k sin(w_k . u)``.
* ``Psi(v) = sum_k c_k psi(v_{G_k})`` with the radial non-monotone law of
  :class:`mixedvhi.friction.NonmonotoneFriction`.
* ``K_V`` is all of V or a box on coordinates in singleton groups or outside
  every group; ``K_Q`` is all of Q or the nonnegative orthant.

The groups ``G_k`` are disjoint and live on coordinates ``n0..n-1``; the first
``n0`` coordinates span ``V0``, on which neither functional depends.
"""

from __future__ import annotations

import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .friction import NonmonotoneFriction, omega

log = logging.getLogger(__name__)


class InnerSolveError(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


class OuterIterationError(RuntimeError):
    def __init__(self, message, last_ratio):
        super().__init__(message)
        self.last_ratio = last_ratio


class TheoryViolation(AssertionError):
    pass


@dataclass(frozen=True)
class Contraction:
    theta: float
    kappa: float       # nan when not real
    ok: bool           # theta in (0, M_A^2 / alpha_b^2)

    def __iter__(self):
        return iter((self.theta, self.kappa))


def theta_kappa(c, rho) -> Contraction:
    """Contraction constants of the projection iteration for step ``rho``.

    ``c`` is anything carrying ``m_A, M_A, M_b, alpha_b, alpha_phi, alpha_psi``.
    """
    if not rho > 0:
        raise ValueError("rho must be positive")
    gap = c.m_A - c.alpha_phi - c.alpha_psi
    theta = 2.0 * rho * gap - rho ** 2 * c.M_b ** 2
    arg = 1.0 - theta * c.alpha_b ** 2 / c.M_A ** 2
    kappa = math.sqrt(arg) if arg >= 0 else float("nan")
    ok = theta > 0 and (c.alpha_b == 0 or theta <= c.M_A ** 2 / c.alpha_b ** 2 * (1 + 1e-12))
    return Contraction(theta, kappa, bool(ok))


@dataclass(frozen=True)
class Constants:
    m_A: float
    M_A: float
    M_b: float
    alpha_b: float
    alpha_phi: float = 0.0
    alpha_psi: float = 0.0


def _as_groups(groups):
    return tuple(np.asarray(g, dtype=np.int64).ravel() for g in groups)


@dataclass
class MixedVHIProblem:
    K: np.ndarray
    B: np.ndarray
    f: np.ndarray
    n0: int
    gamma: float = 0.0
    groups: tuple = ()
    phi_g0: np.ndarray = None
    phi_g1: np.ndarray = None
    phi_W: np.ndarray = None
    psi: NonmonotoneFriction = None
    psi_c: np.ndarray = None
    kv_lower: np.ndarray = None
    kv_upper: np.ndarray = None
    kq: str = "whole"
    # certified constants, filled in by __post_init__
    m_A: float = field(init=False)
    M_A: float = field(init=False)
    M_b: float = field(init=False)
    alpha_b: float = field(init=False)
    alpha_phi: float = field(init=False)
    alpha_psi: float = field(init=False)

    def __post_init__(self):
        self.K = np.atleast_2d(np.asarray(self.K, dtype=float))
        n = self.K.shape[0]
        self.B = np.asarray(self.B, dtype=float).reshape(-1, n)
        self.f = np.asarray(self.f, dtype=float).ravel()
        self.groups = _as_groups(self.groups)
        ng = len(self.groups)
        self.phi_g0 = np.zeros(ng) if self.phi_g0 is None else np.asarray(self.phi_g0, float).ravel()
        self.phi_g1 = np.zeros(ng) if self.phi_g1 is None else np.asarray(self.phi_g1, float).ravel()
        self.phi_W = np.zeros((ng, n)) if self.phi_W is None else np.asarray(self.phi_W, float).reshape(ng, n)
        self.psi_c = np.zeros(ng) if self.psi_c is None else np.asarray(self.psi_c, float).ravel()
        if self.psi is None:
            self.psi_c = np.zeros(ng)
        if self.kq not in ("whole", "orthant"):
            raise ValueError("kq must be 'whole' or 'orthant'")
        self._check_structure()
        self._certify()

    # ------------------------------------------------------------------
    # construction checks
    # ------------------------------------------------------------------
    @property
    def n(self):
        return self.K.shape[0]

    @property
    def m(self):
        return self.B.shape[0]

    def _check_structure(self):
        n = self.n
        if self.f.shape != (n,):
            raise ValueError("f has the wrong length")
        if not 0 <= self.n0 <= n:
            raise ValueError("n0 out of range")
        if not np.allclose(self.K, self.K.T, atol=1e-12 * max(1.0, np.abs(self.K).max())):
            raise ValueError("K must be symmetric")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        gid = np.full(n, -1, dtype=np.int64)
        for k, g in enumerate(self.groups):
            if g.size not in (1, 2) or np.any(g < self.n0) or np.any(g >= n):
                raise ValueError("groups must have 1 or 2 coordinates outside V0")
            if np.any(gid[g] >= 0):
                raise ValueError("groups must be disjoint")
            gid[g] = k
        self._gid = gid
        ng = len(self.groups)
        for name in ("phi_g0", "phi_g1", "psi_c"):
            arr = getattr(self, name)
            if arr.shape != (ng,) or np.any(arr < 0):
                raise ValueError(f"{name} needs one nonnegative value per group")
        if np.any(self.phi_g0 < self.phi_g1 * 1.0):
            raise ValueError("phi weights need g0 >= g1 so that Phi stays nonnegative")
        self._gsize = np.array([g.size for g in self.groups], dtype=np.int64)
        self._box = self.kv_lower is not None or self.kv_upper is not None
        if self._box:
            lo = np.full(n, -np.inf) if self.kv_lower is None else np.asarray(self.kv_lower, float).ravel()
            hi = np.full(n, np.inf) if self.kv_upper is None else np.asarray(self.kv_upper, float).ravel()
            if lo.shape != (n,) or hi.shape != (n,) or np.any(lo > 0) or np.any(hi < 0):
                raise ValueError("box must contain the origin")
            bounded = np.isfinite(lo) | np.isfinite(hi)
            if np.any(bounded[: self.n0]):
                raise ValueError("box constraints may only act outside V0")
            in_pair = np.zeros(n, bool)
            for g in self.groups:
                if g.size == 2:
                    in_pair[g] = True
            if np.any(bounded & in_pair):
                raise ValueError("box constraints are limited to singleton or ungrouped coordinates")
            self.kv_lower, self.kv_upper = lo, hi

    def _certify(self):
        ev = np.linalg.eigvalsh(self.K)
        if ev[0] <= 0:
            raise ValueError("K must be positive definite")
        self.m_A = float(ev[0])
        self.M_A = float(ev[-1] + self.gamma)
        self.M_b = float(np.linalg.norm(self.B, 2)) if self.m else 0.0
        if self.m:
            B0 = self.B[:, : self.n0]
            sv = np.linalg.svd(B0, compute_uv=False) if B0.size else np.zeros(0)
            self.alpha_b = float(sv[self.m - 1]) if sv.size >= self.m else 0.0
        else:
            self.alpha_b = 0.0
        lk = self.phi_g1 * np.linalg.norm(self.phi_W, axis=1)
        self.alpha_phi = float(np.sqrt(np.sum(lk ** 2)))
        if self.psi is not None and self.psi_c.size:
            self.alpha_psi = float(self.psi.lipschitz_omega * self.psi_c.max())
        else:
            self.alpha_psi = 0.0
        if not self.alpha_phi + self.alpha_psi < self.m_A:
            raise ValueError(
                f"smallness fails: alpha_phi + alpha_psi = {self.alpha_phi + self.alpha_psi:.6g} >= m_A = {self.m_A:.6g}"
            )
        if self.m and not self.alpha_b > 0:
            raise ValueError("B restricted to V0 must have full row rank")

    @property
    def constants(self) -> Constants:
        return Constants(self.m_A, self.M_A, self.M_b, self.alpha_b, self.alpha_phi, self.alpha_psi)

    @property
    def c0(self):
        """Bound of velocity increments by pressure increments."""
        return self.M_b / (self.m_A - self.alpha_phi - self.alpha_psi)

    @property
    def c_delta(self):
        """Trace constant when Psi is read as a weighted integral: alpha_Psi = alpha_psi * c_delta^2."""
        return float(np.sqrt(self.psi_c.max())) if self.psi_c.size else 0.0

    def default_rho(self):
        """Step maximizing theta."""
        if self.M_b == 0:
            return 1.0
        return (self.m_A - self.alpha_phi - self.alpha_psi) / self.M_b ** 2

    # ------------------------------------------------------------------
    # oracles
    # ------------------------------------------------------------------
    def A(self, u):
        return self.K @ u + self.gamma * np.tanh(u)

    def phi_weights(self, u):
        return self.phi_g0 + self.phi_g1 * np.sin(self.phi_W @ u)

    def _group_norms(self, v):
        ng = len(self.groups)
        if ng == 0:
            return np.zeros(0)
        mask = self._gid >= 0
        sq = np.bincount(self._gid[mask], weights=v[mask] ** 2, minlength=ng)
        return np.sqrt(sq)

    def phi(self, u, v):
        return float(self.phi_weights(u) @ self._group_norms(v))

    def psi_value(self, v):
        if self.psi is None or not len(self.groups):
            return 0.0
        r = self._group_norms(v)
        return float(self.psi_c @ (self.psi.b * r + (self.psi.a - self.psi.b) * (1 - np.exp(-self.psi.beta * r)) / self.psi.beta))

    def _radial_dir(self, v, d, weights):
        """sum_k weights_k * (v_G . d_G / |v_G| if v_G != 0 else |d_G|)."""
        out = 0.0
        for k, g in enumerate(self.groups):
            if weights[k] == 0:
                continue
            r = np.linalg.norm(v[g])
            out += weights[k] * (np.dot(v[g], d[g]) / r if r > 0 else np.linalg.norm(d[g]))
        return out

    def phi_dir(self, u, d):
        """Directional derivative of Phi(u, .) at u in direction d."""
        return float(self._radial_dir(u, d, self.phi_weights(u)))

    def psi0(self, u, d):
        """Clarke directional derivative of Psi at u in direction d."""
        if self.psi is None:
            return 0.0
        r = self._group_norms(u)
        w = self.psi_c * np.asarray([omega(self.psi, x) for x in r]) if len(r) else r
        return float(self._radial_dir(u, d, w))

    def concave_grad(self, u):
        """Gradient of the C^1 concave remainder of Psi, zero on V0 and ungrouped coordinates."""
        out = np.zeros(self.n)
        if self.psi is None or not len(self.groups):
            return out
        r = self._group_norms(u)
        slope = self.psi_c * self.psi.concave_slope(r)
        mask = self._gid >= 0
        rr = r[self._gid[mask]]
        s = slope[self._gid[mask]]
        out[mask] = np.where(rr > 0, s * u[mask] / np.where(rr > 0, rr, 1.0), 0.0)
        return out

    def prox(self, u, x, tau):
        """prox of tau * (Phi(u, .) + convex part of Psi + indicator of K_V) at x."""
        y = x.copy()
        if len(self.groups):
            thr = tau * (self.phi_weights(u) + (self.psi.a * self.psi_c if self.psi is not None else 0.0))
            r = self._group_norms(x)
            scale = np.where(r > thr, 1.0 - thr / np.where(r > 0, r, 1.0), 0.0)
            mask = self._gid >= 0
            y[mask] = x[mask] * scale[self._gid[mask]]
        return self.project_kv(y)

    def project_kv(self, v):
        if not self._box:
            return v
        return np.clip(v, self.kv_lower, self.kv_upper)

    def project_kq(self, q):
        return np.maximum(q, 0.0) if self.kq == "orthant" else q

    # ------------------------------------------------------------------
    # structure probes
    # ------------------------------------------------------------------
    def probe_structure(self, n_probes=20, seed=0, tol=1e-12):
        """Check on random probes that Phi(u, .) and Psi ignore V0 directions."""
        rng = np.random.default_rng(seed)
        for _ in range(n_probes):
            u, v = rng.standard_normal(self.n), rng.standard_normal(self.n)
            w = np.zeros(self.n)
            w[: self.n0] = rng.standard_normal(self.n0)
            if abs(self.phi(u, v + w) - self.phi(u, v)) > tol * (1 + abs(self.phi(u, v))):
                return False
            if abs(self.psi0(v, w)) > tol:
                return False
        return True


# ----------------------------------------------------------------------
# inner solve
# ----------------------------------------------------------------------
def _fb_rate(prob, tau):
    m1 = prob.m_A - prob.alpha_psi
    L = prob.M_A + prob.alpha_psi
    return math.sqrt(max(0.0, 1.0 - 2.0 * tau * m1 + (tau * L) ** 2)) + tau * prob.alpha_phi


def forward_backward_step(prob):
    """(tau, q): the step minimizing the certified contraction rate q of the inner iteration."""
    m1 = prob.m_A - prob.alpha_psi
    L = prob.M_A + prob.alpha_psi
    res = minimize_scalar(lambda t: _fb_rate(prob, t), bounds=(1e-12, 2.0 * m1 / L ** 2), method="bounded",
                          options={"xatol": 1e-10})
    tau = float(res.x)
    q = _fb_rate(prob, tau)
    if not q < 1:
        raise ValueError("inner iteration has no contracting step")
    return tau, q


def inner_vhi_solve(prob: MixedVHIProblem, p_fixed, tol=1e-12, u0=None, max_iter=100000, return_count=False):
    """Solve the inner inequality with the pressure frozen at ``p_fixed``.

    Forward-backward iteration ``u <- prox(u - tau (A u + grad k(u) + B^T p - f))``.
    The map contracts with rate q, so stopping when ``|du| / (1 - q) <= tol``
    certifies ``|u - u*| <= tol``.
    """
    tau, q = getattr(prob, "_fb_cache", None) or forward_backward_step(prob)
    prob._fb_cache = (tau, q)
    p_fixed = np.asarray(p_fixed, dtype=float).ravel()
    load = prob.f - (prob.B.T @ p_fixed if prob.m else 0.0)
    u = np.zeros(prob.n) if u0 is None else np.asarray(u0, dtype=float).copy()
    trace = []
    for it in range(1, max_iter + 1):
        x = u - tau * (prob.A(u) + prob.concave_grad(u) - load)
        un = prob.prox(u, x, tau)
        step = float(np.linalg.norm(un - u))
        u = un
        if it % 50 == 0 or it < 5:
            trace.append(step)
        if step <= tol * (1.0 - q):
            return (u, it) if return_count else u
        if not np.isfinite(step):
            break
    raise InnerSolveError(f"inner solve did not reach tol={tol:.1e} in {max_iter} steps", trace)


def vhi_residual(prob: MixedVHIProblem, u, p, n_random=16, seed=0):
    """Largest violation of the inner inequality at (u, p) over probe directions.

    The inequality holds for all v iff ``r(d) = <A u + B^T p - f, d> + Phi'(u; d)
    + Psi0(u; d) >= 0`` for every feasible unit direction d.  Probes are the
    coordinate directions, their negatives and ``n_random`` random unit vectors,
    each pushed into the tangent cone of K_V at u.
    """
    rng = np.random.default_rng(seed)
    n = prob.n
    F = prob.A(u) - prob.f + (prob.B.T @ p if prob.m else 0.0)
    dirs = [np.eye(n)[i] * s for i in range(n) for s in (1.0, -1.0)]
    for _ in range(n_random):
        d = rng.standard_normal(n)
        dirs.append(d / np.linalg.norm(d))
    worst = 0.0
    for d in dirs:
        if prob._box:
            d = d.copy()
            d[(u <= prob.kv_lower + 1e-14) & (d < 0)] = 0.0
            d[(u >= prob.kv_upper - 1e-14) & (d > 0)] = 0.0
            nd = np.linalg.norm(d)
            if nd == 0:
                continue
            d = d / nd
        r = F @ d + prob.phi_dir(u, d) + prob.psi0(u, d)
        worst = max(worst, -r)
    return float(worst)


def fixed_point_residual(prob: MixedVHIProblem, u, p, rho):
    """``|p - P_KQ(p + rho B u)|``: zero exactly at solutions of the multiplier relation."""
    return float(np.linalg.norm(p - prob.project_kq(p + rho * (prob.B @ u))))


# ----------------------------------------------------------------------
# outer iteration
# ----------------------------------------------------------------------
@dataclass
class IterationReport:
    rho: float
    theta: float
    kappa: float
    ratios: list
    u: np.ndarray
    p: np.ndarray
    iterations: int
    dp: list = field(default_factory=list)
    du: list = field(default_factory=list)
    inner_steps: int = 0
    residual_vhi: float = float("nan")
    residual_fixed_point: float = float("nan")

    def tail_ratios(self, start=3, floor=1e-9):
        """Ratios from step ``start`` on, kept while the numerator step exceeds ``floor``."""
        return [r for i, r in enumerate(self.ratios) if i + 2 >= start and self.dp[i + 1] > floor]


def projection_iteration(prob: MixedVHIProblem, rho=None, p0=None, tol=1e-11, max_iter=20000,
                         inner_factor=0.01, inner_floor=1e-14) -> IterationReport:
    """Outer projection iteration on the pressure with a warm-started inner solve.

    The inner tolerance at step n is ``inner_factor * |p_n - p_{n-1}|`` bounded
    below by ``inner_floor``.  Iteration stops once ``|p_{n+1} - p_n| <= tol``.
    """
    rho = prob.default_rho() if rho is None else float(rho)
    con = theta_kappa(prob, rho)
    if not con.ok:
        log.warning("rho=%.4g gives theta=%.4g outside the contraction range", rho, con.theta)
    p = np.zeros(prob.m) if p0 is None else prob.project_kq(np.asarray(p0, dtype=float).ravel())
    u = np.zeros(prob.n)
    dp_hist, du_hist, ratios = [], [], []
    last_dp = np.inf
    inner_steps = 0
    inner_tol = 1e-6
    for it in range(1, max_iter + 1):
        u_new, cnt = inner_vhi_solve(prob, p, tol=inner_tol, u0=u, return_count=True)
        inner_steps += cnt
        if it > 1:
            du_hist.append(float(np.linalg.norm(u_new - u)))
        u = u_new
        p_new = prob.project_kq(p + rho * (prob.B @ u)) if prob.m else p
        dp = float(np.linalg.norm(p_new - p))
        dp_hist.append(dp)
        if len(dp_hist) >= 2 and dp_hist[-2] > 0:
            ratios.append(dp / dp_hist[-2])
        p = p_new
        if dp <= tol:
            # converged pressure: polish u against it
            u = inner_vhi_solve(prob, p, tol=inner_floor, u0=u)
            rep = IterationReport(rho, con.theta, con.kappa, ratios, u, p, it, dp_hist, du_hist, inner_steps)
            rep.residual_vhi = vhi_residual(prob, u, p)
            rep.residual_fixed_point = fixed_point_residual(prob, u, p, rho)
            return rep
        inner_tol = max(inner_floor, inner_factor * dp)
        last_dp = dp
    raise OuterIterationError(f"no convergence in {max_iter} outer steps (last increment {last_dp:.3e})",
                              ratios[-1] if ratios else float("nan"))


def solve(prob, rho=None, p0=None, tol=1e-11):
    rep = projection_iteration(prob, rho=rho, p0=p0, tol=tol)
    return rep.u, rep.p


def lipschitz_dependence(prob: MixedVHIProblem, f1, f2, rho=None, tol=1e-12):
    """(measured |u1 - u2| / |f1 - f2|, bound 1 / (m_A - alpha_Phi - alpha_Psi))."""
    f1, f2 = np.asarray(f1, float).ravel(), np.asarray(f2, float).ravel()
    bound = 1.0 / (prob.m_A - prob.alpha_phi - prob.alpha_psi)
    df = float(np.linalg.norm(f1 - f2))
    if df == 0:
        return 0.0, bound
    sols = []
    for fk in (f1, f2):
        sols.append(solve(with_load(prob, fk), rho=rho, tol=tol)[0])
    ratio = float(np.linalg.norm(sols[0] - sols[1])) / df
    if ratio > bound * (1 + 1e-8):
        raise TheoryViolation(f"velocity Lipschitz ratio {ratio:.6g} exceeds bound {bound:.6g}")
    return ratio, bound


def with_load(prob: MixedVHIProblem, f) -> MixedVHIProblem:
    return MixedVHIProblem(prob.K, prob.B, f, prob.n0, prob.gamma, prob.groups, prob.phi_g0, prob.phi_g1,
                           prob.phi_W, prob.psi, prob.psi_c, prob.kv_lower, prob.kv_upper, prob.kq)


# ----------------------------------------------------------------------
# random admissible instances
# ----------------------------------------------------------------------
def random_instance(seed, n=None, m=None, kq=None, box=None, margin=0.5) -> MixedVHIProblem:
    """Well-conditioned admissible instance; ``alpha_phi + alpha_psi <= margin * m_A``."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 9)) if n is None else n
    m = int(rng.integers(1, 3)) if m is None else m
    n0 = max(m, n // 2)
    Qm, _ = np.linalg.qr(rng.standard_normal((n, n)))
    K = Qm @ np.diag(rng.uniform(1.0, 1.5, n)) @ Qm.T
    K = 0.5 * (K + K.T)
    gamma = float(rng.uniform(0.0, 0.2))
    # B with well-separated singular values on V0
    B = rng.standard_normal((m, n)) * 0.3
    U, _ = np.linalg.qr(rng.standard_normal((n0, n0)))
    B[:, :n0] += U[:m, :n0]
    free = list(range(n0, n))
    groups, i = [], 0
    while i < len(free):
        size = 2 if (i + 1 < len(free) and rng.random() < 0.5) else 1
        groups.append(free[i:i + size])
        i += size
    ng = len(groups)
    m_A = float(np.linalg.eigvalsh(K)[0])
    budget = margin * m_A
    psi = NonmonotoneFriction(a=float(rng.uniform(0.3, 0.6)), b=float(rng.uniform(0.05, 0.25)), beta=float(rng.uniform(0.5, 2.0)))
    c_max = 0.5 * budget / psi.lipschitz_omega
    psi_c = rng.uniform(0.3, 1.0, ng) * c_max
    W = rng.standard_normal((ng, n))
    W /= np.linalg.norm(W, axis=1, keepdims=True)
    g1 = rng.uniform(0.2, 1.0, ng)
    g1 *= 0.5 * budget / np.sqrt(np.sum(g1 ** 2))
    g0 = g1 + rng.uniform(0.05, 0.5, ng)
    kq = kq or ("orthant" if rng.random() < 0.3 else "whole")
    lo = hi = None
    if box if box is not None else rng.random() < 0.3:
        lo, hi = np.full(n, -np.inf), np.full(n, np.inf)
        for g in groups:
            if len(g) == 1:
                lo[g[0]], hi[g[0]] = -float(rng.uniform(0.05, 0.5)), float(rng.uniform(0.05, 0.5))
    f = rng.standard_normal(n) * 1.5
    return MixedVHIProblem(K, B, f, n0, gamma, groups, g0, g1, W, psi, psi_c, lo, hi, kq)


# ----------------------------------------------------------------------
# key = value instance format
# ----------------------------------------------------------------------
def _fmt_vec(v):
    return ", ".join(repr(float(x)) for x in np.ravel(v))


def _fmt_mat(M):
    return "; ".join(_fmt_vec(r) for r in np.atleast_2d(M))


def _parse_vec(s):
    s = s.strip()
    return np.array([float(x) for x in s.split(",")]) if s else np.zeros(0)


def _parse_mat(s):
    rows = [r for r in s.split(";") if r.strip()]
    return np.array([_parse_vec(r) for r in rows]) if rows else np.zeros((0, 0))


def dump_instance(prob: MixedVHIProblem) -> str:
    """Text form readable by :func:`load_instance`; floats round-trip exactly."""
    out = io.StringIO()
    w = lambda k, v: out.write(f"{k} = {v}\n")
    w("n", prob.n)
    w("m", prob.m)
    w("n0", prob.n0)
    w("operator", "linear_tanh")
    w("K", _fmt_mat(prob.K))
    w("gamma", repr(float(prob.gamma)))
    w("B", _fmt_mat(prob.B) if prob.m else "")
    w("f", _fmt_vec(prob.f))
    w("groups", "; ".join(", ".join(str(int(i)) for i in g) for g in prob.groups))
    w("phi", "weighted_norm" if len(prob.groups) else "none")
    w("phi_g0", _fmt_vec(prob.phi_g0))
    w("phi_g1", _fmt_vec(prob.phi_g1))
    w("phi_W", _fmt_mat(prob.phi_W) if len(prob.groups) else "")
    if prob.psi is None:
        w("psi", "none")
    else:
        w("psi", "radial")
        w("psi_a", repr(prob.psi.a))
        w("psi_b", repr(prob.psi.b))
        w("psi_beta", repr(prob.psi.beta))
        w("psi_c", _fmt_vec(prob.psi_c))
    if prob._box:
        w("kv", "box")
        w("kv_lower", _fmt_vec(prob.kv_lower))
        w("kv_upper", _fmt_vec(prob.kv_upper))
    else:
        w("kv", "whole")
    w("kq", prob.kq)
    return out.getvalue()


def load_instance(text: str) -> MixedVHIProblem:
    kv = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"expected 'key = value': {raw!r}")
        k, v = line.split("=", 1)
        kv[k.strip()] = v.strip()
    n = int(kv["n"])
    m = int(kv.get("m", 0))
    if kv.get("operator", "linear_tanh") != "linear_tanh":
        raise ValueError(f"unknown operator {kv['operator']!r}")
    K = _parse_mat(kv["K"]).reshape(n, n)
    B = _parse_mat(kv.get("B", "")).reshape(m, n)
    groups = [[int(i) for i in g.split(",")] for g in kv.get("groups", "").split(";") if g.strip()]
    phi_name = kv.get("phi", "none")
    if phi_name not in ("none", "weighted_norm"):
        raise ValueError(f"unknown phi {phi_name!r}")
    g0 = _parse_vec(kv.get("phi_g0", "")) if phi_name != "none" else None
    g1 = _parse_vec(kv.get("phi_g1", "")) if phi_name != "none" else None
    W = _parse_mat(kv["phi_W"]) if phi_name != "none" and kv.get("phi_W") else None
    psi = None
    psi_c = None
    name = kv.get("psi", "none")
    if name == "radial":
        psi = NonmonotoneFriction(float(kv["psi_a"]), float(kv["psi_b"]), float(kv["psi_beta"]))
        psi_c = _parse_vec(kv["psi_c"])
    elif name != "none":
        raise ValueError(f"unknown psi {name!r}")
    lo = hi = None
    if kv.get("kv", "whole") == "box":
        lo, hi = _parse_vec(kv["kv_lower"]), _parse_vec(kv["kv_upper"])
    elif kv.get("kv", "whole") != "whole":
        raise ValueError(f"unknown kv {kv['kv']!r}")
    return MixedVHIProblem(K, B, _parse_vec(kv["f"]), int(kv["n0"]), float(kv.get("gamma", 0.0)), groups,
                           g0, g1, W, psi, psi_c, lo, hi, kv.get("kq", "whole"))


# ----------------------------------------------------------------------
# batch verification
# ----------------------------------------------------------------------
@dataclass
class InstanceCheck:
    seed: int
    kappa: float
    max_tail_ratio: float
    max_coupling: float        # max |du_n| / (c0 |dp_{n-1}|)
    uniqueness_gap: float
    lipschitz_ratio: float
    lipschitz_bound: float
    residual: float
    iterations: int

    @property
    def passed(self) -> bool:
        return (self.max_tail_ratio <= self.kappa + 1e-8 and self.uniqueness_gap <= 1e-8
                and self.lipschitz_ratio <= self.lipschitz_bound * (1 + 1e-8) and self.max_coupling <= 1 + 1e-6)


def check_instance(seed) -> InstanceCheck:
    prob = random_instance(seed)
    rep = projection_iteration(prob)
    tail = rep.tail_ratios()
    coup = [du / (prob.c0 * rep.dp[i]) for i, du in enumerate(rep.du) if rep.dp[i] > 1e-9]
    rng = np.random.default_rng(10_000 + seed)
    rep2 = projection_iteration(prob, p0=rng.standard_normal(prob.m) * 3.0)
    gap = float(np.linalg.norm(rep.u - rep2.u) + np.linalg.norm(rep.p - rep2.p))
    f2 = prob.f + rng.standard_normal(prob.n) * 0.5
    ratio, bound = lipschitz_dependence(prob, prob.f, f2)
    return InstanceCheck(seed, rep.kappa, max(tail, default=0.0), max(coup, default=0.0), gap, ratio, bound,
                         max(rep.residual_vhi, rep.residual_fixed_point), rep.iterations)


def verify_batch(n_instances=20, seed=0, workers=1):
    seeds = [seed + i for i in range(n_instances)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            return list(ex.map(check_instance, seeds))
    return [check_instance(s) for s in seeds]
