"""Uzawa iteration for Stokes flow with slip friction on two boundary parts.

Each step solves the Stokes saddle problem with the friction terms frozen on
the right-hand side, then updates the boundary multipliers by a projected step
``lam <- P(lam + rho * u_tau)`` onto the unit ball.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .fem_stokes import StokesSystem, boundary_load
from .friction import MonotoneFriction, NonmonotoneFriction, omega, project_unit_ball
from .mesh import BoundaryTag
from .sparse_linalg import SaddleSolver

log = logging.getLogger(__name__)

S1, S2 = BoundaryTag.SLIP1, BoundaryTag.SLIP2


@dataclass(frozen=True)
class UzawaConfig:
    rho: float = 10.0
    max_iter: int = 200
    tol: float = 1e-6

    def __post_init__(self):
        if not (self.rho > 0 and self.max_iter >= 1 and self.tol > 0):
            raise ValueError("UzawaConfig needs rho > 0, max_iter >= 1, tol > 0")


@dataclass
class UzawaState:
    u: np.ndarray                 # free-space velocity
    p: np.ndarray
    lam1: np.ndarray              # (nv_slip1, 2)
    lam2: np.ndarray              # (nv_slip2, 2)
    iteration: int = 0
    increments: list = field(default_factory=list)
    converged: bool = False
    max_lambda_norm: list = field(default_factory=list)
    zero_velocity_checks: int = 0
    u_full: np.ndarray = None

    def write_increments(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "relative_increment"])
            for i, r in enumerate(self.increments, start=1):
                w.writerow([i, repr(float(r))])


class UzawaSolver:
    """Holds the factorized saddle operator so repeated runs/steps reuse it."""

    def __init__(self, system: StokesSystem, fric1: MonotoneFriction, fric2: NonmonotoneFriction,
                 cfg: UzawaConfig = UzawaConfig(), saddle: SaddleSolver = None):
        self.system = system
        self.fric1 = fric1
        self.fric2 = fric2
        self.cfg = cfg
        self.saddle = saddle or system.saddle_solver()
        self.t1 = system.traces[S1]
        self.t2 = system.traces[S2]

    def initial_state(self):
        s = self.system
        return UzawaState(np.zeros(s.n_free), np.zeros(s.n_pressure),
                          np.zeros((len(self.t1.vertices), 2)), np.zeros((len(self.t2.vertices), 2)),
                          u_full=np.zeros(s.n_full))

    def rhs(self, state):
        s = self.system
        F = s.load.copy()
        if self.t1.n_points:
            F -= boundary_load(s, S1, state.lam1, self.fric1.g)
        if self.t2.n_points:
            ut = (self.t2.trace @ state.u_full).reshape(-1, 2)
            w = omega(self.fric2, np.linalg.norm(ut, axis=1))
            F -= boundary_load(s, S2, state.lam2, w)
        return F

    def step(self, state):
        """One Uzawa step; returns the new state and the relative L2 increment."""
        s = self.system
        u, p = self.saddle.solve(self.rhs(state))
        u_full = s.T @ u
        du = s.l2_velocity(u_full - state.u_full)
        nu = s.l2_velocity(u_full)
        rho = self.cfg.rho
        lam1, lam2 = state.lam1, state.lam2
        if len(lam1):
            lam1 = project_unit_ball(lam1 + rho * (self.t1.vertex_trace @ u_full).reshape(-1, 2))
        if len(lam2):
            lam2 = project_unit_ball(lam2 + rho * (self.t2.vertex_trace @ u_full).reshape(-1, 2))
        new = UzawaState(u, p, lam1, lam2, state.iteration + 1, list(state.increments), False,
                         list(state.max_lambda_norm), state.zero_velocity_checks, u_full)
        return new, du, nu

    def run(self, state=None, callback=None):
        state = state or self.initial_state()
        cfg = self.cfg
        while state.iteration < cfg.max_iter:
            state, du, nu = self.step(state)
            lam_max = max([np.linalg.norm(l, axis=1).max() for l in (state.lam1, state.lam2) if len(l)] or [0.0])
            state.max_lambda_norm.append(float(lam_max))
            if nu < 1e-14:
                state.zero_velocity_checks += 1
                rel = du
            else:
                rel = du / nu
            state.increments.append(float(rel))
            if callback is not None:
                callback(state)
            if rel < cfg.tol:
                state.converged = True
                break
        if not state.converged:
            log.warning("Uzawa stopped at max_iter=%d with increment %.3e", cfg.max_iter, state.increments[-1])
        return state


def run(system: StokesSystem, fric1: MonotoneFriction, fric2: NonmonotoneFriction,
        cfg: UzawaConfig = UzawaConfig(), callback=None) -> UzawaState:
    return UzawaSolver(system, fric1, fric2, cfg).run(callback=callback)


@dataclass
class Traction:
    points: np.ndarray       # vertex coordinates on the tag
    u_tau: np.ndarray        # (n, 2)
    sigma_tau: np.ndarray    # (n, 2)


def recover_traction(system: StokesSystem, state: UzawaState, fric1, fric2):
    """Tangential stress at the multiplier vertices of both slip parts."""
    out = {}
    for tag, lam in ((S1, state.lam1), (S2, state.lam2)):
        tbl = system.traces[tag]
        if not len(tbl.vertices):
            continue
        ut = (tbl.vertex_trace @ state.u_full).reshape(-1, 2)
        if tag == S1:
            sig = -fric1.g * lam
        else:
            sig = -omega(fric2, np.linalg.norm(ut, axis=1))[:, None] * lam
        out[tag] = Traction(system.mesh.vertices[tbl.vertices], ut, sig)
    return out


def complementarity_report(system: StokesSystem, state: UzawaState):
    """max | lam . u_tau - |u_tau| | per slip tag at the multiplier vertices."""
    out = {}
    for tag, lam in ((S1, state.lam1), (S2, state.lam2)):
        tbl = system.traces[tag]
        if not len(tbl.vertices):
            continue
        ut = (tbl.vertex_trace @ state.u_full).reshape(-1, 2)
        res = np.abs(np.einsum("ij,ij->i", lam, ut) - np.linalg.norm(ut, axis=1))
        out[tag] = (float(res.max()), float(np.linalg.norm(ut, axis=1).max()))
    return out
