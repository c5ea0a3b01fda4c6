import numpy as np
import pytest

from mixedvhi.abstract_vhi import (Constants, InnerSolveError, MixedVHIProblem, OuterIterationError, check_instance,
                                   dump_instance, forward_backward_step, inner_vhi_solve, lipschitz_dependence,
                                   load_instance, projection_iteration, random_instance, theta_kappa, vhi_residual)
from mixedvhi.friction import NonmonotoneFriction, omega

PSI = NonmonotoneFriction(0.35, 0.25, 1.0)


# ---------------------------------------------------------------- contraction constants

def test_theta_kappa_example():
    con = theta_kappa(Constants(2.0, 2.0, 1.0, 1.0), 1.0)
    assert con.theta == pytest.approx(3.0, abs=1e-15)
    assert con.kappa == pytest.approx(0.5, abs=1e-15)
    assert con.ok


def test_theta_kappa_small_step_limit():
    c = Constants(2.0, 2.0, 1.0, 1.0)
    prev = 0.0
    for rho in (1e-2, 1e-4, 1e-6, 1e-8):
        th, ka = theta_kappa(c, rho)
        assert 0 < th and prev < ka < 1
        prev = ka
    assert prev == pytest.approx(1.0, abs=1e-7)


def test_theta_kappa_vertex_flagged():
    c = Constants(2.0, 2.0, 1.0, 1.0, alpha_phi=0.25, alpha_psi=0.25)
    con = theta_kappa(c, 2 * (2.0 - 0.5) / 1.0)
    assert con.theta == pytest.approx(0.0, abs=1e-12)
    assert not con.ok


def test_theta_kappa_rejects_nonpositive_rho():
    with pytest.raises(ValueError):
        theta_kappa(Constants(1, 1, 1, 1), 0.0)


# ---------------------------------------------------------------- construction

def test_constants_of_linear_case():
    prob = MixedVHIProblem(np.eye(2), [[0.0, 1.0]], [1.0, 0.0], n0=2)
    assert (prob.m_A, prob.M_A, prob.M_b, prob.alpha_b) == pytest.approx((1, 1, 1, 1))
    assert prob.m_A <= prob.M_A


@pytest.mark.parametrize("kwargs, msg", [
    (dict(K=[[1.0, 0.5], [0.0, 1.0]]), "symmetric"),
    (dict(groups=[[1], [1]]), "disjoint"),
    (dict(groups=[[0]]), "outside V0"),
    (dict(groups=[[1]], psi=PSI, psi_c=[20.0]), "smallness"),
    (dict(K=[[1.0, 0.0], [0.0, -1.0]]), "positive definite"),
    (dict(B=[[0.0, 1.0]]), "full row rank"),
])
def test_construction_errors(kwargs, msg):
    base = dict(K=np.eye(2), B=[[1.0, 0.0]], f=[1.0, 1.0], n0=1)
    base.update(kwargs)
    with pytest.raises(ValueError, match=msg):
        MixedVHIProblem(**base)


def test_box_on_pair_group_rejected():
    with pytest.raises(ValueError, match="singleton"):
        MixedVHIProblem(np.eye(3), [[1.0, 0, 0]], np.ones(3), 1, groups=[[1, 2]], kv_lower=[-np.inf, -1, -1])


def test_structure_probe_on_random_instances():
    for seed in range(5):
        assert random_instance(seed).probe_structure()


# ---------------------------------------------------------------- projection iteration

def test_linear_case_limit():
    prob = MixedVHIProblem(np.eye(2), [[0.0, 1.0]], [1.0, 0.0], n0=2)
    rep = projection_iteration(prob, rho=1.0, tol=1e-13)
    np.testing.assert_allclose(rep.u, [1.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(rep.p, [0.0], atol=1e-12)
    assert rep.residual_fixed_point <= 1e-12


def _nonconvex_2d():
    K = np.array([[2.0, 0.3], [0.3, 1.5]])
    return MixedVHIProblem(K, [[1.0, 0.5]], [1.0, 3.0], n0=1, groups=[[1]], psi=PSI, psi_c=[5.0])


def _residual_2d(prob, u1, p):
    """VI residual on the constraint line u0 = -0.5 u1, vectorized over grids of (u1, p)."""
    u0 = -0.5 * u1
    F0 = prob.K[0, 0] * u0 + prob.K[0, 1] * u1 - prob.f[0] + p
    F1 = prob.K[1, 0] * u0 + prob.K[1, 1] * u1 - prob.f[1] + 0.5 * p
    c = prob.psi_c[0]
    r = np.abs(u1)
    # directional derivative of Psi along +-e1
    w = c * omega(PSI, r)
    plus = np.where(r > 0, w * np.sign(u1), w)
    minus = np.where(r > 0, -w * np.sign(u1), w)
    viol = np.maximum(0, np.maximum(-(F1 + plus), -(-F1 + minus)))
    return np.abs(F0) + viol


def _grid_oracle_2d(prob):
    cu, cp, half = 0.0, 0.0, 10.0
    for _ in range(3):
        U, P = np.meshgrid(np.linspace(cu - half, cu + half, 401), np.linspace(cp - half, cp + half, 401))
        R = _residual_2d(prob, U, P)
        k = np.unravel_index(np.argmin(R), R.shape)
        cu, cp = U[k], P[k]
        half /= 50
    return np.array([-0.5 * cu, cu]), np.array([cp])


def test_nonconvex_2d_matches_grid_oracle():
    prob = _nonconvex_2d()
    assert prob.alpha_psi == pytest.approx(0.5)
    rep = projection_iteration(prob, tol=1e-12)
    u_ref, p_ref = _grid_oracle_2d(prob)
    assert abs(rep.u[1]) > 0.1             # sliding, so the nonconvex branch is active
    np.testing.assert_allclose(rep.u, u_ref, atol=1e-4)
    np.testing.assert_allclose(rep.p, p_ref, atol=1e-4)
    assert rep.residual_vhi <= 1e-9


def test_two_starts_agree():
    prob = _nonconvex_2d()
    a = projection_iteration(prob, p0=[0.0], tol=1e-12)
    b = projection_iteration(prob, p0=[25.0], tol=1e-12)
    assert np.linalg.norm(a.u - b.u) + np.linalg.norm(a.p - b.p) <= 1e-8


def test_limit_independent_of_rho():
    prob = random_instance(3)
    r0 = prob.default_rho()
    a = projection_iteration(prob, rho=r0, tol=1e-12)
    b = projection_iteration(prob, rho=0.5 * r0, tol=1e-12)
    assert np.linalg.norm(a.u - b.u) + np.linalg.norm(a.p - b.p) <= 1e-7


def test_max_iter_error_carries_ratio():
    prob = random_instance(1)
    with pytest.raises(OuterIterationError) as exc:
        projection_iteration(prob, rho=1e-3 * prob.default_rho(), max_iter=3)
    assert 0 < exc.value.last_ratio < 1


@pytest.mark.parametrize("seed", range(6))
def test_contraction_and_coupling_on_random_instances(seed):
    prob = random_instance(seed)
    rep = projection_iteration(prob)
    assert all(r <= rep.kappa + 1e-8 for r in rep.tail_ratios())
    for i, du in enumerate(rep.du):
        assert du <= prob.c0 * rep.dp[i] * (1 + 1e-6) + 1e-12
    assert rep.residual_vhi <= 1e-8 and rep.residual_fixed_point <= 1e-10


def test_check_instance_passes():
    chk = check_instance(7)
    assert chk.passed, chk


def test_convex_psi_matches_convex_phi():
    """With a = b the law is a*|v|: the hemivariational path must agree with the convex one."""
    lin = NonmonotoneFriction(0.3, 0.3, 1.0)
    K = np.array([[2.0, 0.3, 0.0], [0.3, 1.5, 0.2], [0.0, 0.2, 1.2]])
    B, f = [[1.0, 0.5, 0.0]], [1.0, 0.5, -0.2]
    hemi = MixedVHIProblem(K, B, f, 1, groups=[[1, 2]], psi=lin, psi_c=[2.0])
    conv = MixedVHIProblem(K, B, f, 1, groups=[[1, 2]], phi_g0=[0.6])
    assert hemi.alpha_psi == pytest.approx(0.0, abs=1e-15)
    a = projection_iteration(hemi, tol=1e-12)
    b = projection_iteration(conv, tol=1e-12)
    np.testing.assert_allclose(a.u, b.u, atol=1e-10)
    np.testing.assert_allclose(a.p, b.p, atol=1e-10)


# ---------------------------------------------------------------- inner solve

def test_inner_linear_case(rng):
    Q = rng.standard_normal((4, 4))
    K = Q @ Q.T + 4 * np.eye(4)
    B = rng.standard_normal((2, 4))
    f = rng.standard_normal(4)
    p = rng.standard_normal(2)
    prob = MixedVHIProblem(K, B, f, n0=4)
    u = inner_vhi_solve(prob, p, tol=1e-13)
    np.testing.assert_allclose(u, np.linalg.solve(K, f - B.T @ p), atol=1e-12)


def test_inner_one_dimensional_stick():
    prob = MixedVHIProblem([[1.0]], np.zeros((0, 1)), [0.3], 0, groups=[[0]], phi_g0=[0.5])
    assert inner_vhi_solve(prob, np.zeros(0)) == pytest.approx([0.0], abs=1e-15)


def test_inner_one_dimensional_nonconvex_vs_grid():
    c, f = 4.0, 3.0
    prob = MixedVHIProblem([[1.0]], np.zeros((0, 1)), [f], 0, groups=[[0]], psi=PSI, psi_c=[c])
    u = inner_vhi_solve(prob, np.zeros(0), tol=1e-13)[0]
    # sliding branch u > 0: u + c omega(u) = f; grid scan of the residual, refined
    lo, hi = 0.0, 5.0
    for _ in range(4):
        g = np.linspace(lo, hi, 2001)
        k = np.argmin(np.abs(g + c * omega(PSI, g) - f))
        step = g[1] - g[0]
        lo, hi = g[k] - step, g[k] + step
    assert u == pytest.approx(g[k], abs=1e-5)
    assert vhi_residual(prob, np.array([u]), np.zeros(0)) <= 1e-10


def test_inner_failure_reports_trace():
    prob = _nonconvex_2d()
    with pytest.raises(InnerSolveError) as exc:
        inner_vhi_solve(prob, [0.0], tol=1e-14, max_iter=3)
    assert len(exc.value.trace) > 0


def test_forward_backward_step_contracts():
    prob = random_instance(2)
    tau, q = forward_backward_step(prob)
    assert 0 < tau and q < 1


# ---------------------------------------------------------------- Lipschitz dependence

def test_lipschitz_equal_loads():
    prob = random_instance(4)
    ratio, bound = lipschitz_dependence(prob, prob.f, prob.f)
    assert ratio == 0.0 and bound > 0


def test_lipschitz_linear_2i(rng):
    prob = MixedVHIProblem(2 * np.eye(3), [[1.0, 0.0, 0.0]], np.zeros(3), n0=1)
    for _ in range(5):
        ratio, bound = lipschitz_dependence(prob, rng.standard_normal(3), rng.standard_normal(3))
        assert bound == pytest.approx(0.5)
        assert ratio <= 0.5 * (1 + 1e-8)


# ---------------------------------------------------------------- instance format

def test_dump_load_round_trip():
    for seed in range(8):
        prob = random_instance(seed)
        again = load_instance(dump_instance(prob))
        for name in ("K", "B", "f", "phi_g0", "phi_g1", "phi_W", "psi_c"):
            np.testing.assert_array_equal(getattr(again, name), getattr(prob, name))
        assert again.n0 == prob.n0 and again.kq == prob.kq and again.gamma == prob.gamma
        assert [g.tolist() for g in again.groups] == [g.tolist() for g in prob.groups]
        assert again.psi == prob.psi
        if prob._box:
            np.testing.assert_array_equal(again.kv_lower, prob.kv_lower)


def test_load_instance_rejects_unknown_names():
    text = dump_instance(random_instance(0))
    with pytest.raises(ValueError, match="psi"):
        load_instance(text.replace("psi = radial", "psi = cubic"))
    with pytest.raises(ValueError, match="key = value"):
        load_instance("n 3")
