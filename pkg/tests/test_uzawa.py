import csv

import numpy as np
import pytest

from mixedvhi.fem_stokes import assemble
from mixedvhi.friction import omega
from mixedvhi.mesh import BoundaryTag, structured_unit_square
from mixedvhi.study import zero_source
from mixedvhi.uzawa import UzawaConfig, UzawaSolver, UzawaState, complementarity_report, recover_traction

from conftest import EXAMPLE1_FRICTION, solve_example1

F1, F2 = EXAMPLE1_FRICTION


def test_config_validation():
    for bad in ((0.0, 10, 1e-6), (1.0, 0, 1e-6), (1.0, 10, 0.0)):
        with pytest.raises(ValueError):
            UzawaConfig(*bad)


def test_zero_forcing():
    s = assemble(structured_unit_square(8), 1.0, zero_source)
    st = UzawaSolver(s, F1, F2, UzawaConfig()).run()
    assert st.converged and st.iteration <= 2
    assert np.all(st.u == 0) and np.all(st.p == 0)
    assert np.all(st.lam1 == 0) and np.all(st.lam2 == 0)
    assert st.zero_velocity_checks >= 1


def test_first_step_is_plain_stokes():
    sol, solver = solve_example1(8, cfg=UzawaConfig(10.0, 1, 1e-6))
    u, p = solver.saddle.solve(sol.system.load)
    np.testing.assert_allclose(sol.state.u, u, rtol=0, atol=1e-14)
    np.testing.assert_allclose(sol.state.p, p, rtol=0, atol=1e-13)


def test_example1_h16_iteration_count(example1_h16):
    sol, _, _ = example1_h16
    st = sol.state
    assert st.converged
    assert st.increments[-1] < 1e-6
    assert len(st.increments) == st.iteration
    # published count 149, 2x window
    assert 149 / 2 <= st.iteration <= 149 * 2


def test_multiplier_feasibility_every_step(example1_h16):
    _, _, history = example1_h16
    assert len(history) > 0
    assert max(history) <= 1 + 1e-12


def test_converged_state_is_fixed_point(example1_h16):
    sol, solver, _ = example1_h16
    new, du, nu = solver.step(sol.state)
    assert du / nu <= 10 * 1e-6


def test_discrete_divergence(example1_h16):
    sol, _, _ = example1_h16
    Bu = sol.system.B @ sol.state.u
    assert np.abs(Bu).max() <= 1e-9 * np.linalg.norm(sol.state.u)


def test_traction_bounds(example1_h16):
    sol, _, _ = example1_h16
    tr = recover_traction(sol.system, sol.state, F1, F2)
    s1 = np.linalg.norm(tr[BoundaryTag.SLIP1].sigma_tau, axis=1)
    s2 = np.linalg.norm(tr[BoundaryTag.SLIP2].sigma_tau, axis=1)
    assert s1.max() <= F1.g + 1e-10
    assert s2.max() <= omega(F2, 0.0) + 1e-10
    lam1 = np.linalg.norm(sol.state.lam1, axis=1)
    slip = lam1 >= 1 - 1e-12
    assert slip.any()
    np.testing.assert_allclose(s1[slip], F1.g, rtol=1e-12)
    stick = lam1 < 1 - 1e-3
    assert stick.any()
    assert np.all(s1[stick] < F1.g)


def test_traction_vanishes_with_zero_multiplier(example1_h16):
    sol, _, _ = example1_h16
    st = sol.state
    zero = UzawaState(st.u, st.p, st.lam1, np.zeros_like(st.lam2), u_full=st.u_full)
    tr = recover_traction(sol.system, zero, F1, F2)
    assert np.all(tr[BoundaryTag.SLIP2].sigma_tau == 0)


def test_complementarity_hand_cases(example1_h16):
    sol, solver, _ = example1_h16
    rep = complementarity_report(sol.system, solver.initial_state())
    assert all(r == 0 for r, _ in rep.values())
    st = sol.state
    lam = []
    for tag in (BoundaryTag.SLIP1, BoundaryTag.SLIP2):
        ut = (sol.system.traces[tag].vertex_trace @ st.u_full).reshape(-1, 2)
        r = np.linalg.norm(ut, axis=1, keepdims=True)
        lam.append(np.divide(ut, r, out=np.zeros_like(ut), where=r > 0))
    aligned = UzawaState(st.u, st.p, lam[0], lam[1], u_full=st.u_full)
    rep = complementarity_report(sol.system, aligned)
    assert all(r <= 1e-15 for r, _ in rep.values())


def test_complementarity_at_tight_convergence():
    """The projected update's fixed point satisfies lambda . u_tau = |u_tau|.

    At the default tolerance the slowest multipliers (stick vertices next to the
    corners) are still moving; this checks the limit with a tight tolerance.
    """
    sol, _ = solve_example1(8, cfg=UzawaConfig(10.0, 20000, 1e-12))
    assert sol.state.converged
    for res, umax in complementarity_report(sol.system, sol.state).values():
        assert res <= 1e-5 * umax


def test_increment_log(tmp_path, example1_h16):
    sol, _, _ = example1_h16
    path = tmp_path / "inc.csv"
    sol.state.write_increments(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["iteration", "relative_increment"]
    assert len(rows) == sol.state.iteration + 1
    assert [int(r[0]) for r in rows[1:]] == list(range(1, sol.state.iteration + 1))
    np.testing.assert_array_equal([float(r[1]) for r in rows[1:]], sol.state.increments)
