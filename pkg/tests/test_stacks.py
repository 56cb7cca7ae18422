import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oflqr.linalg import vecs
from oflqr.sim import Trajectory
from oflqr.stacks import (
    DataStacks,
    SampleGrid,
    build_stacks,
    quadrature_weights,
    rank_report,
)

from benchmarks import EX1, EX2
import helpers


def synthetic_trajectory(times, x_of_t, u_of_t, n_zeta=2):
    t = np.asarray(times, dtype=float)
    x = np.array([np.atleast_1d(x_of_t(ti)) for ti in t])
    u = np.array([np.atleast_1d(u_of_t(ti)) for ti in t])
    zeta = np.zeros((t.size, n_zeta))
    y = x[:, :1]
    return Trajectory(times=t, x=x, zeta=zeta, u=u, y=y)


# ---------------------------------------------------------------------
# quadrature weights
# ---------------------------------------------------------------------


def test_quadrature_weights_sum_to_step_count():
    for steps in range(1, 12):
        w = quadrature_weights(steps)
        assert w.size == steps + 1
        assert abs(w.sum() - steps) < 1e-12


def test_quadrature_weights_integrate_cubics_exactly():
    # Simpson (and the 3/8 tail) are exact for cubics.
    for steps in (2, 3, 4, 5, 8, 9):
        h = 1.0 / steps
        grid = np.linspace(0.0, 1.0, steps + 1)
        vals = grid**3
        approx = (quadrature_weights(steps) * h) @ vals
        assert abs(approx - 0.25) < 1e-14


def test_quadrature_weights_reject_zero_steps():
    with pytest.raises(ValueError, match="subinterval"):
        quadrature_weights(0)


# ---------------------------------------------------------------------
# grid and alignment
# ---------------------------------------------------------------------


def test_uniform_grid_knots():
    grid = SampleGrid.uniform(3.0, 0.1, 45)
    assert grid.s == 45
    assert abs(grid.knots[0] - 3.0) < 1e-15
    assert abs(grid.knots[-1] - 7.5) < 1e-12


def test_misaligned_knots_raise():
    traj = synthetic_trajectory(np.linspace(0.0, 1.0, 101), lambda t: [1.0], lambda t: [0.0])
    grid = SampleGrid(knots=np.array([0.0, 0.505]))
    with pytest.raises(ValueError, match="grid alignment"):
        build_stacks(traj, grid, np.eye(1), which="state")
    outside = SampleGrid(knots=np.array([0.0, 2.0]))
    with pytest.raises(ValueError, match="grid alignment"):
        build_stacks(traj, outside, np.eye(1), which="state")


# ---------------------------------------------------------------------
# exact values on synthetic trajectories
# ---------------------------------------------------------------------


def test_constant_trajectory_delta_zero_and_gamma_linear():
    c = np.array([2.0, -1.0])
    d = np.array([0.5])
    times = np.linspace(0.0, 1.0, 101)
    traj = synthetic_trajectory(times, lambda t: c, lambda t: d)
    grid = SampleGrid.uniform(0.0, 0.1, 10)
    st_ = build_stacks(traj, grid, np.eye(1), which="state")
    assert np.max(np.abs(st_.delta_x)) == 0.0
    expected_xx = 0.1 * np.kron(c, c)
    expected_xu = 0.1 * np.kron(c, d)
    assert np.max(np.abs(st_.gamma_xx - expected_xx)) < 1e-12
    assert np.max(np.abs(st_.gamma_xu - expected_xu)) < 1e-12
    # i_xx rows are vecv-packed: 0.1 * (c1^2, c1 c2, c2^2)
    expected_ixx = 0.1 * np.array([c[0] ** 2, c[0] * c[1], c[1] ** 2])
    assert np.max(np.abs(st_.i_xx - expected_ixx)) < 1e-12


def test_scalar_exponential_integral_closed_form():
    times = np.linspace(0.0, 1.0, 1001)
    traj = synthetic_trajectory(times, lambda t: [np.exp(-t)], lambda t: [0.0])
    grid = SampleGrid(knots=np.array([0.0, 1.0]))
    st_ = build_stacks(traj, grid, np.eye(1), which="state")
    exact = (1.0 - np.exp(-2.0)) / 2.0
    assert st_.i_xx.shape == (1, 1)
    assert abs(st_.i_xx[0, 0] - exact) < 1e-8
    assert abs(st_.gamma_xx[0, 0] - exact) < 1e-8
    d_exact = np.exp(-2.0) - 1.0
    assert abs(st_.delta_x[0, 0] - d_exact) < 1e-12


# ---------------------------------------------------------------------
# consistency identities on a real collection run
# ---------------------------------------------------------------------


def test_quadrature_identity_fundamental_theorem():
    # delta_zeta . vecs(P) must equal the interval quadrature of
    # d(zeta' P zeta)/dt for any symmetric P.
    traj = helpers.collection("EX2")
    grid = helpers.sample_grid("EX2")
    st_ = helpers.output_stacks("EX2")
    par = helpers.build_param("EX2")
    rng = np.random.default_rng(7)
    W = rng.standard_normal((4, 4))
    P = 0.5 * (W + W.T)

    # model derivative of the compensator state
    zdot = (
        traj.zeta @ np.kron(np.eye(2), par.A_cal).T
        + traj.u @ par.input_selector().T
        + traj.y @ par.output_selector().T
    )
    deriv = 2.0 * np.einsum("ti,ij,tj->t", traj.zeta, P, zdot)

    idx = np.round((grid.knots - traj.times[0]) / traj.dt).astype(int)
    lhs = st_.delta_zeta @ vecs(P)
    scale = max(1.0, np.max(np.abs(lhs)))
    for q in range(grid.s):
        lo, hi = idx[q], idx[q + 1]
        w = quadrature_weights(hi - lo) * traj.dt
        rhs = w @ deriv[lo : hi + 1]
        assert abs(lhs[q] - rhs) < 1e-6 * scale


def test_kronecker_consistency_gamma_vs_direct():
    traj = helpers.collection("EX2")
    grid = helpers.sample_grid("EX2")
    st_ = helpers.output_stacks("EX2")
    rng = np.random.default_rng(11)
    W = rng.standard_normal((4, 4))
    quad = np.einsum("ti,ij,tj->t", traj.zeta, W, traj.zeta)
    idx = np.round((grid.knots - traj.times[0]) / traj.dt).astype(int)
    lhs = st_.gamma_zeta_zeta @ W.reshape(-1)
    scale = max(1.0, np.max(np.abs(lhs)))
    for q in range(grid.s):
        lo, hi = idx[q], idx[q + 1]
        w = quadrature_weights(hi - lo) * traj.dt
        assert abs(lhs[q] - w @ quad[lo : hi + 1]) < 1e-8 * scale


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_packed_and_full_rows_agree_on_symmetric_weights(seed):
    # I_zz . vecs(W) == Gamma_zz . vec(W) for symmetric W: the packed and
    # full Kronecker rows encode the same quadratic form.
    st_ = helpers.output_stacks("EX2")
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((4, 4))
    W = 0.5 * (W + W.T)
    lhs = st_.i_zeta_zeta @ vecs(W)
    rhs = st_.gamma_zeta_zeta @ W.reshape(-1)
    assert np.max(np.abs(lhs - rhs)) < 1e-8 * max(1.0, np.max(np.abs(lhs)))


# ---------------------------------------------------------------------
# rank reports
# ---------------------------------------------------------------------


def test_rank_contrast_example1():
    report = rank_report(helpers.output_stacks("EX1"))
    improved_pi, improved_vi = report["improved_pi"], report["improved_vi"]
    original_pi, original_vi = report["output_pi"], report["output_vi"]
    assert improved_pi.required == improved_vi.required == 36
    assert original_pi.required == original_vi.required == 44
    assert improved_pi.satisfied and improved_vi.satisfied
    assert not original_pi.satisfied and not original_vi.satisfied
    # the improved margin is physical (transient content), the original
    # deficiency is structural (machine-zero trailing singular values)
    sv = improved_pi.singular_values
    assert sv[35] / sv[0] > 1.5e-8
    sv = original_pi.singular_values
    assert sv[43] / sv[0] < 1e-12


def test_rank_contrast_example2():
    report = rank_report(helpers.output_stacks("EX2"))
    improved_pi, improved_vi = report["improved_pi"], report["improved_vi"]
    original_pi, original_vi = report["output_pi"], report["output_vi"]
    assert improved_pi.required == improved_vi.required == 10
    assert original_pi.required == original_vi.required == 14
    assert improved_pi.satisfied and improved_vi.satisfied
    assert not original_pi.satisfied and not original_vi.satisfied
    sv = improved_vi.singular_values
    assert sv[9] / sv[0] > 1e-7
    sv = original_vi.singular_values
    assert sv[13] / sv[0] < 2e-9


def test_zero_trajectory_all_conditions_fail():
    times = np.linspace(0.0, 1.0, 101)
    zero = Trajectory(
        times=times,
        x=np.zeros((101, 2)),
        zeta=np.zeros((101, 4)),
        u=np.zeros((101, 1)),
        y=np.zeros((101, 1)),
    )
    grid = SampleGrid.uniform(0.0, 0.1, 10)
    for which in ("state", "output"):
        report = rank_report(build_stacks(zero, grid, np.eye(1), which=which))
        for cond in report.values():
            assert cond.achieved == 0
            assert not cond.satisfied


def test_unknown_count_gap_between_improved_and_original():
    report = rank_report(helpers.output_stacks("EX2"))
    st_ = helpers.output_stacks("EX2")
    gap = st_.m * st_.n_zeta
    assert report["output_pi"].required - report["improved_pi"].required == gap
    assert report["output_vi"].required - report["improved_vi"].required == gap


def test_state_rank_report_on_example2_data():
    traj = helpers.collection("EX2")
    grid = helpers.sample_grid("EX2")
    st_ = build_stacks(traj, grid, EX2["R"], which="state")
    report = rank_report(st_)
    need = 2 * 3 // 2 + 2 * 1
    assert report["state_pi"].required == need
    assert report["state_vi"].required == need
    assert report["state_pi"].satisfied and report["state_vi"].satisfied


# ---------------------------------------------------------------------
# shapes and export
# ---------------------------------------------------------------------


def test_output_stack_shapes():
    st_ = helpers.output_stacks("EX1")
    s, nz, m, p = 45, 8, 1, 1
    assert st_.delta_zeta.shape == (s, nz * (nz + 1) // 2)
    assert st_.gamma_zeta_zeta.shape == (s, nz * nz)
    assert st_.gamma_zeta_u.shape == (s, nz * m)
    assert st_.gamma_yy.shape == (s, p * p)
    assert st_.i_zeta_zeta.shape == (s, nz * (nz + 1) // 2)
    assert st_.i_zeta_u.shape == (s, nz * m)
    assert st_.i_yy.shape == (s, p * (p + 1) // 2)


def test_stacks_csv_round_trip(tmp_path):
    st_ = helpers.output_stacks("EX2")
    written = st_.to_csv(tmp_path)
    names = {p.split("/")[-1] for p in written}
    assert "delta_zeta.csv" in names
    assert "i_zeta_zeta.csv" in names
    loaded = np.loadtxt(tmp_path / "delta_zeta.csv", delimiter=",", skiprows=1)
    assert np.array_equal(loaded, st_.delta_zeta)
