import numpy as np
import pytest

from oflqr import linalg, randsys
from oflqr.observer_param import (
    ObserverPoly,
    ancillary_diagnostics,
    build_ancillary,
    build_param_matrix,
    companion_from_poly,
    param_matrix_has_full_row_rank,
    parameterization_residuals,
    parameterize,
    place_observer_gain,
)
from oflqr.riccati import AreProblem, solve_are_sign

from benchmarks import EX1, EX2, are_problem


def make_param(bench):
    return parameterize(
        bench["A"], bench["B"], bench["C"], bench["Qy"],
        ObserverPoly(roots=bench["obs_roots"]),
    )


# ----------------------------------------------------------------- polynomial


def test_poly_requires_exactly_one_form():
    with pytest.raises(ValueError):
        ObserverPoly()
    with pytest.raises(ValueError):
        ObserverPoly(roots=[-1.0], coefficients=[1.0])


def test_poly_alpha_from_roots():
    poly = ObserverPoly(roots=[-5.0, -6.0])
    assert np.allclose(poly.alpha, [30.0, 11.0])


def test_poly_hurwitz_flags():
    assert ObserverPoly(roots=[-1.0, -2.0]).is_hurwitz()
    assert not ObserverPoly(coefficients=[-1.0, 0.0]).is_hurwitz()  # s^2 - 1


# ------------------------------------------------------------------ companion


def test_companion_quadratic():
    A, b = companion_from_poly(ObserverPoly(roots=[-5.0, -6.0]))
    assert np.array_equal(A, [[0.0, 1.0], [-30.0, -11.0]])
    assert np.array_equal(b, [[0.0], [1.0]])


def test_companion_quartic_last_row():
    A, _ = companion_from_poly(ObserverPoly(roots=[-5.0, -6.0, -7.0, -8.0]))
    assert np.allclose(A[-1], [-1680.0, -1066.0, -251.0, -26.0])
    char = np.poly(A)[1:][::-1]
    assert np.allclose(char, [1680.0, 1066.0, 251.0, 26.0], atol=1e-10)


def test_companion_degree_one():
    A, b = companion_from_poly(ObserverPoly(coefficients=[4.0]))
    assert np.array_equal(A, [[-4.0]])
    assert np.array_equal(b, [[1.0]])


def test_companion_warns_when_not_hurwitz():
    with pytest.warns(UserWarning):
        companion_from_poly(ObserverPoly(coefficients=[-1.0, 0.0]))


# ------------------------------------------------------------- pole placement


def test_place_gain_benchmark1():
    L = place_observer_gain(EX1["A"], EX1["C"], ObserverPoly(roots=EX1["obs_roots"]))
    assert np.max(np.abs(L - EX1["L"])) < 5e-4


def test_place_gain_benchmark2():
    L = place_observer_gain(EX2["A"], EX2["C"], ObserverPoly(roots=EX2["obs_roots"]))
    assert np.max(np.abs(L - EX2["L"])) < 1e-10


def test_place_gain_zero_when_poles_already_there():
    # companion-observable form with its own characteristic polynomial
    poly = ObserverPoly(roots=[-2.0, -3.0, -4.0])
    A, _ = companion_from_poly(poly)
    C = np.array([[1.0, 0.0, 0.0]])
    L = place_observer_gain(A, C, poly)
    assert np.max(np.abs(L)) < 1e-8


def test_place_gain_rejects_unobservable():
    A = np.diag([-1.0, -2.0])
    C = np.array([[1.0, 0.0]])  # second mode invisible
    with pytest.raises(ValueError, match="not observable"):
        place_observer_gain(A, C, ObserverPoly(roots=[-3.0, -4.0]))


def test_place_gain_rejects_multi_output():
    with pytest.raises(ValueError, match="supply L"):
        place_observer_gain(np.eye(2), np.eye(2), ObserverPoly(roots=[-1.0, -2.0]))


# -------------------------------------------------------------------- M matrix


def test_param_matrix_benchmark2_exact():
    poly = ObserverPoly(roots=EX2["obs_roots"])
    L = place_observer_gain(EX2["A"], EX2["C"], poly)
    M, resid = build_param_matrix(EX2["A"], EX2["B"], EX2["C"], L, poly)
    assert resid <= 1e-8
    assert np.allclose(M[:, :2], EX2["M_u"], atol=1e-9)
    assert np.allclose(M[:, 2:], EX2["M_y"], atol=1e-9)


def test_param_matrix_benchmark1_matches_reference():
    poly = ObserverPoly(roots=EX1["obs_roots"])
    L = place_observer_gain(EX1["A"], EX1["C"], poly)
    M, _ = build_param_matrix(EX1["A"], EX1["B"], EX1["C"], L, poly)
    M_ref = np.hstack([EX1["M_u"], EX1["M_y"]])
    # reference is printed to 4-5 significant figures, scaled by 1e3
    assert np.max(np.abs(M - M_ref)) <= 1e-3 * np.max(np.abs(M_ref))


def test_param_matrix_first_order_plant():
    poly = ObserverPoly(roots=[-3.0])
    A = np.array([[-1.0]])
    B = np.array([[2.0]])
    C = np.array([[1.0]])
    L = place_observer_gain(A, C, poly)
    M, _ = build_param_matrix(A, B, C, L, poly)
    assert np.allclose(M, np.hstack([B, L]))


def test_param_matrix_rejects_corrupted_gain():
    poly = ObserverPoly(roots=EX2["obs_roots"])
    L_bad = EX2["L"] + np.array([[0.5], [0.0]])
    with pytest.raises(ValueError, match="polynomial/gain mismatch"):
        build_param_matrix(EX2["A"], EX2["B"], EX2["C"], L_bad, poly)
    # lenient mode reports the residual instead
    _, resid = build_param_matrix(EX2["A"], EX2["B"], EX2["C"], L_bad, poly, strict=False)
    assert resid > 1e-3


# ------------------------------------------------------------------ identities


@pytest.mark.parametrize("bench", [EX1, EX2], ids=["ex1", "ex2"])
def test_structural_identities(bench):
    param = make_param(bench)
    res = parameterization_residuals(bench["A"], bench["B"], bench["C"], param.L, param)
    scale = 1.0 + linalg.spectral_norm(param.M)
    assert all(v <= 1e-8 * scale for v in res.values()), res


def test_structural_identities_random_plants():
    for seed in range(100):
        rng = np.random.default_rng(1000 + seed)
        draw = randsys.draw_parameterizable_plant(rng)
        poly = ObserverPoly(roots=draw.observer_roots)
        param = parameterize(draw.A, draw.B, draw.C, np.eye(1), poly)
        res = parameterization_residuals(draw.A, draw.B, draw.C, param.L, param)
        # absolute tolerance: the generator filters out the ill-conditioned
        # draws that would loosen the identities
        assert all(v <= 1e-8 for v in res.values()), (seed, res)
        assert param_matrix_has_full_row_rank(param.M)


# ------------------------------------------------------------------- ancillary


def test_input_matrix_block_structure():
    param = make_param(EX2)
    assert np.array_equal(param.B_zeta, [[0.0], [1.0], [0.0], [0.0]])


@pytest.mark.parametrize("bench", [EX1, EX2], ids=["ex1", "ex2"])
def test_ancillary_riccati_residual(bench):
    param = make_param(bench)
    P_star, K_star = solve_are_sign(are_problem(bench))
    P_z = param.M.T @ P_star @ param.M
    R = bench["R"]
    resid = (
        param.A_zeta.T @ P_z
        + P_z @ param.A_zeta
        + param.Q_zeta
        - P_z @ param.B_zeta @ np.linalg.solve(R, param.B_zeta.T @ P_z)
    )
    assert linalg.spectral_norm(resid) <= 1e-6 * (1.0 + linalg.spectral_norm(P_z))


@pytest.mark.parametrize("bench", [EX1, EX2], ids=["ex1", "ex2"])
def test_ancillary_gain_identity(bench):
    # -R^-1 B_zeta' (M'P*M) equals K*M
    param = make_param(bench)
    P_star, K_star = solve_are_sign(are_problem(bench))
    P_z = param.M.T @ P_star @ param.M
    K_z = -np.linalg.solve(bench["R"], param.B_zeta.T @ P_z)
    K_ref = K_star @ param.M
    assert linalg.spectral_norm(K_z - K_ref) <= 1e-6 * (1.0 + linalg.spectral_norm(K_ref))


@pytest.mark.parametrize("bench", [EX1, EX2], ids=["ex1", "ex2"])
def test_ancillary_spectrum_contains_plant_and_observer(bench):
    param = make_param(bench)
    eig_z = np.sort_complex(np.linalg.eigvals(param.A_zeta))
    plant = np.linalg.eigvals(bench["A"])
    observer = np.linalg.eigvals(bench["A"] - param.L @ bench["C"])
    expected = np.sort_complex(np.concatenate([plant, observer]))
    assert np.max(np.abs(eig_z - expected)) < 1e-6


@pytest.mark.parametrize("bench", [EX1, EX2], ids=["ex1", "ex2"])
def test_ancillary_pbh_diagnostics(bench):
    param = make_param(bench)
    diag = ancillary_diagnostics(param.A_zeta, param.B_zeta, bench["C"], bench["Qy"], param.M)
    assert diag["stabilizable"] and diag["detectable"]


def test_ancillary_q_is_psd():
    param = make_param(EX1)
    Qz = param.Q_zeta
    assert np.min(np.linalg.eigvalsh(Qz)) >= -1e-12 * linalg.spectral_norm(Qz)


# ------------------------------------------------------------------ rank checks


def test_param_matrix_rank_benchmark1():
    assert param_matrix_has_full_row_rank(make_param(EX1).M)


def test_param_matrix_rank_benchmark2_reported():
    # plant is not controllable, so full rank is not guaranteed; record the
    # measured value of the 2 x 4 matrix
    M = make_param(EX2).M
    assert M.shape == (2, 4)
    assert linalg.numerical_rank(M) == 2


def test_param_matrix_rank_trivial():
    assert param_matrix_has_full_row_rank(np.hstack([np.eye(3), np.zeros((3, 3))]))


# ------------------------------------------------------------------ supplied L


def test_parameterize_accepts_explicit_gain():
    param = parameterize(
        EX2["A"], EX2["B"], EX2["C"], EX2["Qy"],
        ObserverPoly(roots=EX2["obs_roots"]), L=EX2["L"],
    )
    assert np.allclose(param.L, EX2["L"])
    assert not param.warnings


def test_parameterize_rejects_mismatched_gain():
    with pytest.raises(ValueError, match="does not realize"):
        parameterize(
            EX2["A"], EX2["B"], EX2["C"], EX2["Qy"],
            ObserverPoly(roots=EX2["obs_roots"]), L=EX2["L"] + 1.0,
        )
