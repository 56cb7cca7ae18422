"""State parameterization through a Luenberger-style observer.

A monic Hurwitz polynomial fixes a companion pair (Acal, b). Feeding each
input and output channel through a copy of that companion filter yields a
compensator state zeta whose span reproduces the plant state: x is
asymptotically equal to M @ zeta for a constant matrix M built from the
plant, the observer gain and the polynomial coefficients.

On top of M sits the ancillary system (A_zeta, B_zeta, Q_zeta): an LQR
problem in the compensator coordinates whose stabilizing solution is
M'P*M with optimal gain K*M. Only B_zeta is known without a model, which
is what the reduced-variable data-driven algorithms exploit.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .linalg import kron, numerical_rank, spectral_norm

RESIDUAL_TOL = 1e-8


@dataclass(frozen=True)
class ObserverPoly:
    """Monic polynomial s^n + a_{n-1} s^{n-1} + ... + a_0, by roots or coefficients."""

    roots: tuple | None = None
    coefficients: tuple | None = None  # (a_0, ..., a_{n-1}), ascending powers

    def __post_init__(self):
        if (self.roots is None) == (self.coefficients is None):
            raise ValueError("ObserverPoly: give exactly one of roots or coefficients")
        if self.roots is not None:
            object.__setattr__(self, "roots", tuple(float(r) for r in self.roots))
        else:
            object.__setattr__(
                self, "coefficients", tuple(float(c) for c in self.coefficients)
            )

    @property
    def degree(self) -> int:
        return len(self.roots) if self.roots is not None else len(self.coefficients)

    @property
    def alpha(self) -> np.ndarray:
        """Coefficients a_0..a_{n-1} of the monic polynomial, ascending."""
        if self.coefficients is not None:
            return np.array(self.coefficients, dtype=float)
        # np.poly returns monic coefficients in descending powers
        return np.poly(np.array(self.roots, dtype=float))[1:][::-1]

    def all_roots(self) -> np.ndarray:
        if self.roots is not None:
            return np.array(self.roots, dtype=complex)
        return np.roots(np.concatenate(([1.0], self.alpha[::-1])))

    def is_hurwitz(self) -> bool:
        return bool(np.all(self.all_roots().real < 0.0))

    def evaluate_at_matrix(self, A: np.ndarray) -> np.ndarray:
        """Horner evaluation of the polynomial at a square matrix."""
        A = np.asarray(A, dtype=float)
        n = A.shape[0]
        out = np.eye(n)
        for a in self.alpha[::-1]:  # descending powers
            out = out @ A + a * np.eye(n)
        return out


@dataclass(frozen=True)
class Parameterization:
    """Everything derived from (plant, observer polynomial, gain)."""

    L: np.ndarray
    A_cal: np.ndarray  # companion matrix of the observer polynomial
    b_vec: np.ndarray  # companion input column (last basis vector)
    M: np.ndarray  # n x n_zeta, model-derived ground truth
    A_zeta: np.ndarray
    B_zeta: np.ndarray
    Q_zeta: np.ndarray
    n: int
    m: int
    p: int
    warnings: tuple = field(default=())

    @property
    def n_zeta(self) -> int:
        return (self.m + self.p) * self.n

    def input_selector(self) -> np.ndarray:
        """[I_m kron b; 0]: maps u into the stacked compensator dynamics."""
        return np.vstack(
            [kron(np.eye(self.m), self.b_vec), np.zeros((self.p * self.n, self.m))]
        )

    def output_selector(self) -> np.ndarray:
        """[0; I_p kron b]: maps y into the stacked compensator dynamics."""
        return np.vstack(
            [np.zeros((self.m * self.n, self.p)), kron(np.eye(self.p), self.b_vec)]
        )


@dataclass(frozen=True)
class CompensatorState:
    """Stacked filter state col(zeta^1, ..., zeta^{m+p})."""

    zeta: np.ndarray
    n: int
    m: int
    p: int

    def __post_init__(self):
        z = np.asarray(self.zeta, dtype=float).ravel()
        if z.size != (self.m + self.p) * self.n:
            raise ValueError("CompensatorState: length must be (m+p)n")
        object.__setattr__(self, "zeta", z)

    def block(self, i: int) -> np.ndarray:
        """The i-th filter state (0-based; inputs first, then outputs)."""
        return self.zeta[i * self.n : (i + 1) * self.n]


def companion_from_poly(poly: ObserverPoly):
    """Companion pair (Acal, b) of a monic polynomial.

    Acal has ones on the superdiagonal and -a_0..-a_{n-1} in the last row;
    b is the last standard basis vector.
    """
    alpha = poly.alpha
    n = alpha.size
    A = np.zeros((n, n))
    if n > 1:
        A[np.arange(n - 1), np.arange(1, n)] = 1.0
    A[-1, :] = -alpha
    b = np.zeros((n, 1))
    b[-1, 0] = 1.0
    if not poly.is_hurwitz():
        warnings.warn("observer polynomial is not Hurwitz", stacklevel=2)
    return A, b


def place_observer_gain(A: np.ndarray, C: np.ndarray, poly: ObserverPoly) -> np.ndarray:
    """Observer gain L with det(sI - A + LC) equal to the target polynomial.

    Ackermann's formula; single-output plants only. Multi-output plants
    must supply L directly.
    """
    A = np.asarray(A, dtype=float)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    n = A.shape[0]
    p = C.shape[0]
    if p != 1:
        raise ValueError("supply L explicitly for multi-output plants")
    if poly.degree != n:
        raise ValueError("polynomial degree must match the state dimension")
    obs_rows = [C]
    for _ in range(n - 1):
        obs_rows.append(obs_rows[-1] @ A)
    O = np.vstack(obs_rows)
    if numerical_rank(O) < n:
        raise ValueError("not observable")
    en = np.zeros((n, 1))
    en[-1, 0] = 1.0
    L = poly.evaluate_at_matrix(A) @ np.linalg.solve(O, en)
    achieved = np.poly(A - L @ C)[1:][::-1]
    target = poly.alpha
    if np.max(np.abs(achieved - target)) > 1e-8 * (1.0 + np.max(np.abs(target))):
        raise ValueError("pole placement failed to reach the target polynomial")
    return L


def build_param_matrix(
    A: np.ndarray,
    B: np.ndarray,
    C: np.ndarray,
    L: np.ndarray,
    poly: ObserverPoly,
    strict: bool = True,
):
    """Parameterization matrix M (n x (m+p)n) from the resolvent recursion.

    D_{n-1} = I, D_{i-1} = (A - LC) D_i + a_i I; each column block is
    [D_0 f, ..., D_{n-1} f] with f running over the columns of B, then L.
    Returns (M, recursion residual norm). strict raises when the terminal
    residual (A - LC) D_0 + a_0 I is not numerically zero.
    """
    A = np.asarray(A, dtype=float)
    B = np.atleast_2d(np.asarray(B, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    L = np.atleast_2d(np.asarray(L, dtype=float))
    n = A.shape[0]
    m = B.shape[1]
    p = C.shape[0]
    if L.shape != (n, p):
        raise ValueError("build_param_matrix: L must be n x p")
    alpha = poly.alpha
    if alpha.size != n:
        raise ValueError("build_param_matrix: polynomial degree must equal n")
    F = A - L @ C
    D = [np.zeros((n, n))] * n
    D[n - 1] = np.eye(n)
    for i in range(n - 1, 0, -1):
        D[i - 1] = F @ D[i] + alpha[i] * np.eye(n)
    resid = spectral_norm(F @ D[0] + alpha[0] * np.eye(n))
    # relative to the size of the terms cancelling in the recursion
    scale = 1.0 + float(np.max(np.abs(alpha))) + max(spectral_norm(Di) for Di in D) * (
        1.0 + spectral_norm(F)
    )
    if strict and resid > RESIDUAL_TOL * scale:
        raise ValueError(f"polynomial/gain mismatch (recursion residual {resid:.3e})")
    cols = []
    F_cols = np.hstack([B, L])
    for i in range(m + p):
        f = F_cols[:, i : i + 1]
        cols.append(np.hstack([D[j] @ f for j in range(n)]))
    return np.hstack(cols), resid


def build_ancillary(
    M: np.ndarray,
    A_cal: np.ndarray,
    b_vec: np.ndarray,
    C: np.ndarray,
    Q_y: np.ndarray,
    m: int,
    p: int,
):
    """Ancillary LQR data (A_zeta, B_zeta, Q_zeta) over the compensator state.

    A_zeta adds the output-injection coupling C M (model knowledge) to the
    block companion core; B_zeta depends only on the known companion pair.
    """
    M = np.asarray(M, dtype=float)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    Q_y = np.atleast_2d(np.asarray(Q_y, dtype=float))
    n = A_cal.shape[0]
    n_zeta = (m + p) * n
    if M.shape != (n, n_zeta):
        raise ValueError("build_ancillary: M must be n x (m+p)n")
    out_sel = np.vstack([np.zeros((m * n, p)), kron(np.eye(p), b_vec)])
    A_zeta = kron(np.eye(m + p), A_cal) + out_sel @ (C @ M)
    B_zeta = np.vstack([kron(np.eye(m), b_vec), np.zeros((p * n, m))])
    Cz = C @ M
    Q_zeta = Cz.T @ Q_y @ Cz
    Q_zeta = 0.5 * (Q_zeta + Q_zeta.T)
    return A_zeta, B_zeta, Q_zeta


def ancillary_diagnostics(A_zeta, B_zeta, C, Q_y, M, rtol: float = 1e-8):
    """PBH-style stabilizability/detectability checks on the ancillary pair.

    Every eigenvalue with nonnegative real part must be controllable through
    B_zeta and visible through sqrt(Q_y) C M. Returns a dict of booleans.
    """
    n_zeta = A_zeta.shape[0]
    w = np.linalg.eigvals(A_zeta)
    # symmetric PSD square root of the output weight
    ew, V = np.linalg.eigh(0.5 * (Q_y + Q_y.T))
    sqrtQy = V @ np.diag(np.sqrt(np.clip(ew, 0.0, None))) @ V.T
    Cz = sqrtQy @ (C @ M)
    stab = True
    detect = True
    for lam in w:
        if lam.real < 0.0:
            continue
        shifted = lam * np.eye(n_zeta) - A_zeta
        if numerical_rank(np.hstack([shifted, B_zeta.astype(complex)]), rtol) < n_zeta:
            stab = False
        if numerical_rank(np.vstack([shifted, Cz.astype(complex)]), rtol) < n_zeta:
            detect = False
    return {"stabilizable": stab, "detectable": detect}


def parameterization_residuals(A, B, C, L, param: Parameterization) -> dict:
    """Residual norms of the three structural identities tying M to the plant.

    shift: M (I kron Acal) = (A - LC) M
    input: M [I_m kron b; 0] = B
    output: M [0; I_p kron b] = L
    """
    A = np.asarray(A, dtype=float)
    B = np.atleast_2d(np.asarray(B, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    L = np.atleast_2d(np.asarray(L, dtype=float))
    M = param.M
    shift = spectral_norm(M @ kron(np.eye(param.m + param.p), param.A_cal) - (A - L @ C) @ M)
    inp = spectral_norm(M @ param.input_selector() - B)
    out = spectral_norm(M @ param.output_selector() - L)
    return {"shift": shift, "input": inp, "output": out}


def param_matrix_has_full_row_rank(M: np.ndarray, rtol: float = 1e-9) -> bool:
    """True when the parameterization matrix spans the full state space."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return numerical_rank(M, rtol) == M.shape[0]


def parameterize(
    A,
    B,
    C,
    Q_y,
    poly: ObserverPoly,
    L: np.ndarray | None = None,
    check: bool = True,
) -> Parameterization:
    """One-call construction of the full parameterization.

    Places the observer gain when L is not supplied (single-output only),
    builds M and the ancillary system, and verifies the structural
    identities. Verification failures are attached as warnings.
    """
    A = np.asarray(A, dtype=float)
    B = np.atleast_2d(np.asarray(B, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    n = A.shape[0]
    m = B.shape[1]
    p = C.shape[0]
    if L is None:
        L = place_observer_gain(A, C, poly)
    else:
        L = np.atleast_2d(np.asarray(L, dtype=float)).reshape(n, p)
        achieved = np.poly(A - L @ C)[1:][::-1]
        if np.max(np.abs(achieved - poly.alpha)) > 1e-6 * (1.0 + np.max(np.abs(poly.alpha))):
            raise ValueError("supplied L does not realize the observer polynomial")
    A_cal, b_vec = companion_from_poly(poly)
    M, _ = build_param_matrix(A, B, C, L, poly)
    A_zeta, B_zeta, Q_zeta = build_ancillary(M, A_cal, b_vec, C, Q_y, m, p)
    param = Parameterization(
        L=L, A_cal=A_cal, b_vec=b_vec, M=M, A_zeta=A_zeta, B_zeta=B_zeta,
        Q_zeta=Q_zeta, n=n, m=m, p=p,
    )
    notes = []
    if check:
        res = parameterization_residuals(A, B, C, L, param)
        scale = 1.0 + spectral_norm(M)
        for name, val in res.items():
            if val > RESIDUAL_TOL * scale:
                notes.append(f"{name} identity residual {val:.3e}")
        diag = ancillary_diagnostics(A_zeta, B_zeta, C, Q_y, M)
        if not diag["stabilizable"]:
            notes.append("ancillary pair not stabilizable at tolerance")
        if not diag["detectable"]:
            notes.append("ancillary pair not detectable at tolerance")
    if notes:
        return Parameterization(
            L=L, A_cal=A_cal, b_vec=b_vec, M=M, A_zeta=A_zeta, B_zeta=B_zeta,
            Q_zeta=Q_zeta, n=n, m=m, p=p, warnings=tuple(notes),
        )
    return param
