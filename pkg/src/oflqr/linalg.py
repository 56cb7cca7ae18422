"""Dense linear-algebra kernels for the vectorized regressions.

Packing conventions (fixed across the whole package):

  vecv(b) = [b1^2, b1*b2, ..., b1*bn, b2^2, b2*b3, ..., bn^2]   length n(n+1)/2
  vecs(P) = [p11, 2*p12, ..., 2*p1n, p22, 2*p23, ..., pnn]      off-diagonals doubled
  vec(A)  = columns of A stacked top to bottom

These satisfy x'Px = vecv(x) . vecs(P) for symmetric P, which is what makes
the quadratic-form regressions linear in the packed unknowns.
"""

import numpy as np

# asymmetry beyond this (relative) is a hard error in vecs()
SYM_TOL = 1e-8


def vecv(b: np.ndarray) -> np.ndarray:
    """Packs the quadratic monomials b_i*b_j (i <= j) of a vector."""
    b = np.asarray(b, dtype=float).ravel()
    n = b.size
    if n == 0:
        raise ValueError("vecv: empty vector")
    out = np.empty(n * (n + 1) // 2)
    k = 0
    for i in range(n):
        out[k : k + n - i] = b[i] * b[i:]
        k += n - i
    return out


def vecv_rows(X: np.ndarray) -> np.ndarray:
    """Row-wise vecv of an (N, n) array, returns (N, n(n+1)/2)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[1]
    if n == 0:
        raise ValueError("vecv_rows: empty vectors")
    iu, ju = np.triu_indices(n)
    return X[:, iu] * X[:, ju]


def vecs(P: np.ndarray) -> np.ndarray:
    """Packs a symmetric matrix: diagonal once, off-diagonals doubled."""
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError("vecs: non-square input")
    scale = max(1.0, float(np.max(np.abs(P))))
    asym = float(np.max(np.abs(P - P.T)))
    if asym > SYM_TOL * scale:
        raise ValueError(f"vecs: input asymmetric beyond tolerance ({asym:.3e})")
    P = 0.5 * (P + P.T)
    n = P.shape[0]
    iu, ju = np.triu_indices(n)
    out = P[iu, ju].copy()
    out[iu != ju] *= 2.0
    return out


def unvecs(v: np.ndarray, n: int | None = None) -> np.ndarray:
    """Inverse of vecs: rebuilds the symmetric matrix."""
    v = np.asarray(v, dtype=float).ravel()
    if n is None:
        n = int(round((np.sqrt(8 * v.size + 1) - 1) / 2))
    if v.size != n * (n + 1) // 2:
        raise ValueError("unvecs: length does not match any n(n+1)/2")
    P = np.zeros((n, n))
    iu, ju = np.triu_indices(n)
    vals = v.copy()
    vals[iu != ju] *= 0.5
    P[iu, ju] = vals
    P[ju, iu] = vals
    return P


def duplication_matrix(n: int) -> np.ndarray:
    """Constant matrix N with N @ vecs(P) = vec(P) for every symmetric P."""
    if n < 1:
        raise ValueError("duplication_matrix: n >= 1 required")
    d = n * (n + 1) // 2
    # packed index of the (i, j) entry, i <= j
    pidx = {}
    k = 0
    for i in range(n):
        for j in range(i, n):
            pidx[(i, j)] = k
            k += 1
    N = np.zeros((n * n, d))
    for j in range(n):
        for i in range(n):
            r = j * n + i  # vec() stacks columns
            a, b = min(i, j), max(i, j)
            N[r, pidx[(a, b)]] = 1.0 if i == j else 0.5
    return N


def kron(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Kronecker product (numpy backend)."""
    return np.kron(A, B)


def vec(A: np.ndarray) -> np.ndarray:
    """Stacks the columns of A into one vector."""
    return np.asarray(A, dtype=float).reshape(-1, order="F")


def solve_lyapunov(F: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Solves F'X + XF + W = 0 by dense Kronecker vectorization.

    W must be symmetric; raises if F and -F' share spectrum (singular system).
    """
    F = np.asarray(F, dtype=float)
    W = np.asarray(W, dtype=float)
    n = F.shape[0]
    if F.shape != (n, n) or W.shape != (n, n):
        raise ValueError("solve_lyapunov: square conformable matrices required")
    if np.max(np.abs(W - W.T)) > SYM_TOL * max(1.0, np.max(np.abs(W))):
        raise ValueError("solve_lyapunov: W must be symmetric")
    I = np.eye(n)
    G = np.kron(I, F.T) + np.kron(F.T, I)
    try:
        x = np.linalg.solve(G, -vec(W))
    except np.linalg.LinAlgError as exc:
        raise ValueError("solve_lyapunov: spectrum conflict (singular system)") from exc
    X = x.reshape((n, n), order="F")
    X = 0.5 * (X + X.T)
    resid = np.linalg.norm(F.T @ X + X @ F + W, 2)
    if not np.isfinite(resid) or resid > 1e-9 * (1.0 + np.linalg.norm(W, 2)) * max(
        1.0, np.linalg.norm(X, 2)
    ):
        raise ValueError(f"solve_lyapunov: spectrum conflict (residual {resid:.3e})")
    return X


def least_squares(A: np.ndarray, b: np.ndarray, rtol: float | None = 1e-9):
    """Minimum-norm least squares; returns (solution, residual norm, rank).

    rtol=None keeps every direction above the machine-precision cutoff.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    if A.shape[0] < 1:
        raise ValueError("least_squares: at least one row required")
    x, _, rank, _ = np.linalg.lstsq(A, b, rcond=rtol)
    resid = float(np.linalg.norm(A @ x - b))
    return x, resid, int(rank)


def numerical_rank(A: np.ndarray, rtol: float = 1e-9) -> int:
    """Count of singular values above rtol times the largest one."""
    A = np.atleast_2d(np.asarray(A))  # complex allowed (PBH tests)
    if A.size == 0:
        return 0
    s = np.linalg.svd(A, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > rtol * s[0]))


def singular_values(A: np.ndarray) -> np.ndarray:
    """Full singular-value profile, descending."""
    return np.linalg.svd(np.atleast_2d(np.asarray(A)), compute_uv=False)


def spectral_norm(A: np.ndarray) -> float:
    """Induced 2-norm."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0:
        return 0.0
    return float(np.linalg.svd(A, compute_uv=False)[0])
