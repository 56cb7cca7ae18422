"""Model-based Riccati machinery.

An independent matrix-sign oracle for the continuous-time ARE

    A'P + PA + Q - P B R^-1 B' P = 0,

the classical Newton/Kleinman policy-iteration recursion, the safeguarded
stochastic-approximation value-iteration loop, and the closed-loop cost
matrix evaluator. The oracle shares no code path with the iterative
solvers so they can validate each other.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .linalg import solve_lyapunov, spectral_norm, vecs

PSD_EIG_TOL = -1e-10


def _as_matrix(X, name):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name}: non-finite entries")
    return X


@dataclass(frozen=True)
class AreProblem:
    """The quadruple (A, B, Q, R) of a continuous-time LQR problem."""

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        Q = _as_matrix(self.Q, "Q")
        R = _as_matrix(self.R, "R")
        n = A.shape[0]
        m = B.shape[1]
        if A.shape != (n, n) or B.shape[0] != n:
            raise ValueError("AreProblem: A square and B row-conformable required")
        if Q.shape != (n, n) or R.shape != (m, m):
            raise ValueError("AreProblem: Q must be n x n and R must be m x m")
        if np.max(np.abs(Q - Q.T)) > 1e-8 * max(1.0, np.max(np.abs(Q))):
            raise ValueError("AreProblem: Q must be symmetric")
        if np.max(np.abs(R - R.T)) > 1e-8 * max(1.0, np.max(np.abs(R))):
            raise ValueError("AreProblem: R must be symmetric")
        Q = 0.5 * (Q + Q.T)
        R = 0.5 * (R + R.T)
        if np.min(np.linalg.eigvalsh(Q)) < PSD_EIG_TOL * max(1.0, spectral_norm(Q)):
            raise ValueError("AreProblem: Q must be positive semidefinite")
        if np.min(np.linalg.eigvalsh(R)) <= 0.0:
            raise ValueError("AreProblem: R must be positive definite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def gain(self, P: np.ndarray) -> np.ndarray:
        """Feedback gain K = -R^-1 B' P associated with a value matrix."""
        return -np.linalg.solve(self.R, self.B.T @ P)

    def residual(self, P: np.ndarray) -> np.ndarray:
        """ARE residual matrix at P."""
        A, B, Q, R = self.A, self.B, self.Q, self.R
        return A.T @ P + P @ A + Q - P @ B @ np.linalg.solve(R, B.T @ P)


@dataclass(frozen=True)
class ViSchedule:
    """Step sizes, safeguard bounds and stopping rule for the VI loops."""

    step_fn: Callable[[int], float]
    bound_fn: Callable[[int], float]
    convergence_eps: float = 0.01
    max_iters: int = 100_000

    def __post_init__(self):
        if self.convergence_eps <= 0:
            raise ValueError("ViSchedule: convergence_eps must be positive")
        if self.max_iters < 1:
            raise ValueError("ViSchedule: max_iters must be at least 1")
        steps = [self.step_fn(k) for k in range(4)]
        if any(e <= 0 for e in steps):
            raise ValueError("ViSchedule: step sizes must be positive")
        bounds = [self.bound_fn(q) for q in range(4)]
        if any(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:])):
            raise ValueError("ViSchedule: bound caps must strictly increase")


def harmonic_schedule(
    step_scale: float = 5.0,
    bound_scale: float = 1000.0,
    convergence_eps: float = 0.01,
    max_iters: int = 100_000,
) -> ViSchedule:
    """eps_k = step_scale/(k+1) with caps bound_scale*(q+1).

    The k+1 shift keeps the k=0 step finite while preserving the divergent
    sum / square-summable requirements.
    """
    return ViSchedule(
        step_fn=lambda k: step_scale / (k + 1.0),
        bound_fn=lambda q: bound_scale * (q + 1.0),
        convergence_eps=convergence_eps,
        max_iters=max_iters,
    )


@dataclass(frozen=True)
class IterateRecord:
    """One iterate: K is always the gain derived from this record's P.

    Policy iteration records the sweep output (value estimate, improved
    gain); value iteration records each value iterate with its greedy
    gain. Either way the deployable gain for a recorded value sits in
    the same row, and the policy that produced a PI value is the K of
    the previous record.
    """

    k: int
    P: np.ndarray
    K: np.ndarray
    # model diagnostics; None on data-driven runs where A is unknown
    are_residual: Optional[float] = None
    closed_loop_abscissa: Optional[float] = None
    event: str = "step"  # step | reset | converged | diverged


@dataclass
class IterateHistory:
    records: list = field(default_factory=list)
    converged: bool = False

    def append(self, rec: IterateRecord):
        if self.records and rec.k <= self.records[-1].k:
            raise ValueError("IterateHistory: k must strictly increase")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    @property
    def final(self) -> IterateRecord:
        return self.records[-1]

    def to_csv(self, path, reference=None):
        """Writes k, vecs(P), vec(K), optional normalized errors, one row per iterate."""
        import csv

        ref_p = ref_k = None
        if reference is not None:
            ref_p, ref_k = reference
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            rec0 = self.records[0]
            ncols_p = vecs(rec0.P).size
            ncols_k = rec0.K.size
            head = ["k"]
            head += [f"p{i}" for i in range(ncols_p)]
            head += [f"k{i}" for i in range(ncols_k)]
            head += ["are_residual", "closed_loop_abscissa", "event"]
            if ref_p is not None:
                head += ["err_p", "err_k"]
            w.writerow(head)
            for rec in self.records:
                row = [rec.k]
                row += [f"{v:.17g}" for v in vecs(rec.P)]
                row += [f"{v:.17g}" for v in rec.K.reshape(-1, order="F")]
                row += [
                    "" if rec.are_residual is None else f"{rec.are_residual:.17g}",
                    "" if rec.closed_loop_abscissa is None else f"{rec.closed_loop_abscissa:.17g}",
                    rec.event,
                ]
                if ref_p is not None:
                    row += [
                        f"{spectral_norm(rec.P - ref_p) / max(spectral_norm(ref_p), 1e-300):.17g}",
                        f"{spectral_norm(rec.K - ref_k) / max(spectral_norm(ref_k), 1e-300):.17g}",
                    ]
                w.writerow(row)


def spectral_abscissa(F: np.ndarray) -> float:
    """Largest real part over the spectrum of F."""
    F = _as_matrix(F, "F")
    if F.shape[0] != F.shape[1]:
        raise ValueError("spectral_abscissa: square matrix required")
    return float(np.max(np.linalg.eigvals(F).real))


# =====================================================================
# Matrix-sign oracle
# =====================================================================


def solve_are_sign(prob: AreProblem, max_steps: int = 100, tol: float = 1e-12):
    """Stabilizing ARE solution via the matrix sign of the Hamiltonian.

    Newton iteration with determinant scaling; the stabilizing P is read
    off the sign's stable invariant subspace by a stacked least-squares
    solve. Independent of the PI/VI code paths by construction.
    """
    A, B, Q, R = prob.A, prob.B, prob.Q, prob.R
    n = prob.n
    G = B @ np.linalg.solve(R, B.T)
    H = np.block([[A, -G], [-Q, -A.T]])
    Z = H.copy()
    size = 2 * n
    converged = False
    for _ in range(max_steps):
        sign, logdet = np.linalg.slogdet(Z)
        if sign == 0 or not np.isfinite(logdet):
            raise ValueError("Hamiltonian has near-imaginary-axis eigenvalues")
        c = np.exp(-logdet / size)
        Zc = c * Z
        try:
            Zinv = np.linalg.inv(Zc)
        except np.linalg.LinAlgError as exc:
            raise ValueError("Hamiltonian has near-imaginary-axis eigenvalues") from exc
        Znew = 0.5 * (Zc + Zinv)
        delta = np.linalg.norm(Znew - Z, "fro")
        Z = Znew
        if delta <= tol * max(1.0, np.linalg.norm(Z, "fro")):
            converged = True
            break
    if not converged:
        raise ValueError("Hamiltonian has near-imaginary-axis eigenvalues")

    # stable subspace of H is the kernel of sign(H) + I; the stabilizing
    # solution makes [I; P] a basis of it
    S11 = Z[:n, :n]
    S12 = Z[:n, n:]
    S21 = Z[n:, :n]
    S22 = Z[n:, n:]
    I = np.eye(n)
    Gmat = np.vstack([S12, S22 + I])
    rhs = -np.vstack([S11 + I, S21])
    P, _, rank, _ = np.linalg.lstsq(Gmat, rhs, rcond=1e-12)
    if rank < n:
        raise ValueError("stabilizing subspace extraction failed")
    P = 0.5 * (P + P.T)
    resid = spectral_norm(prob.residual(P))
    if resid > 1e-8 * (1.0 + spectral_norm(P)):
        raise ValueError("stabilizing subspace extraction failed")
    K = prob.gain(P)
    if spectral_abscissa(A + B @ K) >= 0.0:
        raise ValueError("stabilizing subspace extraction failed")
    return P, K


# =====================================================================
# Policy iteration (Newton/Kleinman)
# =====================================================================


def kleinman_pi(
    prob: AreProblem,
    K0: np.ndarray,
    tol: float = 1e-12,
    max_iters: int = 60,
) -> IterateHistory:
    """Policy iteration from a stabilizing gain.

    Each sweep solves the closed-loop Lyapunov equation for the current
    policy cost and improves the gain; value matrices decrease monotonically
    to the stabilizing ARE solution.
    """
    A, B, Q, R = prob.A, prob.B, prob.Q, prob.R
    K = _as_matrix(K0, "K0")
    if K.shape != (prob.m, prob.n):
        raise ValueError("kleinman_pi: K0 must be m x n")
    if spectral_abscissa(A + B @ K) >= 0.0:
        raise ValueError("initial gain not stabilizing")
    hist = IterateHistory()
    P_prev = None
    for k in range(max_iters):
        P = solve_lyapunov(A + B @ K, Q + K.T @ R @ K)
        K_next = prob.gain(P)
        hist.append(
            IterateRecord(
                k=k,
                P=P,
                K=K_next,
                are_residual=spectral_norm(prob.residual(P)),
                closed_loop_abscissa=spectral_abscissa(A + B @ K_next),
            )
        )
        if P_prev is not None and spectral_norm(P - P_prev) < tol:
            hist.converged = True
            break
        P_prev = P
        K = K_next
    return hist


# =====================================================================
# Value iteration (safeguarded stochastic approximation)
# =====================================================================


def check_vi_seed(P0, n: int, context: str) -> np.ndarray:
    """Validates a VI starting value: n x n, symmetric, PSD."""
    P0 = _as_matrix(P0, "P0")
    if P0.shape != (n, n):
        raise ValueError(f"{context}: P0 must be n x n")
    if np.max(np.abs(P0 - P0.T)) > 1e-8 * max(1.0, np.max(np.abs(P0))):
        raise ValueError(f"{context}: P0 must be symmetric")
    P0 = 0.5 * (P0 + P0.T)
    if np.min(np.linalg.eigvalsh(P0)) < -1e-8 * max(1.0, spectral_norm(P0)):
        raise ValueError(f"{context}: P0 must be positive semidefinite")
    return P0


def vi_loop(
    P0: np.ndarray,
    sched: ViSchedule,
    step: Callable,
    diag: Callable,
    record_every: int = 1,
) -> IterateHistory:
    """Safeguarded diminishing-step recursion shared by all VI solvers.

    step(P, k) -> (increment, K) evaluates the Riccati map at P (by model
    or from data) plus the gain associated with P; diag(P, K) supplies
    (are_residual, closed_loop_abscissa) records, or (None, None) when no
    model is available. Iterates escaping the current safeguard set (norm
    cap or loss of positive semidefiniteness) reset to P0 and enlarge the
    set. The ratio stopping rule must fire on three consecutive
    iterations. record_every thins the history on long runs; resets and
    the final iterate are always recorded.
    """
    P = P0.copy()
    q = 0
    hits = 0
    hist = IterateHistory()
    for k in range(sched.max_iters):
        eps = sched.step_fn(k)
        incr, K = step(P, k)
        Pnew = P + eps * incr
        Pnew = 0.5 * (Pnew + Pnew.T)
        event = "step"
        increment = spectral_norm(Pnew - P)
        out_of_bounds = spectral_norm(Pnew) >= sched.bound_fn(q) or np.min(
            np.linalg.eigvalsh(Pnew)
        ) < -1e-8 * max(1.0, spectral_norm(Pnew))
        if out_of_bounds:
            event = "reset"
            hits = 0
        elif increment / eps < sched.convergence_eps:
            hits += 1
        else:
            hits = 0
        if hits >= 3 or event == "reset" or k == sched.max_iters - 1 or k % record_every == 0:
            resid, absc = diag(P, K)
            hist.append(
                IterateRecord(
                    k=k,
                    P=P,
                    K=K,
                    are_residual=resid,
                    closed_loop_abscissa=absc,
                    event="converged" if hits >= 3 else event,
                )
            )
        if hits >= 3:
            hist.converged = True
            break
        if out_of_bounds:
            P = P0.copy()
            q += 1
        else:
            P = Pnew
    return hist


def model_vi(
    prob: AreProblem, P0: np.ndarray, sched: ViSchedule, record_every: int = 1
) -> IterateHistory:
    """Value iteration P <- P + eps_k * (A'P + PA + Q - P G P)."""
    P0 = check_vi_seed(P0, prob.n, "model_vi")

    def step(P, k):
        return prob.residual(P), prob.gain(P)

    def diag(P, K):
        return (
            spectral_norm(prob.residual(P)),
            spectral_abscissa(prob.A + prob.B @ K),
        )

    return vi_loop(P0, sched, step, diag, record_every)


# =====================================================================
# Closed-loop cost
# =====================================================================


def cost_matrix(prob: AreProblem, K: np.ndarray) -> Optional[np.ndarray]:
    """Quadratic cost matrix of the policy u = Kx, or None when infinite.

    Finite exactly when A + BK is Hurwitz, in which case it solves
    (A+BK)'V + V(A+BK) + Q + K'RK = 0.
    """
    K = _as_matrix(K, "K")
    Acl = prob.A + prob.B @ K
    if spectral_abscissa(Acl) >= 0.0:
        return None
    return solve_lyapunov(Acl, prob.Q + K.T @ prob.R @ K)
