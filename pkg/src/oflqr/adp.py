"""Data-driven policy and value iteration over interval data stacks.

Two families of learners share the regression conventions of
:mod:`oflqr.stacks`. State-feedback learners consume the state stacks and
recover the plant LQR solution. Output-feedback learners consume the
compensator-state stacks and recover the LQR solution of the ancillary
system built on the observer parameterization. Each output-feedback
algorithm comes in two flavors: the original one treats both the value
matrix and the gain as regression unknowns; the improved one exploits the
fact that the compensator input matrix is known by construction, recovers
the gain in closed form, and so drops m * n_zeta unknowns from every
sweep. The improved flavor therefore asks strictly less of the data, and
there are data sets (including the bundled benchmark runs) on which only
the improved conditions hold.

Policy iteration records one (value, gain) pair per evaluation sweep, with
the gain that was evaluated, matching the model-based Kleinman iteration
record for record. Value iteration is delegated to the safeguarded
diminishing-step loop in :mod:`oflqr.riccati`; only the Riccati-map
evaluation is replaced by a data regression.
"""

from collections import deque
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .linalg import (
    duplication_matrix,
    kron,
    least_squares,
    spectral_norm,
    unvecs,
    vecs,
)
from .riccati import (
    IterateHistory,
    IterateRecord,
    ViSchedule,
    check_vi_seed,
    vi_loop,
)
from .stacks import RANK_RTOL, DataStacks, RankCondition, rank_report

DIVERGENCE_CAP = 1e8


@dataclass(frozen=True)
class Regression:
    """One least-squares problem: design @ unknowns = target.

    unknown_layout names the blocks of the unknown vector in order, as
    (name, length) pairs; "value" blocks are packed symmetric matrices
    and "gain" blocks are column-stacked gain matrices.
    """

    design: np.ndarray
    target: np.ndarray
    unknown_layout: Tuple[Tuple[str, int], ...]


class RankDeficiencyError(ValueError):
    """The data do not excite enough directions for the requested solver."""

    def __init__(self, message: str, report: Dict[str, RankCondition]):
        super().__init__(message)
        self.report = report


class DivergenceError(RuntimeError):
    """An iterate escaped the divergence cap; carries the partial history."""

    def __init__(self, message: str, history: IterateHistory):
        super().__init__(message)
        self.history = history


@dataclass
class AdpResult:
    """Outcome of one data-driven run.

    final_value and final_gain are the algorithm's outputs; history holds
    the per-iterate records (for policy iteration, the gain stored with
    each record is the one whose value was estimated in that sweep). The
    normalized errors are filled when references are supplied.
    """

    algorithm: str
    history: IterateHistory
    converged: bool
    iterations: int
    final_value: np.ndarray
    final_gain: np.ndarray
    rank_report: Dict[str, RankCondition]
    normalized_value_error: Optional[float] = None
    normalized_gain_error: Optional[float] = None
    reference_value: Optional[np.ndarray] = field(default=None, repr=False)
    reference_gain: Optional[np.ndarray] = field(default=None, repr=False)

    def summary(self) -> dict:
        """JSON-serializable run summary."""
        cond = self.rank_report[_RANK_KEY[self.algorithm]]
        sv = cond.singular_values
        margin = sv[cond.required - 1] / sv[0] if len(sv) >= cond.required and sv[0] > 0 else 0.0
        return {
            "algorithm": self.algorithm,
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "final_gain": self.final_gain.tolist(),
            "final_value": self.final_value.tolist(),
            "rank_condition": {
                "name": cond.name,
                "required": cond.required,
                "achieved": cond.achieved,
                "satisfied": bool(cond.satisfied),
                "relative_margin": float(margin),
            },
            "normalized_value_error": _maybe_float(self.normalized_value_error),
            "normalized_gain_error": _maybe_float(self.normalized_gain_error),
        }

    def history_to_csv(self, path):
        reference = None
        if self.reference_value is not None and self.reference_gain is not None:
            reference = (self.reference_value, self.reference_gain)
        self.history.to_csv(path, reference=reference)


_RANK_KEY = {
    "state_pi": "state_pi",
    "state_vi": "state_vi",
    "output_pi_original": "output_pi",
    "output_vi_original": "output_vi",
    "output_pi_improved": "improved_pi",
    "output_vi_improved": "improved_vi",
}


def _maybe_float(v):
    return None if v is None else float(v)


def _vec_gain(K: np.ndarray) -> np.ndarray:
    """Column-stacks an m x n gain (matches the unknown ordering)."""
    return K.reshape(-1, order="F")


def _unpack_gain(kappa: np.ndarray, n: int, m: int) -> np.ndarray:
    return kappa.reshape(n, m).T


def _as_gain(K0, m: int, n: int, context: str) -> np.ndarray:
    K = np.atleast_2d(np.asarray(K0, dtype=float))
    if K.shape != (m, n):
        raise ValueError(f"{context}: initial gain must be {m} x {n}")
    return K


def _as_weight(W, size: int, context: str) -> np.ndarray:
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if W.shape != (size, size):
        raise ValueError(f"{context}: weight must be {size} x {size}")
    if np.max(np.abs(W - W.T)) > 1e-10 * max(1.0, np.max(np.abs(W))):
        raise ValueError(f"{context}: weight must be symmetric")
    return 0.5 * (W + W.T)


def _gate(stacks: DataStacks, algorithm: str, rank_rtol: float) -> Dict[str, RankCondition]:
    report = rank_report(stacks, rtol=rank_rtol)
    key = _RANK_KEY[algorithm]
    if key not in report:
        raise ValueError(
            f"{algorithm}: stacks were built with which='{stacks.which}', "
            "which does not carry the required matrices"
        )
    cond = report[key]
    if not cond.satisfied:
        raise RankDeficiencyError(
            f"{algorithm}: data rank {cond.achieved} below the required "
            f"{cond.required}; enrich the excitation or extend the window",
            report,
        )
    return report


def _finish(
    algorithm,
    hist,
    converged,
    P,
    K,
    report,
    reference_value,
    reference_gain,
) -> AdpResult:
    value_err = gain_err = None
    if reference_value is not None:
        ref = np.asarray(reference_value, dtype=float)
        value_err = spectral_norm(P - ref) / max(spectral_norm(ref), 1e-300)
    if reference_gain is not None:
        ref = np.atleast_2d(np.asarray(reference_gain, dtype=float))
        gain_err = spectral_norm(K - ref) / max(spectral_norm(ref), 1e-300)
    return AdpResult(
        algorithm=algorithm,
        history=hist,
        converged=converged,
        iterations=hist.final.k + 1,
        final_value=P,
        final_gain=K,
        rank_report=report,
        normalized_value_error=value_err,
        normalized_gain_error=gain_err,
        reference_value=None if reference_value is None else np.asarray(reference_value, float),
        reference_gain=None
        if reference_gain is None
        else np.atleast_2d(np.asarray(reference_gain, float)),
    )


# =====================================================================
# Regression builders
# =====================================================================


def pi_regression(delta, gamma_ss, gamma_su, quad_target, K, R, n, m) -> Regression:
    """Joint (value, gain) sweep: one row per interval.

    For the policy K the interval identity reads
    delta . vecs(P) - 2 * Int s'K'R K+ s + 2 * Int u'R K+ s = quad_target,
    with P and the improved gain K+ unknown. quad_target already carries
    the -Int of the running cost under K.
    """
    eye = np.eye(n)
    gain_block = -2.0 * gamma_ss @ kron(eye, K.T @ R) + 2.0 * gamma_su @ kron(eye, R)
    design = np.hstack([delta, gain_block])
    layout = (("value", n * (n + 1) // 2), ("gain", n * m))
    return Regression(design=design, target=quad_target, unknown_layout=layout)


def vi_regression(i_ss, i_su, target, n, m) -> Regression:
    """Joint (map, gain) evaluation at a fixed value matrix.

    I_ss . vecs(H) - 2 * I_su . vec(K) = target, where target is the
    interval change of the packed square under the current value matrix
    (plus known cost terms on the output layout).
    """
    design = np.hstack([i_ss, -2.0 * i_su])
    layout = (("value", n * (n + 1) // 2), ("gain", n * m))
    return Regression(design=design, target=target, unknown_layout=layout)


def improved_pi_regression(stacks: DataStacks, B_zeta, K, R, Q_y, dup) -> Regression:
    """Value-only sweep: the gain terms fold into the value columns.

    With the compensator input matrix known, both policy cross terms are
    linear in P alone:
    [delta + 2 Gamma_zz kron((B K)', I) N - 2 Gamma_zu kron(I, B') N] vecs(P)
      = -Gamma_yy vec(Q_y) - Gamma_zz vec(K'R K).
    """
    nz = stacks.n_zeta
    eye = np.eye(nz)
    design = (
        stacks.delta_zeta
        + 2.0 * stacks.gamma_zeta_zeta @ (kron((B_zeta @ K).T, eye) @ dup)
        - 2.0 * stacks.gamma_zeta_u @ (kron(eye, B_zeta.T) @ dup)
    )
    target = -stacks.gamma_yy @ Q_y.reshape(-1) - stacks.gamma_zeta_zeta @ (K.T @ R @ K).reshape(-1)
    layout = (("value", nz * (nz + 1) // 2),)
    return Regression(design=design, target=target, unknown_layout=layout)


def improved_vi_regression(stacks: DataStacks, P, K, Q_y) -> Regression:
    """Map-only evaluation: the known gain moves to the target side.

    I_zz . vecs(H) = delta . vecs(P) + I_yy . vecs(Q_y) + 2 I_zu . vec(K).
    """
    target = (
        stacks.delta_zeta @ vecs(P)
        + stacks.i_yy @ vecs(Q_y)
        + 2.0 * stacks.i_zeta_u @ _vec_gain(K)
    )
    nz = stacks.n_zeta
    layout = (("value", nz * (nz + 1) // 2),)
    return Regression(design=stacks.i_zeta_zeta, target=target, unknown_layout=layout)


def solve_regression(reg: Regression) -> np.ndarray:
    """Minimum-norm solve with a machine-precision cutoff.

    The entry rank gate is the arbiter of data quality; truncating again
    inside the sweeps at a loose threshold discards directions that still
    carry real constraints and can bend the iteration toward a spurious
    fixed point.
    """
    sol, _, _ = least_squares(reg.design, reg.target, rtol=None)
    return sol


# =====================================================================
# Policy iteration
# =====================================================================


def _pi_loop(algorithm, sweep, K0, tol, max_iters, report, reference_value, reference_gain):
    """Shared sweep loop: sweep(K) -> (P, K_next)."""
    if tol <= 0:
        raise ValueError(f"{algorithm}: tol must be positive")
    if max_iters < 1:
        raise ValueError(f"{algorithm}: max_iters must be at least 1")
    hist = IterateHistory()
    K = K0
    P_prev = None
    P = None
    K_next = K0
    for k in range(max_iters):
        P, K_next = sweep(K)
        if not np.all(np.isfinite(P)) or spectral_norm(P) > DIVERGENCE_CAP:
            hist.append(IterateRecord(k=k, P=P, K=K_next, event="diverged"))
            raise DivergenceError(
                f"{algorithm}: value iterate escaped the divergence cap", hist
            )
        stopped = P_prev is not None and spectral_norm(P - P_prev) <= tol * max(
            1.0, spectral_norm(P)
        )
        hist.append(
            IterateRecord(k=k, P=P, K=K_next, event="converged" if stopped else "step")
        )
        if stopped:
            hist.converged = True
            break
        P_prev = P
        K = K_next
    return _finish(
        algorithm, hist, hist.converged, P, K_next, report, reference_value, reference_gain
    )


def state_pi(
    stacks: DataStacks,
    Q,
    R,
    K0,
    tol: float = 1e-10,
    max_iters: int = 60,
    rank_rtol: float = RANK_RTOL,
    reference_value=None,
    reference_gain=None,
) -> AdpResult:
    """Policy iteration on state data; learns the plant LQR solution."""
    algorithm = "state_pi"
    report = _gate(stacks, algorithm, rank_rtol)
    n, m = stacks.n, stacks.m
    Q = _as_weight(Q, n, algorithm)
    R = _as_weight(R, m, algorithm)
    K = _as_gain(K0, m, n, algorithm)

    def sweep(Kc):
        target = -stacks.gamma_xx @ (Q + Kc.T @ R @ Kc).reshape(-1)
        reg = pi_regression(
            stacks.delta_x, stacks.gamma_xx, stacks.gamma_xu, target, Kc, R, n, m
        )
        sol = solve_regression(reg)
        d = n * (n + 1) // 2
        return unvecs(sol[:d], n), _unpack_gain(sol[d:], n, m)

    return _pi_loop(algorithm, sweep, K, tol, max_iters, report, reference_value, reference_gain)


def output_pi_original(
    stacks: DataStacks,
    Q_y,
    R,
    Kbar0,
    tol: float = 1e-10,
    max_iters: int = 60,
    rank_rtol: float = RANK_RTOL,
    reference_value=None,
    reference_gain=None,
) -> AdpResult:
    """Policy iteration on compensator data with the gain as an unknown."""
    algorithm = "output_pi_original"
    report = _gate(stacks, algorithm, rank_rtol)
    nz, m, p = stacks.n_zeta, stacks.m, stacks.p
    Q_y = _as_weight(Q_y, p, algorithm)
    R = _as_weight(R, m, algorithm)
    K = _as_gain(Kbar0, m, nz, algorithm)

    def sweep(Kc):
        target = -stacks.gamma_yy @ Q_y.reshape(-1) - stacks.gamma_zeta_zeta @ (
            Kc.T @ R @ Kc
        ).reshape(-1)
        reg = pi_regression(
            stacks.delta_zeta,
            stacks.gamma_zeta_zeta,
            stacks.gamma_zeta_u,
            target,
            Kc,
            R,
            nz,
            m,
        )
        sol = solve_regression(reg)
        d = nz * (nz + 1) // 2
        return unvecs(sol[:d], nz), _unpack_gain(sol[d:], nz, m)

    return _pi_loop(algorithm, sweep, K, tol, max_iters, report, reference_value, reference_gain)


def output_pi_improved(
    stacks: DataStacks,
    Q_y,
    R,
    B_zeta,
    Kbar0,
    tol: float = 1e-10,
    max_iters: int = 60,
    rank_rtol: float = RANK_RTOL,
    reference_value=None,
    reference_gain=None,
) -> AdpResult:
    """Policy iteration on compensator data with closed-form gain updates.

    Uses the known compensator input matrix to express the policy cross
    terms through the value matrix, leaving only the packed value as the
    unknown; the improved gain is -inv(R) B' P.
    """
    algorithm = "output_pi_improved"
    report = _gate(stacks, algorithm, rank_rtol)
    nz, m, p = stacks.n_zeta, stacks.m, stacks.p
    Q_y = _as_weight(Q_y, p, algorithm)
    R = _as_weight(R, m, algorithm)
    B = np.atleast_2d(np.asarray(B_zeta, dtype=float))
    if B.shape != (nz, m):
        raise ValueError(f"{algorithm}: B_zeta must be {nz} x {m}")
    K = _as_gain(Kbar0, m, nz, algorithm)
    dup = duplication_matrix(nz)
    R_inv = np.linalg.inv(R)

    def sweep(Kc):
        reg = improved_pi_regression(stacks, B, Kc, R, Q_y, dup)
        P = unvecs(solve_regression(reg), nz)
        return P, -R_inv @ B.T @ P

    return _pi_loop(algorithm, sweep, K, tol, max_iters, report, reference_value, reference_gain)


# =====================================================================
# Value iteration
# =====================================================================


def _vi_run(
    algorithm,
    step,
    P0,
    n,
    sched,
    report,
    reference_value,
    reference_gain,
    record_every,
) -> AdpResult:
    P0 = check_vi_seed(P0, n, algorithm)
    tail = deque(maxlen=50)  # recent iterates, for divergence context

    def guarded_step(P, k):
        if not np.all(np.isfinite(P)) or spectral_norm(P) > DIVERGENCE_CAP:
            partial = IterateHistory()
            for rec in tail:
                partial.append(rec)
            raise DivergenceError(
                f"{algorithm}: value iterate escaped the divergence cap", partial
            )
        incr, K = step(P, k)
        tail.append(IterateRecord(k=k, P=P, K=K))
        return incr, K

    hist = vi_loop(
        P0, sched, guarded_step, lambda P, K: (None, None), record_every=record_every
    )
    final = hist.final
    return _finish(
        algorithm,
        hist,
        hist.converged,
        final.P,
        final.K,
        report,
        reference_value,
        reference_gain,
    )


def state_vi(
    stacks: DataStacks,
    Q,
    R,
    P0,
    sched: ViSchedule,
    rank_rtol: float = RANK_RTOL,
    reference_value=None,
    reference_gain=None,
    record_every: int = 1,
) -> AdpResult:
    """Value iteration on state data; learns the plant LQR solution."""
    algorithm = "state_vi"
    report = _gate(stacks, algorithm, rank_rtol)
    n, m = stacks.n, stacks.m
    Q = _as_weight(Q, n, algorithm)
    R = _as_weight(R, m, algorithm)
    d = n * (n + 1) // 2

    def step(P, k):
        reg = vi_regression(stacks.i_xx, stacks.i_xu, stacks.delta_x @ vecs(P), n, m)
        sol = solve_regression(reg)
        H = unvecs(sol[:d], n)
        K = _unpack_gain(sol[d:], n, m)
        return H + Q - K.T @ R @ K, K

    return _vi_run(
        algorithm, step, P0, n, sched, report, reference_value, reference_gain, record_every
    )


def output_vi_original(
    stacks: DataStacks,
    Q_y,
    R,
    Pbar0,
    sched: ViSchedule,
    rank_rtol: float = RANK_RTOL,
    reference_value=None,
    reference_gain=None,
    record_every: int = 1,
) -> AdpResult:
    """Value iteration on compensator data with the gain as an unknown."""
    algorithm = "output_vi_original"
    report = _gate(stacks, algorithm, rank_rtol)
    nz, m, p = stacks.n_zeta, stacks.m, stacks.p
    Q_y = _as_weight(Q_y, p, algorithm)
    R = _as_weight(R, m, algorithm)
    d = nz * (nz + 1) // 2

    def step(P, k):
        target = stacks.delta_zeta @ vecs(P) + stacks.i_yy @ vecs(Q_y)
        reg = vi_regression(stacks.i_zeta_zeta, stacks.i_zeta_u, target, nz, m)
        sol = solve_regression(reg)
        H = unvecs(sol[:d], nz)  # carries the output cost already
        K = _unpack_gain(sol[d:], nz, m)
        return H - K.T @ R @ K, K

    return _vi_run(
        algorithm, step, Pbar0, nz, sched, report, reference_value, reference_gain, record_every
    )


def output_vi_improved(
    stacks: DataStacks,
    Q_y,
    R,
    B_zeta,
    Pbar0,
    sched: ViSchedule,
    rank_rtol: float = RANK_RTOL,
    reference_value=None,
    reference_gain=None,
    record_every: int = 1,
) -> AdpResult:
    """Value iteration on compensator data with closed-form gains."""
    algorithm = "output_vi_improved"
    report = _gate(stacks, algorithm, rank_rtol)
    nz, m, p = stacks.n_zeta, stacks.m, stacks.p
    Q_y = _as_weight(Q_y, p, algorithm)
    R = _as_weight(R, m, algorithm)
    B = np.atleast_2d(np.asarray(B_zeta, dtype=float))
    if B.shape != (nz, m):
        raise ValueError(f"{algorithm}: B_zeta must be {nz} x {m}")
    R_inv = np.linalg.inv(R)

    def step(P, k):
        K = -R_inv @ B.T @ P
        reg = improved_vi_regression(stacks, P, K, Q_y)
        H = unvecs(solve_regression(reg), nz)  # carries the output cost already
        return H - K.T @ R @ K, K

    return _vi_run(
        algorithm, step, Pbar0, nz, sched, report, reference_value, reference_gain, record_every
    )
