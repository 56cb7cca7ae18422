"""Deterministic fixed-step simulation of the plant + compensator pair.

The compensator is the companion-driven filter bank from observer_param;
the joint linear system is integrated with the classical 4th-order
Runge-Kutta scheme on a uniform grid so the downstream quadrature sees
consistent samples. Everything is a pure function of the inputs: the
same call is bit-identical every time.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .linalg import kron
from .observer_param import Parameterization

DIVERGENCE_CAP = 1e12
GRID_TOL = 1e-9


def _as_matrix(X, name):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name}: non-finite entries")
    return X


@dataclass(frozen=True)
class LtiPlant:
    """State-space triple (A, B, C) with output y = Cx."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        C = _as_matrix(self.C, "C")
        n = A.shape[0]
        if A.shape != (n, n) or B.shape[0] != n or C.shape[1] != n:
            raise ValueError("LtiPlant: inconsistent dimensions")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class ExplorationSignal:
    """Input u(t, zeta) = gain_matrix @ zeta + offset + sum of sinusoids.

    The sinusoid sum is a scalar added to every input channel; per-channel
    shaping goes through constant_offset and gain_matrix.
    """

    gain_matrix: np.ndarray  # m x n_zeta, may be all zeros
    sinusoids: Tuple[Tuple[float, float, float], ...] = ()  # (amplitude, angular frequency, phase)
    constant_offset: Optional[np.ndarray] = None

    def __post_init__(self):
        G = _as_matrix(self.gain_matrix, "gain_matrix")
        object.__setattr__(self, "gain_matrix", G)
        sins = tuple((float(a), float(w), float(ph)) for a, w, ph in self.sinusoids)
        if not all(np.isfinite(v) for tri in sins for v in tri):
            raise ValueError("ExplorationSignal: non-finite sinusoid parameters")
        object.__setattr__(self, "sinusoids", sins)
        off = self.constant_offset
        off = np.zeros(G.shape[0]) if off is None else np.asarray(off, dtype=float).reshape(-1)
        if off.shape != (G.shape[0],) or not np.all(np.isfinite(off)):
            raise ValueError("ExplorationSignal: constant_offset must be an m-vector")
        object.__setattr__(self, "constant_offset", off)

    def excitation(self, t: float) -> float:
        """The scalar sinusoid sum at time t."""
        return float(sum(a * np.sin(w * t + ph) for a, w, ph in self.sinusoids))

    def evaluate(self, t: float, zeta: np.ndarray) -> np.ndarray:
        return self.gain_matrix @ zeta + self.constant_offset + self.excitation(t)


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled joint trajectory (t, x, zeta, u, y)."""

    times: np.ndarray
    x: np.ndarray
    zeta: np.ndarray
    u: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("Trajectory: need at least two samples")
        steps = np.diff(t)
        if np.max(np.abs(steps - steps[0])) > 1e-12 * max(1.0, abs(steps[0])):
            raise ValueError("Trajectory: grid must be uniform")
        if steps[0] <= 0:
            raise ValueError("Trajectory: times must increase")
        for name in ("x", "zeta", "u", "y"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim != 2 or arr.shape[0] != t.size:
                raise ValueError(f"Trajectory: {name} must have one row per sample")
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "times", t)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def __len__(self):
        return self.times.size

    def to_csv(self, path) -> None:
        """One row per sample: t, x, zeta, u, y at full double precision."""
        cols = ["t"]
        cols += [f"x{i + 1}" for i in range(self.x.shape[1])]
        cols += [f"zeta{i + 1}" for i in range(self.zeta.shape[1])]
        cols += [f"u{i + 1}" for i in range(self.u.shape[1])]
        cols += [f"y{i + 1}" for i in range(self.y.shape[1])]
        data = np.hstack([self.times[:, None], self.x, self.zeta, self.u, self.y])
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for row in data:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


class SimulationDivergence(RuntimeError):
    """State norm blew past the cap; carries the truncated trajectory."""

    def __init__(self, message: str, trajectory: Trajectory):
        super().__init__(message)
        self.trajectory = trajectory


def simulate(
    plant: LtiPlant,
    param: Parameterization,
    signal: ExplorationSignal,
    x0,
    zeta0,
    t_span: Tuple[float, float],
    dt: float,
) -> Trajectory:
    """Classical 4th-order integration of the joint (x, zeta) system.

    The compensator runs zeta' = (I (x) Acal) zeta + S_u u + S_y y with
    y = Cx evaluated at the stage points and u from the exploration
    signal. Raises SimulationDivergence (with the truncated trajectory
    attached) when the joint state norm passes 1e12.
    """
    if dt <= 0:
        raise ValueError("simulate: dt must be positive")
    t_start, t_end = float(t_span[0]), float(t_span[1])
    if not t_end > t_start:
        raise ValueError("simulate: empty t_span")
    steps = int(round((t_end - t_start) / dt))
    if steps < 1 or abs(steps * dt - (t_end - t_start)) > GRID_TOL:
        raise ValueError("simulate: dt must divide the span length")

    n, m, p = plant.n, plant.m, plant.p
    n_zeta = param.n_zeta
    if param.M.shape[0] != n or signal.gain_matrix.shape != (m, n_zeta):
        raise ValueError("simulate: plant, parameterization and signal disagree on dimensions")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    zeta0 = np.asarray(zeta0, dtype=float).reshape(-1)
    if x0.shape != (n,) or zeta0.shape != (n_zeta,):
        raise ValueError("simulate: bad initial state dimensions")

    # joint autonomous matrix and excitation injection: with u = G zeta +
    # e(t) the pair is z' = F z + (S e(t)) where e broadcasts over channels
    S_u = param.input_selector()
    S_y = param.output_selector()
    A_comp = kron(np.eye(m + p), param.A_cal)
    F = np.block(
        [
            [plant.A, plant.B @ signal.gain_matrix],
            [S_y @ plant.C, A_comp + S_u @ signal.gain_matrix],
        ]
    )
    inject = np.vstack([plant.B, S_u])  # times (offset + excitation)
    offset = signal.constant_offset
    # the scalar sinusoid sum enters every channel: F z + c0 + e(t) c1
    c0 = inject @ offset
    c1 = inject.sum(axis=1)

    times = t_start + dt * np.arange(steps + 1)
    # excitation precomputed at all half-step stage points
    stage_t = t_start + 0.5 * dt * np.arange(2 * steps + 1)
    e_stage = np.zeros(stage_t.size)
    for a, w, ph in signal.sinusoids:
        e_stage += a * np.sin(w * stage_t + ph)

    xs = np.empty((steps + 1, n))
    zetas = np.empty((steps + 1, n_zeta))
    us = np.empty((steps + 1, m))

    z = np.concatenate([x0, zeta0])

    for i in range(steps + 1):
        xs[i] = z[:n]
        zetas[i] = z[n:]
        us[i] = signal.gain_matrix @ z[n:] + offset + e_stage[2 * i]
        norm = float(np.linalg.norm(z))
        if norm > DIVERGENCE_CAP:
            traj = Trajectory(
                times=times[: i + 1],
                x=xs[: i + 1],
                zeta=zetas[: i + 1],
                u=us[: i + 1],
                y=xs[: i + 1] @ plant.C.T,
            )
            raise SimulationDivergence(
                f"divergence: joint state norm {norm:.3e} at t={times[i]:.6g}", traj
            )
        if i == steps:
            break
        e0, e1, e2 = e_stage[2 * i], e_stage[2 * i + 1], e_stage[2 * i + 2]
        k1 = F @ z + c0 + e0 * c1
        k2 = F @ (z + 0.5 * dt * k1) + c0 + e1 * c1
        k3 = F @ (z + 0.5 * dt * k2) + c0 + e1 * c1
        k4 = F @ (z + dt * k3) + c0 + e2 * c1
        z = z + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    return Trajectory(times=times, x=xs, zeta=zetas, u=us, y=xs @ plant.C.T)


def observation_error(traj: Trajectory, M: np.ndarray) -> np.ndarray:
    """Pointwise norms of M zeta(t) - x(t); decays at the observer rate."""
    M = _as_matrix(M, "M")
    if M.shape != (traj.x.shape[1], traj.zeta.shape[1]):
        raise ValueError("observation_error: M does not conform to the trajectory")
    return np.linalg.norm(traj.zeta @ M.T - traj.x, axis=1)


def decay_rate(times: np.ndarray, series: np.ndarray, floor: float = 1e-9) -> float:
    """Least-squares slope of log(series) vs t over the above-floor prefix.

    Fits only while the series stays a factor above both the absolute
    floor and the integration noise level, so the exponential regime is
    not polluted by the flat tail.
    """
    series = np.asarray(series, dtype=float)
    lo = max(float(floor), float(series.min()) * 10.0)
    mask = series > lo
    # use the contiguous prefix where decay is still visible
    cut = int(np.argmin(mask)) if not mask.all() else series.size
    if cut < 8:
        raise ValueError("decay_rate: too few samples above the floor")
    t = np.asarray(times, dtype=float)[:cut]
    logs = np.log(series[:cut])
    slope = np.polyfit(t, logs, 1)[0]
    return float(slope)
