"""Interval data stacks built from sampled trajectories.

Rows correspond to the sampling intervals [t_q, t_{q+1}] of a knot grid
laid over the fine simulation grid. Difference stacks evaluate packed
squares at the knots exactly; integral stacks use composite Simpson
quadrature on the fine grid (with a 3/8 tail when the interval holds an
odd number of steps), so quadrature error is negligible against the
tolerances used downstream.
"""

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .linalg import numerical_rank, singular_values, vecv_rows
from .sim import Trajectory

GRID_TOL = 1e-9
RANK_RTOL = 1e-8


@dataclass(frozen=True)
class SampleGrid:
    """Knots t_0 < t_1 < ... < t_s aligned with the trajectory grid."""

    knots: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.knots, dtype=float).reshape(-1)
        if k.size < 2:
            raise ValueError("SampleGrid: need at least two knots")
        if np.any(np.diff(k) <= 0):
            raise ValueError("SampleGrid: knots must strictly increase")
        object.__setattr__(self, "knots", k)

    @classmethod
    def uniform(cls, start: float, spacing: float, count: int) -> "SampleGrid":
        """count intervals of the given spacing from start."""
        if spacing <= 0 or count < 1:
            raise ValueError("SampleGrid.uniform: positive spacing and count required")
        return cls(knots=start + spacing * np.arange(count + 1))

    @property
    def s(self) -> int:
        return self.knots.size - 1


@dataclass(frozen=True)
class DataStacks:
    """Per-interval difference and integral stacks for one trajectory.

    The state layout fills (delta_x, gamma_xx, gamma_xu, i_xx, i_xu); the
    output layout fills (delta_zeta, gamma_zeta_zeta, gamma_zeta_u,
    gamma_yy, i_zeta_zeta, i_zeta_u, i_yy). Input integrals are weighted
    by R.
    """

    which: str
    s: int
    n: int
    n_zeta: int
    m: int
    p: int
    knots: np.ndarray
    delta_x: Optional[np.ndarray] = None
    gamma_xx: Optional[np.ndarray] = None
    gamma_xu: Optional[np.ndarray] = None
    i_xx: Optional[np.ndarray] = None
    i_xu: Optional[np.ndarray] = None
    delta_zeta: Optional[np.ndarray] = None
    gamma_zeta_zeta: Optional[np.ndarray] = None
    gamma_zeta_u: Optional[np.ndarray] = None
    gamma_yy: Optional[np.ndarray] = None
    i_zeta_zeta: Optional[np.ndarray] = None
    i_zeta_u: Optional[np.ndarray] = None
    i_yy: Optional[np.ndarray] = None

    def matrices(self) -> Dict[str, np.ndarray]:
        """The stacks that are present, by field name."""
        names = (
            "delta_x",
            "gamma_xx",
            "gamma_xu",
            "i_xx",
            "i_xu",
            "delta_zeta",
            "gamma_zeta_zeta",
            "gamma_zeta_u",
            "gamma_yy",
            "i_zeta_zeta",
            "i_zeta_u",
            "i_yy",
        )
        return {name: getattr(self, name) for name in names if getattr(self, name) is not None}

    def to_csv(self, directory) -> Tuple[str, ...]:
        """One CSV per present stack; returns the written file names."""
        import os

        written = []
        for name, mat in self.matrices().items():
            path = os.path.join(str(directory), f"{name}.csv")
            with open(path, "w") as fh:
                fh.write(",".join(f"c{j}" for j in range(mat.shape[1])) + "\n")
                for row in mat:
                    fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
            written.append(path)
        return tuple(written)


@dataclass(frozen=True)
class RankCondition:
    name: str
    required: int
    achieved: int
    satisfied: bool
    singular_values: Tuple[float, ...]


def quadrature_weights(steps: int) -> np.ndarray:
    """Composite Simpson weights over `steps` uniform subintervals.

    Even counts use plain Simpson; odd counts >= 3 finish with a 3/8
    block; a single subinterval falls back to the trapezoid. Weights sum
    to `steps` (multiply by dt at use).
    """
    if steps < 1:
        raise ValueError("quadrature_weights: at least one subinterval")
    w = np.zeros(steps + 1)
    if steps == 1:
        w[:] = 0.5
        return w
    if steps % 2 == 0:
        w[0] = w[steps] = 1.0 / 3.0
        w[1:steps:2] = 4.0 / 3.0
        w[2 : steps - 1 : 2] = 2.0 / 3.0
        return w
    head = steps - 3
    if head > 0:
        w[0] = 1.0 / 3.0
        w[1:head:2] = 4.0 / 3.0
        w[2 : head - 1 : 2] = 2.0 / 3.0
        w[head] += 1.0 / 3.0
    w[head] += 3.0 / 8.0
    w[head + 1] += 9.0 / 8.0
    w[head + 2] += 9.0 / 8.0
    w[head + 3] += 3.0 / 8.0
    return w


def _knot_indices(traj: Trajectory, grid: SampleGrid) -> np.ndarray:
    t0 = traj.times[0]
    dt = traj.dt
    idx = np.round((grid.knots - t0) / dt).astype(int)
    if idx[0] < 0 or idx[-1] >= traj.times.size:
        raise ValueError("grid alignment: knots outside the trajectory span")
    if np.max(np.abs(traj.times[idx] - grid.knots)) > GRID_TOL:
        raise ValueError("grid alignment: knots must sit on the simulation grid")
    return idx


def _interval_integrals(series_pairs, idx, dt):
    """Row-per-interval integrals of outer/packed products.

    series_pairs is a list of ("outer", a, b) or ("vecv", a, None)
    requests; returns one stacked matrix per request.
    """
    s = idx.size - 1
    outs = []
    for kind, a, b in series_pairs:
        if kind == "outer":
            cols = a.shape[1] * b.shape[1]
        else:
            n = a.shape[1]
            cols = n * (n + 1) // 2
        outs.append(np.empty((s, cols)))
    for q in range(s):
        lo, hi = idx[q], idx[q + 1]
        w = quadrature_weights(hi - lo) * dt
        for j, (kind, a, b) in enumerate(series_pairs):
            seg = a[lo : hi + 1]
            if kind == "outer":
                outs[j][q] = np.einsum("t,ti,tj->ij", w, seg, b[lo : hi + 1]).reshape(-1)
            else:
                outs[j][q] = w @ vecv_rows(seg)
    return outs


def build_stacks(traj: Trajectory, grid: SampleGrid, R, which: str = "output") -> DataStacks:
    """Difference and integral stacks of the trajectory over the grid."""
    if which not in ("state", "output"):
        raise ValueError("build_stacks: which must be 'state' or 'output'")
    R = np.atleast_2d(np.asarray(R, dtype=float))
    m = traj.u.shape[1]
    if R.shape != (m, m):
        raise ValueError("build_stacks: R must be m x m")
    idx = _knot_indices(traj, grid)
    dt = traj.dt
    ru = traj.u @ R.T

    common = dict(
        which=which,
        s=grid.s,
        n=traj.x.shape[1],
        n_zeta=traj.zeta.shape[1],
        m=m,
        p=traj.y.shape[1],
        knots=grid.knots,
    )
    if which == "state":
        x = traj.x
        delta = vecv_rows(x[idx][1:]) - vecv_rows(x[idx][:-1])
        gamma_xx, gamma_xu, i_xu = _interval_integrals(
            [("outer", x, x), ("outer", x, traj.u), ("outer", x, ru)], idx, dt
        )
        (i_xx,) = _interval_integrals([("vecv", x, None)], idx, dt)
        return DataStacks(
            delta_x=delta,
            gamma_xx=gamma_xx,
            gamma_xu=gamma_xu,
            i_xx=i_xx,
            i_xu=i_xu,
            **common,
        )

    z = traj.zeta
    y = traj.y
    delta = vecv_rows(z[idx][1:]) - vecv_rows(z[idx][:-1])
    gamma_zz, gamma_zu, gamma_yy, i_zu = _interval_integrals(
        [("outer", z, z), ("outer", z, traj.u), ("outer", y, y), ("outer", z, ru)],
        idx,
        dt,
    )
    i_zz, i_yy = _interval_integrals([("vecv", z, None), ("vecv", y, None)], idx, dt)
    return DataStacks(
        delta_zeta=delta,
        gamma_zeta_zeta=gamma_zz,
        gamma_zeta_u=gamma_zu,
        gamma_yy=gamma_yy,
        i_zeta_zeta=i_zz,
        i_zeta_u=i_zu,
        i_yy=i_yy,
        **common,
    )


def _condition(name, design, required, rtol) -> RankCondition:
    sv = singular_values(design)
    achieved = numerical_rank(design, rtol=rtol)
    return RankCondition(
        name=name,
        required=required,
        achieved=achieved,
        satisfied=achieved >= required,
        singular_values=tuple(float(v) for v in sv),
    )


def rank_report(stacks: DataStacks, rtol: float = RANK_RTOL) -> Dict[str, RankCondition]:
    """Excitation rank conditions supported by the present stacks.

    Keys: state_pi / state_vi (state layout), output_pi / output_vi
    (original regressions, P-and-gain unknowns) and improved_pi /
    improved_vi (value-only unknowns).
    """
    out: Dict[str, RankCondition] = {}
    if stacks.gamma_xx is not None:
        n, m = stacks.n, stacks.m
        need = n * (n + 1) // 2 + n * m
        out["state_pi"] = _condition(
            "state_pi", np.hstack([stacks.gamma_xx, stacks.gamma_xu]), need, rtol
        )
        out["state_vi"] = _condition(
            "state_vi", np.hstack([stacks.i_xx, stacks.i_xu]), need, rtol
        )
    if stacks.gamma_zeta_zeta is not None:
        nz, m = stacks.n_zeta, stacks.m
        half = nz * (nz + 1) // 2
        out["output_pi"] = _condition(
            "output_pi",
            np.hstack([stacks.gamma_zeta_zeta, stacks.gamma_zeta_u]),
            half + m * nz,
            rtol,
        )
        out["output_vi"] = _condition(
            "output_vi",
            np.hstack([stacks.i_zeta_zeta, stacks.i_zeta_u]),
            half + m * nz,
            rtol,
        )
        out["improved_pi"] = _condition("improved_pi", stacks.gamma_zeta_zeta, half, rtol)
        out["improved_vi"] = _condition("improved_vi", stacks.i_zeta_zeta, half, rtol)
    return out
