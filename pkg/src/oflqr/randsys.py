"""Seeded random plant generators for the property suites.

Each draw comes from a named construction with rejection filters on
structural conditioning (observability condition number, observer gain
size), so that downstream identities hold near machine precision. All
randomness flows through a caller-supplied Generator; the same seed
always yields the same plant.
"""

from dataclasses import dataclass

import numpy as np

from .linalg import numerical_rank, spectral_norm
from .observer_param import ObserverPoly, place_observer_gain
from .riccati import AreProblem, solve_are_sign, spectral_abscissa

MAX_DRAWS = 500


@dataclass(frozen=True)
class PlantDraw:
    """A random plant plus the observer polynomial chosen for it."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    observer_roots: np.ndarray

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class StructuredDraw:
    """A stabilizable + detectable but unobservable plant.

    Built as an orthogonal rotation of blockdiag(minimal part, stable
    deadbeat-free residual part); the rotation of the block solution is
    returned as an independent structural oracle for the full-plant ARE.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    K0: np.ndarray  # stabilizing initial gain for policy iteration
    P_structural: np.ndarray  # rotated blockdiag(P1, 0)
    minimal_order: int

    @property
    def n(self) -> int:
        return self.A.shape[0]


def controllability_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    n = A.shape[0]
    return np.hstack([np.linalg.matrix_power(A, i) @ B for i in range(n)])


def observability_matrix(A: np.ndarray, C: np.ndarray) -> np.ndarray:
    n = A.shape[0]
    return np.vstack([C @ np.linalg.matrix_power(A, i) for i in range(n)])


def draw_parameterizable_plant(
    rng: np.random.Generator,
    max_order: int = 6,
    cond_cap: float = 300.0,
    gain_cap: float = 20.0,
) -> PlantDraw:
    """Controllable + observable single-output plant with a tame observer.

    Rejects draws whose observability matrix is ill conditioned or whose
    placed observer gain is large; either one amplifies pole-placement
    rounding through the resolvent recursion and would turn an exact
    identity into a loose one.
    """
    n = int(rng.integers(2, max_order + 1))
    m = int(rng.integers(1, 3))
    for _ in range(MAX_DRAWS):
        A = rng.standard_normal((n, n)) / np.sqrt(n)
        B = rng.standard_normal((n, m))
        C = rng.standard_normal((1, n))
        if numerical_rank(controllability_matrix(A, B)) < n:
            continue
        obsv = observability_matrix(A, C)
        if numerical_rank(obsv) < n or np.linalg.cond(obsv) > cond_cap:
            continue
        roots = -rng.uniform(0.6, 1.6, size=n)
        L = place_observer_gain(A, C, ObserverPoly(roots=roots))
        if np.linalg.norm(L) > gain_cap:
            continue
        return PlantDraw(A=A, B=B, C=C, observer_roots=roots)
    raise RuntimeError("draw_parameterizable_plant: no acceptable draw")


def _stable_matrix(rng: np.random.Generator, n: int, margin: float) -> np.ndarray:
    G = rng.standard_normal((n, n)) / np.sqrt(n)
    return G - (spectral_abscissa(G) + margin) * np.eye(n)


def draw_stable_plant(
    rng: np.random.Generator, order: int = 3, inputs: int = 1, margin: float = 0.5
) -> PlantDraw:
    """Hurwitz plant with controllable and observable realization."""
    for _ in range(MAX_DRAWS):
        A = _stable_matrix(rng, order, margin)
        B = rng.standard_normal((order, inputs))
        C = rng.standard_normal((1, order))
        if numerical_rank(controllability_matrix(A, B)) < order:
            continue
        obsv = observability_matrix(A, C)
        if numerical_rank(obsv) < order or np.linalg.cond(obsv) > 1e4:
            continue
        roots = -rng.uniform(0.6, 1.6, size=order)
        return PlantDraw(A=A, B=B, C=C, observer_roots=roots)
    raise RuntimeError("draw_stable_plant: no acceptable draw")


def draw_stabilizable_plant(rng: np.random.Generator) -> StructuredDraw:
    """Stabilizable + detectable plant that is deliberately not observable.

    A minimal (controllable + observable) block carries all the cost; a
    second Hurwitz block is reachable by neither the input nor the output
    map. The stabilizing ARE solution is then the rotation of
    blockdiag(P1, 0), singular by construction.
    """
    n1 = int(rng.integers(1, 4))
    n2 = int(rng.integers(1, 4))
    m = int(rng.integers(1, 3))
    for _ in range(MAX_DRAWS):
        A1 = rng.standard_normal((n1, n1)) / np.sqrt(n1)
        B1 = rng.standard_normal((n1, m))
        C1 = rng.standard_normal((1, n1))
        if numerical_rank(controllability_matrix(A1, B1)) < n1:
            continue
        if numerical_rank(observability_matrix(A1, C1)) < n1:
            continue
        A2 = _stable_matrix(rng, n2, float(rng.uniform(0.4, 1.0)))
        sub = AreProblem(A=A1, B=B1, Q=C1.T @ C1 + 1e-2 * np.eye(n1), R=np.eye(m))
        try:
            P1, K1 = solve_are_sign(sub)
        except ValueError:
            continue
        n = n1 + n2
        T, _ = np.linalg.qr(rng.standard_normal((n, n)))
        Az = np.zeros((n, n))
        Az[:n1, :n1] = A1
        Az[n1:, n1:] = A2
        Bz = np.vstack([B1, np.zeros((n2, m))])
        Cz = np.hstack([C1, np.zeros((1, n2))])
        A = T @ Az @ T.T
        B = T @ Bz
        C = Cz @ T.T
        Pz = np.zeros((n, n))
        Pz[:n1, :n1] = P1
        P_structural = T @ Pz @ T.T
        K0 = np.hstack([K1, np.zeros((m, n2))]) @ T.T
        Q = T @ np.pad(sub.Q, ((0, n2), (0, n2))) @ T.T
        Q = 0.5 * (Q + Q.T)
        return StructuredDraw(
            A=A,
            B=B,
            C=C,
            Q=Q,
            R=np.eye(m),
            K0=K0,
            P_structural=0.5 * (P_structural + P_structural.T),
            minimal_order=n1,
        )
    raise RuntimeError("draw_stabilizable_plant: no acceptable draw")


def random_psd(rng: np.random.Generator, n: int, rank: int) -> np.ndarray:
    """Random PSD matrix of the given rank (singular when rank < n)."""
    G = rng.standard_normal((n, rank))
    P = G @ G.T
    return 0.5 * (P + P.T) / max(1.0, spectral_norm(P) / 10.0)
