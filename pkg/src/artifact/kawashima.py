"""Kawashima compensator for the kinetic transport operator xi_1.

Block notation is taken in the orthonormal macro/micro frame of H_N
(first three coordinates psi_0, psi_1, psi_2).  With A = Pi_3 xi_1 Pi_3 and
A01 = P xi_1 (I - P) restricted to H_3, the compensator is

    Kbar = [[delta K00, A01], [-A01^T, 0]],   K00 = [[0, 1, 0], [-1, 0, 0], [0, 0, 0]],

whose commutator with A has macro block delta [K00, A00] + 2 A01 A01^T.
"""
from dataclasses import dataclass

import numpy as np

from . import hermite_spectral as hs
from .errors import DegreeTooSmall, DimensionMismatch, EigSolverFailure

K00 = np.array([[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
DYADIC = tuple(2.0 ** -k for k in range(13))


def transport_matrix(index_set):
    """Pi_3 xi_1 Pi_3 embedded in the full index set."""
    if index_set.N < 3:
        raise DegreeTooSmall("Kawashima construction needs N >= 3")
    A = hs.xi1_matrix(index_set)
    keep = index_set.degrees <= 3
    return A * keep[:, None] * keep[None, :]


def frame_blocks(A, index_set):
    """A00 (3x3), A01 (3xr), A10 (rx3), A11 in the macro/micro frame."""
    Q = hs.frame(index_set)
    Ah = Q.T @ A @ Q
    return Ah[:3, :3], Ah[:3, 3:], Ah[3:, :3], Ah[3:, 3:]


def macro_commutator_block(A, index_set, delta):
    A00, A01, A10, _ = frame_blocks(A, index_set)
    return delta * (K00 @ A00 - A00 @ K00) + 2 * A01 @ A10


def select_delta(A, index_set):
    """Largest dyadic delta <= 1 whose macro block has min eigenvalue >= delta.

    For small delta the lowest eigenvalue behaves like delta <[K00,A00]psi_0, psi_0>
    = 2 delta, so the test asks for at least half of that limit.
    """
    for d in DYADIC:
        if np.linalg.eigvalsh(macro_commutator_block(A, index_set, d)).min() >= d:
            return d
    raise EigSolverFailure("no admissible delta")


@dataclass
class Compensator:
    K: np.ndarray        # delta1 * Kbar in Hermite coordinates
    Kbar: np.ndarray
    delta: float
    delta1: float


def build_kbar(A, index_set, delta):
    Q = hs.frame(index_set)
    _, A01, _, _ = frame_blocks(A, index_set)
    dim = index_set.dim
    Kf = np.zeros((dim, dim))
    Kf[:3, :3] = delta * K00
    Kf[:3, 3:] = A01
    Kf[3:, :3] = -A01.T
    return Q @ Kf @ Q.T


def build_compensator(A, index_set, delta1=1.0, delta=None):
    delta = select_delta(A, index_set) if delta is None else delta
    Kbar = build_kbar(A, index_set, delta)
    return Compensator(delta1 * Kbar, Kbar, delta, delta1)


@dataclass
class CoercivityReport:
    c1: float
    C1: float
    min_combined_eig: float


def coercivity_check(comp, A_full, L, index_set):
    """Constants of <[Kbar, A] f, f> >= c1 |Pf|^2 - C1 |(I-P)f|^2 and the
    minimum eigenvalue of sym(K xi_1 - L) on H_N."""
    n = index_set.dim
    if A_full.shape != (n, n) or L.shape != (n, n):
        raise DimensionMismatch("A, L must be square over the index set")
    Q = hs.frame(index_set)
    C = Q.T @ (comp.Kbar @ A_full - A_full @ comp.Kbar) @ Q
    C = 0.5 * (C + C.T)
    lam00 = np.linalg.eigvalsh(C[:3, :3]).min()
    lam11 = np.linalg.eigvalsh(C[3:, 3:]).min()
    c1 = lam00 / 2
    C1 = 2 * np.linalg.norm(C[:3, 3:], 2) ** 2 / lam00 + max(0.0, -lam11) if lam00 > 0 else np.inf
    S = comp.K @ A_full - L
    try:
        m = np.linalg.eigvalsh(0.5 * (S + S.T)).min()
    except np.linalg.LinAlgError as exc:
        raise EigSolverFailure(str(exc)) from exc
    return CoercivityReport(float(c1), float(C1), float(m))


def select_delta1(A_full, L, index_set, A3=None):
    """Largest dyadic delta1 whose combined minimum eigenvalue is at least half
    of the best value over the dyadic ladder."""
    A3 = transport_matrix(index_set) if A3 is None else A3
    base = build_compensator(A3, index_set, 1.0)
    vals = []
    for d in DYADIC:
        comp = Compensator(d * base.Kbar, base.Kbar, base.delta, d)
        vals.append(coercivity_check(comp, A_full, L, index_set).min_combined_eig)
    best = max(vals)
    if best <= 0:
        raise EigSolverFailure("no dyadic delta1 gives a coercive combination")
    for d, v in zip(DYADIC, vals):
        if v >= 0.5 * best:
            return Compensator(d * base.Kbar, base.Kbar, base.delta, d)
