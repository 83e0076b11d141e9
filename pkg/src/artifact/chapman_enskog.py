"""Burnett functions, transport coefficients and the Chapman-Enskog correction."""
import threading
from dataclasses import dataclass
from math import sqrt

import numpy as np

from . import collision_core as cc
from . import hermite_spectral as hs
from .errors import DegreeTooSmall, NonPositiveCoefficient


def burnett_fields(index_set):
    """Exact coefficients of Phi Mref and Psi Mref.

    Phi = xi_1^2 - |xi|^2/3 = sqrt2 (2 h_200 - h_020 - h_002)/3,
    Psi = xi_1 (|xi|^2 - 5) = sqrt6 h_300 + sqrt2 (h_120 + h_102).
    """
    if index_set.N < 3:
        raise DegreeTooSmall("Burnett function Psi has degree 3")
    phi = np.zeros(index_set.dim)
    psi = np.zeros(index_set.dim)
    pos = index_set.position
    phi[pos((2, 0, 0))] = 2 * sqrt(2) / 3
    phi[pos((0, 2, 0))] = -sqrt(2) / 3
    phi[pos((0, 0, 2))] = -sqrt(2) / 3
    psi[pos((3, 0, 0))] = sqrt(6)
    psi[pos((1, 2, 0))] = sqrt(2)
    psi[pos((1, 0, 2))] = sqrt(2)
    return phi, psi


def reference_background(index_set):
    e = np.zeros(index_set.dim)
    e[0] = 1.0
    return e


def invert_burnett(L, index_set):
    """Solve L x = -Phi Mref, L y = -Psi Mref on the microscopic subspace."""
    phi, psi = burnett_fields(index_set)
    return cc.micro_solve(L, -phi, index_set), cc.micro_solve(L, -psi, index_set)


@dataclass(frozen=True)
class TransportCoeffs:
    mu_tilde: float
    kappa_tilde: float
    gamma: float
    s: float
    kappa: float


def coefficients_from_inverses(phi_t, psi_t, index_set, gamma, s, kappa):
    phi, psi = burnett_fields(index_set)
    mu = float(phi @ phi_t)
    kap = 0.25 * float(psi @ psi_t)
    if not (mu > 0 and kap > 0):
        raise NonPositiveCoefficient(f"mu={mu}, kappa={kap}")
    return TransportCoeffs(mu, kap, gamma, s, kappa)


class TransportModel:
    """mu_kappa(T), varkappa_kappa(T) from the reference Burnett solves.

    Uses the temperature scaling mu_kappa(T) = T^{1-gamma/2} mu~(T^{1-s-gamma/2} kappa),
    re-solving at the rescaled lift weight when kappa > 0.
    """

    def __init__(self, tensor, kappa):
        self.tensor = tensor
        self.kappa = float(kappa)
        self.gamma = tensor.gamma
        self.s = tensor.s
        iset = tensor.index_set
        bg = reference_background(iset)
        self._L0 = cc.linearized_matrix(tensor, 0.0, bg)
        self._L1 = np.einsum("gab,a->gb", tensor.lift + tensor.lift.transpose(0, 2, 1), bg)
        self._cache = {}
        self._lock = threading.Lock()
        self.reference = self._tilde(self.kappa)

    def _tilde(self, kappa_eff):
        key = round(float(kappa_eff), 12)
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        iset = self.tensor.index_set
        phi_t, psi_t = invert_burnett(self._L0 + key * self._L1, iset)
        tc = coefficients_from_inverses(phi_t, psi_t, iset, self.gamma, self.s, key)
        with self._lock:
            self._cache[key] = tc
        return tc

    def _scaled(self, T):
        return self._tilde(T ** (1 - self.s - self.gamma / 2) * self.kappa)

    def mu(self, T):
        return T ** (1 - self.gamma / 2) * self._scaled(T).mu_tilde

    def heat(self, T):
        return T ** (1 - self.gamma / 2) * self._scaled(T).kappa_tilde

    def mu_rescaled_solve(self, T):
        """Independent route: invert T^{gamma/2} L0 + kappa T^{1-s} L1 directly."""
        iset = self.tensor.index_set
        L = T ** (self.gamma / 2) * self._L0 + self.kappa * T ** (1 - self.s) * self._L1
        phi, psi = burnett_fields(iset)
        return T * float(phi @ cc.micro_solve(L, -phi, iset))

    def heat_rescaled_solve(self, T):
        iset = self.tensor.index_set
        L = T ** (self.gamma / 2) * self._L0 + self.kappa * T ** (1 - self.s) * self._L1
        phi, psi = burnett_fields(iset)
        return 0.25 * T * float(psi @ cc.micro_solve(L, -psi, iset))


def transport_coeffs(tensor, kappa):
    return TransportModel(tensor, kappa).reference


def diffusion_matrix(v, model):
    """Viscous flux matrix in (rho, u, T)-derivative form; independent of rho."""
    rho, u, T = np.asarray(v, dtype=float)
    mu, kap = model.mu(T), model.heat(T)
    return np.array([[0.0, 0.0, 0.0], [0.0, mu, 0.0], [0.0, mu * u, kap]])


# ---------------------------------------------------------------------------
# discrete Chapman-Enskog correction

@dataclass
class GalerkinClosure:
    """Hydrodynamic closure of the Galerkin model at one discretized Maxwellian."""
    coeffs: np.ndarray   # M^(N)_U
    dM: np.ndarray       # dM/dU (dim x 3), U in macro coordinates
    b_perp: np.ndarray   # f_perp = b_perp @ dU/dx
    flux: np.ndarray     # J^(N)(U) = P xi_1 M
    dflux: np.ndarray    # dJ/dU
    B: np.ndarray        # B^(N)(U) = -P xi_1 b_perp


def b_perp_map(tensor, kappa, coeffs, dM=None):
    """b_perp = L_M^{-1} (I - dM P) A dM restricted to the microscopic space."""
    iset = tensor.index_set
    if dM is None:
        dM = cc.discretized_maxwellian_jacobian(tensor, kappa, coeffs)
    A = hs.xi1_matrix(iset)
    E = hs.macro_vectors(iset)
    rhs = A @ dM - dM @ (E @ A @ dM)
    L = cc.linearized_matrix(tensor, kappa, coeffs)
    return cc.micro_solve(L, rhs, iset), dM


def micro_correction(tensor, kappa, background, du_dx, dM=None):
    """f_perp = L^{-1}[(I - P_U) xi_1 dM] dU/dx for a macro derivative dU/dx."""
    b, _ = b_perp_map(tensor, kappa, background, dM)
    return b @ np.asarray(du_dx, dtype=float)


def galerkin_closure(tensor, kappa, coeffs, dM=None):
    iset = tensor.index_set
    b, dM = b_perp_map(tensor, kappa, coeffs, dM)
    A = hs.xi1_matrix(iset)
    E = hs.macro_vectors(iset)
    return GalerkinClosure(coeffs=coeffs, dM=dM, b_perp=b, flux=E @ A @ coeffs,
                           dflux=E @ A @ dM, B=-E @ A @ b)


def finite_difference_dM(tensor, kappa, macro, h=1e-5):
    """Central differences of the discretized Maxwellian in macro coordinates."""
    cols = []
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        fp = cc.discretized_maxwellian(tensor, kappa, macro + e).coeffs
        fm = cc.discretized_maxwellian(tensor, kappa, macro - e).coeffs
        cols.append((fp - fm) / (2 * h))
    return np.column_stack(cols)
