"""Euler-level fluid machinery for the 1D compressible gas.

States are (rho, u, T) with the monatomic closure p = rho*T and internal
energy 3/2 rho T.  All maps accept a HydroState/ConservedState or a plain
array whose last axis has length 3, so they vectorize over grids.
"""
from dataclasses import dataclass

import numpy as np

from .errors import LaxViolation, NewtonDivergence, NonPhysicalState, ValidationError


@dataclass(frozen=True)
class HydroState:
    rho: float
    u: float
    T: float

    def __post_init__(self):
        if not (self.rho > 0 and self.T > 0):
            raise NonPhysicalState(f"rho and T must be positive, got rho={self.rho}, T={self.T}")

    @property
    def array(self):
        return np.array([self.rho, self.u, self.T], dtype=float)

    @classmethod
    def from_array(cls, a):
        a = np.asarray(a, dtype=float)
        return cls(float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True)
class ConservedState:
    rho: float
    m: float
    E: float

    @property
    def array(self):
        return np.array([self.rho, self.m, self.E], dtype=float)


@dataclass(frozen=True)
class CharFields:
    lambdas: np.ndarray
    rvecs: np.ndarray  # columns r_1, r_2, r_3
    c: float


@dataclass(frozen=True)
class RHSolution:
    v_minus: HydroState
    v_plus: HydroState
    speed: float
    epsilon: float
    residual: float = 0.0
    iterations: int = 0


def _arr(v):
    if isinstance(v, (HydroState, ConservedState)):
        return v.array
    return np.asarray(v, dtype=float)


def to_conserved(v):
    """f_0(V) = (rho, rho u, rho u^2/2 + 3/2 rho T)."""
    a = _arr(v)
    rho, u, T = a[..., 0], a[..., 1], a[..., 2]
    out = np.stack([rho, rho * u, 0.5 * rho * u**2 + 1.5 * rho * T], axis=-1)
    if isinstance(v, HydroState):
        return ConservedState(*map(float, out))
    return out


def from_conserved(w):
    """Inverse of to_conserved; raises NonPhysicalState for rho <= 0 or e <= 0."""
    a = _arr(w)
    rho, m, E = a[..., 0], a[..., 1], a[..., 2]
    if np.any(rho <= 0):
        raise NonPhysicalState("density must be positive")
    u = m / rho
    eint = E - 0.5 * m * u
    if np.any(eint <= 0):
        raise NonPhysicalState("internal energy must be positive")
    out = np.stack([rho, u, eint / (1.5 * rho)], axis=-1)
    if isinstance(w, ConservedState):
        return HydroState(*map(float, out))
    return out


def euler_flux(v):
    """f_1(V) = (rho u, rho u^2 + rho T, rho u^3/2 + 5/2 rho u T)."""
    a = _arr(v)
    rho, u, T = a[..., 0], a[..., 1], a[..., 2]
    return np.stack([rho * u, rho * u**2 + rho * T,
                     0.5 * rho * u**3 + 2.5 * rho * u * T], axis=-1)


def f0_jacobian(v):
    rho, u, T = _arr(v)
    return np.array([[1.0, 0.0, 0.0],
                     [u, rho, 0.0],
                     [0.5 * u**2 + 1.5 * T, rho * u, 1.5 * rho]])


def f1_jacobian(v):
    rho, u, T = _arr(v)
    return np.array([[u, rho, 0.0],
                     [u**2 + T, 2 * rho * u, rho],
                     [0.5 * u**3 + 2.5 * u * T, 1.5 * rho * u**2 + 2.5 * rho * T, 2.5 * rho * u]])


def sound_speed(v):
    return np.sqrt(5.0 * _arr(v)[..., 2] / 3.0)


def char_fields(v):
    """Characteristic speeds u-c, u, u+c and right eigenvectors in (rho, u, T).

    r_1 and r_3 are normalized so that r_i . grad(lambda_i) = 1.  The contact
    vector is r_2 = (-3 rho, 0, 3T), which keeps the pressure rho*T fixed.
    """
    rho, u, T = _arr(v)
    c = float(np.sqrt(5.0 * T / 3.0))
    r1 = np.array([-3 * rho, 3 * c, -2 * T]) / (4 * c)
    r2 = np.array([-3 * rho, 0.0, 3 * T])
    r3 = np.array([3 * rho, 3 * c, 2 * T]) / (4 * c)
    return CharFields(lambdas=np.array([u - c, u, u + c]),
                      rvecs=np.column_stack([r1, r2, r3]), c=c)


def lambda3(v):
    a = _arr(v)
    return a[..., 1] + sound_speed(a)


def grad_lambda3(v):
    rho, u, T = _arr(v)
    c = np.sqrt(5.0 * T / 3.0)
    return np.array([0.0, 1.0, c / (2 * T)])


def eigen_residuals(v):
    """max_i |(lambda_i f0' - f1') r_i| at v."""
    cf = char_fields(v)
    f0p, f1p = f0_jacobian(v), f1_jacobian(v)
    return np.array([np.linalg.norm((cf.lambdas[i] * f0p - f1p) @ cf.rvecs[:, i])
                     for i in range(3)])


def _euler_flux_with_jac(v):
    return euler_flux(v), f1_jacobian(v)


def rh_solve(v_minus, epsilon, flux=None, tol=1e-12, max_iter=50):
    """Solve Rankine-Hugoniot plus lambda_3(V+) = lambda_3(V-) - eps for (V+, s).

    ``flux`` maps a (rho, u, T) array to (F, dF/dV) with F in conserved
    (rho, m, E) coordinates; it defaults to the Euler flux.  The Newton
    iteration starts at the linear prediction V- - eps r_3, s = lambda_3 - eps/2
    and halves the step whenever the residual grows.
    """
    if not isinstance(v_minus, HydroState):
        v_minus = HydroState.from_array(v_minus)
    if not 0 <= epsilon <= 0.2:
        raise ValidationError(f"epsilon must lie in [0, 0.2], got {epsilon}")
    flux = flux or _euler_flux_with_jac
    vm = v_minus.array
    w_m = to_conserved(vm)
    F_m, _ = flux(vm)
    lam_m = float(lambda3(vm))
    r3 = char_fields(vm).rvecs[:, 2]

    def residual(x):
        v, s = x[:3], x[3]
        F, dF = flux(v)
        res = np.empty(4)
        res[:3] = F - F_m - s * (to_conserved(v) - w_m)
        res[3] = lambda3(v) - lam_m + epsilon
        jac = np.zeros((4, 4))
        jac[:3, :3] = dF - s * f0_jacobian(v)
        jac[:3, 3] = -(to_conserved(v) - w_m)
        jac[3, :3] = grad_lambda3(v)
        return res, jac

    x = np.concatenate([vm - epsilon * r3, [lam_m - 0.5 * epsilon]])
    res, jac = residual(x)
    hist = [float(np.max(np.abs(res)))]
    it = 0
    while hist[-1] > tol:
        if it >= max_iter:
            raise NewtonDivergence("Rankine-Hugoniot Newton did not converge", hist)
        dx = np.linalg.solve(jac, -res)
        step = 1.0
        while True:
            trial = x + step * dx
            if trial[0] > 0 and trial[2] > 0:
                r_t, j_t = residual(trial)
                if np.max(np.abs(r_t)) < hist[-1] or step < 1e-4:
                    break
            step *= 0.5
            if step < 1e-6:
                raise NewtonDivergence("Rankine-Hugoniot line search failed", hist)
        x, res, jac = trial, r_t, j_t
        hist.append(float(np.max(np.abs(res))))
        it += 1
        if it > 3 and hist[-1] >= hist[-2]:
            # stagnation at rounding level
            if hist[-1] < 1e3 * tol:
                break
            raise NewtonDivergence("Rankine-Hugoniot Newton stagnated", hist)
    v_plus = HydroState.from_array(x[:3])
    s = float(x[3])
    if not (lambda3(v_plus.array) - 1e-14 <= s <= lam_m + 1e-14):
        raise LaxViolation(f"s={s} violates lambda3(V+)={lambda3(v_plus.array)} <= s <= {lam_m}")
    return RHSolution(v_minus, v_plus, s, float(epsilon), hist[-1], it)
