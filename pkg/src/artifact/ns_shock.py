"""Compressible Navier-Stokes travelling shock and its Maxwellian lift.

The travelling-wave equations integrate once to

    f_1(V) - s f_0(V) - D(V) V' = f_1(V_-) - s f_0(V_-),

where D(V) maps (rho, u, T)-derivatives to the viscous flux in conserved
(rho, m, E) coordinates.  Its first row vanishes, so mass gives the first
integral j = rho (u - s) and the remaining 2x2 system is integrated in (u, T).

Two closures are provided: the continuum one with mu(T), varkappa(T), and the
Galerkin one built from discretized Maxwellians, whose flux and diffusion
are the hydrodynamics of the finite Hermite model itself.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from . import chapman_enskog as ce
from . import collision_core as cc
from . import fluid_states as fs
from . import hermite_spectral as hs
from .errors import DegenerateMassFlux, GridTooShort, OrbitEscape, ValidationError


class ContinuumClosure:
    name = "continuum"

    def __init__(self, model):
        self.model = model

    def flux(self, v):
        return fs.euler_flux(v), fs.f1_jacobian(v)

    def diffusion(self, v):
        return ce.diffusion_matrix(v, self.model)


class GalerkinHydroClosure:
    """Flux J^(N) and diffusion B^(N) of the Hermite-Galerkin model."""
    name = "galerkin"

    def __init__(self, tensor, kappa):
        self.tensor = tensor
        self.kappa = float(kappa)
        self._C = hs.conserved_from_macro_matrix()

    def closure_at(self, v):
        dm = cc.discretized_maxwellian(self.tensor, self.kappa, hs.macro_from_hydro(v))
        return ce.galerkin_closure(self.tensor, self.kappa, dm.coeffs)

    def flux(self, v):
        dm = cc.discretized_maxwellian(self.tensor, self.kappa, hs.macro_from_hydro(v))
        dM = cc.discretized_maxwellian_jacobian(self.tensor, self.kappa, dm.coeffs)
        iset = self.tensor.index_set
        EA = hs.macro_vectors(iset) @ hs.xi1_matrix(iset)
        return self._C @ (EA @ dm.coeffs), self._C @ (EA @ dM) @ hs.macro_hydro_jacobian(v)

    def diffusion(self, v):
        g = self.closure_at(v)
        return self._C @ g.B @ hs.macro_hydro_jacobian(v)


@dataclass(frozen=True)
class ShockFrame:
    epsilon: float
    speed: float
    v_minus: fs.HydroState
    v_plus: fs.HydroState

    @classmethod
    def from_rh(cls, rh):
        return cls(rh.epsilon, rh.speed, rh.v_minus, rh.v_plus)


def make_frame(v_minus, epsilon, closure=None):
    flux = closure.flux if closure is not None else None
    return ShockFrame.from_rh(fs.rh_solve(v_minus, epsilon, flux=flux))


@dataclass
class NSProfile:
    grid: np.ndarray
    states: np.ndarray       # (M, 3) rho, u, T
    derivative: np.ndarray   # (M, 3) d/dx of states
    frame: ShockFrame
    closure: str
    unstable_rate: float
    meta: dict = field(default_factory=dict)

    @property
    def macro(self):
        return hs.macro_from_hydro(self.states)

    @property
    def macro_derivative(self):
        return np.einsum("mij,mj->mi", np.array([hs.macro_hydro_jacobian(v) for v in self.states]),
                         self.derivative)


@dataclass
class ProfileField:
    grid: np.ndarray
    coeffs: np.ndarray   # (M, dim)
    mode: str


def make_grid(epsilon, L=10.0, M=801):
    return np.linspace(-L / epsilon, L / epsilon, M)


class _ReducedSystem:
    def __init__(self, frame, closure):
        self.frame, self.closure = frame, closure
        vm = frame.v_minus.array
        self.s = frame.speed
        F, _ = closure.flux(vm)
        self.q = F - self.s * fs.to_conserved(vm)
        self.j = vm[0] * (vm[1] - self.s)

    def state(self, y):
        u, T = y
        if abs(u - self.s) < 1e-12:
            raise DegenerateMassFlux("u = s along the orbit")
        return np.array([self.j / (u - self.s), u, T])

    def rhs(self, y):
        v = self.state(y)
        F, _ = self.closure.flux(v)
        R = F - self.s * fs.to_conserved(v) - self.q
        D = self.closure.diffusion(v)
        rho_u = -self.j / (v[1] - self.s) ** 2
        M2 = np.array([[D[1, 0] * rho_u + D[1, 1], D[1, 2]],
                       [D[2, 0] * rho_u + D[2, 1], D[2, 2]]])
        return np.linalg.solve(M2, R[1:])

    def full_derivative(self, y, dy):
        rho_u = -self.j / (y[0] - self.s) ** 2
        return np.array([rho_u * dy[0], dy[0], dy[1]])

    def jacobian(self, y, h=1e-7):
        cols = []
        for k in range(2):
            e = np.zeros(2)
            e[k] = h
            cols.append((self.rhs(y + e) - self.rhs(y - e)) / (2 * h))
        return np.column_stack(cols)


def _refine_rest_point(sysm, y, tol=1e-15, max_iter=20):
    """Newton on the reduced vector field so the end state is an exact rest point."""
    for _ in range(max_iter):
        r = sysm.rhs(y)
        if np.max(np.abs(r)) <= tol:
            break
        y = y - np.linalg.solve(sysm.jacobian(y), r)
    return y


def reduced_ode(v, frame, closure):
    """(du/dx, dT/dx) of the first-integral system at v."""
    sysm = _ReducedSystem(frame, closure)
    v = np.asarray(v.array if isinstance(v, fs.HydroState) else v, dtype=float)
    return sysm.rhs(v[1:])


def solve_profile(frame, closure, grid=None, L=10.0, M=801, rtol=1e-11, atol=1e-13):
    """Heteroclinic orbit by shooting from V_- along the unstable direction."""
    eps = frame.epsilon
    if not 0 < eps <= 0.1:
        raise ValidationError(f"epsilon={eps} outside (0, 0.1]")
    grid = make_grid(eps, L, M) if grid is None else np.asarray(grid, dtype=float)
    if grid[-1] < 8 / eps or grid[0] > -8 / eps:
        raise GridTooShort("grid must span at least [-8/eps, 8/eps]")
    sysm = _ReducedSystem(frame, closure)
    ym = frame.v_minus.array[1:]
    yp = frame.v_plus.array[1:]
    lam, vec = np.linalg.eig(sysm.jacobian(ym))
    k = int(np.argmax(lam.real))
    lam_u = float(lam[k].real)
    if lam_u <= 0:
        raise OrbitEscape("no unstable direction at V_-")
    e = np.real(vec[:, k])
    e /= np.linalg.norm(e)
    if e[0] > 0:
        e = -e
    delta = 1e-8 * eps
    y0 = ym + delta * e
    u_mid = 0.5 * (ym[0] + yp[0])

    def f(x, y):
        return sysm.rhs(y)

    def cross(x, y):
        return y[0] - u_mid
    cross.terminal = True
    cross.direction = -1

    span = 200.0 / (eps * min(1.0, lam_u / eps))
    hmax = 0.5 * (grid[1] - grid[0])
    sol1 = solve_ivp(f, (0.0, span), y0, method="DOP853", rtol=rtol, atol=atol,
                     dense_output=True, events=cross, max_step=hmax)
    if sol1.status != 1:
        raise OrbitEscape("orbit never reached the midpoint velocity")
    x_mid = float(sol1.t_events[0][0])
    y_mid = sol1.y_events[0][0]
    yp = _refine_rest_point(sysm, yp)
    Jp = sysm.jacobian(yp)
    x_end = x_mid + grid[-1] * 1.0001

    def near(x, y):
        return np.linalg.norm(y - yp) - 1e-7
    near.terminal = True
    near.direction = -1
    sol2 = solve_ivp(f, (x_mid, x_end), y_mid, method="DOP853", rtol=rtol, atol=atol,
                     dense_output=True, events=near, max_step=hmax)
    if not sol2.success:
        raise OrbitEscape(sol2.message)
    # past x_tail the orbit follows the linearized flow about V_+
    x_tail = float(sol2.t_events[0][0]) if sol2.status == 1 else np.inf
    y_tail = sol2.y_events[0][0] if sol2.status == 1 else None
    xs = grid + x_mid
    Y = np.empty((len(grid), 2))
    dY = np.empty((len(grid), 2))
    for i, x in enumerate(xs):
        if x < 0:
            Y[i] = ym + delta * np.exp(lam_u * x) * e
            dY[i] = lam_u * delta * np.exp(lam_u * x) * e
        elif x >= x_tail:
            Y[i] = yp + expm(Jp * (x - x_tail)) @ (y_tail - yp)
            dY[i] = Jp @ (Y[i] - yp)
        else:
            Y[i] = sol1.sol(x) if x <= x_mid else sol2.sol(x)
            dY[i] = sysm.rhs(Y[i])
    states = np.array([sysm.state(y) for y in Y])
    deriv = np.array([sysm.full_derivative(y, d) for y, d in zip(Y, dY)])
    if np.linalg.norm(Y[-1] - yp) > 1e-3 * eps:
        raise OrbitEscape(f"orbit ends at {Y[-1]}, expected {yp}")
    return NSProfile(grid, states, deriv, frame, closure.name, lam_u,
                     meta={"x_mid": x_mid, "delta": delta, "start_in_grid": bool(xs[0] < 0)})


_C8 = np.array([1 / 280, -4 / 105, 1 / 5, -4 / 5, 0.0, 4 / 5, -1 / 5, 4 / 105, -1 / 280])


def fd_derivative(values, h, axis=0, order=4):
    """Finite differences on a uniform grid: 4th order (one-sided 4th order at
    the ends), or 8th-order central in the interior with ``order=8``."""
    f = np.moveaxis(np.asarray(values, dtype=float), axis, 0)
    if order == 8:
        d = fd_derivative(f, h)
        n = len(f)
        d[4:-4] = sum(c * f[k:n - 8 + k] for k, c in enumerate(_C8) if c != 0) / h
        return np.moveaxis(d, 0, axis)
    d = np.empty_like(f)
    d[2:-2] = (f[:-4] - 8 * f[1:-3] + 8 * f[3:-1] - f[4:]) / (12 * h)
    d[0] = (-25 * f[0] + 48 * f[1] - 36 * f[2] + 16 * f[3] - 3 * f[4]) / (12 * h)
    d[1] = (-3 * f[0] - 10 * f[1] + 18 * f[2] - 6 * f[3] + f[4]) / (12 * h)
    d[-1] = (25 * f[-1] - 48 * f[-2] + 36 * f[-3] - 16 * f[-4] + 3 * f[-5]) / (12 * h)
    d[-2] = (3 * f[-1] + 10 * f[-2] - 18 * f[-3] + 6 * f[-4] - f[-5]) / (12 * h)
    return np.moveaxis(d, 0, axis)


def fd_second_derivative(values, h, axis=0):
    f = np.moveaxis(np.asarray(values, dtype=float), axis, 0)
    d = np.empty_like(f)
    d[2:-2] = (-f[:-4] + 16 * f[1:-3] - 30 * f[2:-2] + 16 * f[3:-1] - f[4:]) / (12 * h**2)
    d[0] = (45 * f[0] - 154 * f[1] + 214 * f[2] - 156 * f[3] + 61 * f[4] - 10 * f[5]) / (12 * h**2)
    d[1] = (10 * f[0] - 15 * f[1] - 4 * f[2] + 14 * f[3] - 6 * f[4] + f[5]) / (12 * h**2)
    d[-1] = (45 * f[-1] - 154 * f[-2] + 214 * f[-3] - 156 * f[-4] + 61 * f[-5] - 10 * f[-6]) / (12 * h**2)
    d[-2] = (10 * f[-1] - 15 * f[-2] - 4 * f[-3] + 14 * f[-4] - 6 * f[-5] + f[-6]) / (12 * h**2)
    return np.moveaxis(d, 0, axis)


def lift_profile(profile, tensor, kappa, mode="discretized"):
    """Per-node Hermite coefficients of M_{V(x)}: Pi_N M (continuum) or M^(N) (discretized)."""
    iset = tensor.index_set
    if mode == "continuum":
        return ProfileField(profile.grid, hs.maxwellian_coeffs(iset, profile.states), mode)
    if mode != "discretized":
        raise ValidationError(f"unknown lift mode {mode!r}")
    out = np.empty((len(profile.grid), iset.dim))
    macro = profile.macro
    for i, a in enumerate(macro):
        try:
            out[i] = cc.discretized_maxwellian(tensor, kappa, a).coeffs
        except Exception as exc:
            exc.args = (f"node {i}: {exc.args[0] if exc.args else exc}",) + exc.args[1:]
            raise
    return ProfileField(profile.grid, out, mode)


def entropy(states):
    states = np.asarray(states)
    return np.log(states[..., 2] ** 1.5 / states[..., 0])


def entropy_flux(profile, model):
    """j S - varkappa(T) T'/T; non-decreasing along a continuum NS profile since
    its derivative is mu u'^2/T + varkappa T'^2/T^2."""
    st, d = profile.states, profile.derivative
    j = st[0, 0] * (st[0, 1] - profile.frame.speed)
    kap = np.array([model.heat(T) for T in st[:, 2]])
    return j * entropy(st) - kap * d[:, 2] / st[:, 2]


@dataclass
class ProfileReport:
    flux_invariance: float
    ode_residual: float
    boundary_error: tuple
    decay_rates: tuple
    nondegeneracy: float


def _decay_fit(x, y):
    good = y > 0
    A = np.vstack([x[good], np.ones(good.sum())]).T
    slope, _ = np.linalg.lstsq(A, np.log(y[good]), rcond=None)[0]
    return float(abs(slope))


def profile_diagnostics(profile, closure):
    fr = profile.frame
    sysm = _ReducedSystem(fr, closure)
    flux_dev = 0.0
    for v, dv in zip(profile.states, profile.derivative):
        F, _ = closure.flux(v)
        r = F - fr.speed * fs.to_conserved(v) - closure.diffusion(v) @ dv - sysm.q
        flux_dev = max(flux_dev, float(np.max(np.abs(r))))
    h = profile.grid[1] - profile.grid[0]
    fd = fd_derivative(profile.states, h, order=8)
    ode_res = float(np.max(np.abs(fd - profile.derivative)[4:-4]))
    bl = float(np.max(np.abs(profile.states[0] - fr.v_minus.array)))
    br = float(np.max(np.abs(profile.states[-1] - fr.v_plus.array)))
    M = len(profile.grid)
    third = M // 3
    du = np.abs(profile.derivative[:, 1])
    floor = 1e-10 * du.max()
    left = _decay_fit(profile.grid[:third], np.where(du[:third] > floor, du[:third], 0))
    right = _decay_fit(profile.grid[-third:], np.where(du[-third:] > floor, du[-third:], 0))
    i0 = int(np.argmin(np.abs(profile.grid)))
    nondeg = float(np.linalg.norm(profile.macro_derivative[i0]))
    return ProfileReport(flux_dev, ode_res, (bl, br), (left, right), nondeg)
