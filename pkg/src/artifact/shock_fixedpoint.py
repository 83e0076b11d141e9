"""Outer contraction for the kinetic shock.

With F = M + f_perp + f, where M is the discretized Maxwellian lift of the
Galerkin Navier-Stokes profile and f_perp = b_perp(M) u' the Chapman-Enskog
correction, the travelling-wave equation becomes L_eta f = E[f] with

    E[f] = -(I - P_u)(A - s) f_perp' + Q(f_perp, f_perp)
           + Q(f_perp, f) + Q(f, f_perp) + Q(f, f),

P_u = dM P the tangent projection onto the discretized Maxwellian manifold.
The first group is the reduced form of L f_perp - (A - s)(M + f_perp)',
valid because the profile solves the Galerkin Navier-Stokes equations.
"""
from dataclasses import dataclass, field

import numpy as np

from . import chapman_enskog as ce
from . import collision_core as cc
from . import hermite_spectral as hs
from . import linear_bvp as lb
from . import ns_shock as ns
from .errors import ContractionStall, GridMismatch, NonMicroscopicError


@dataclass
class ShockSetup:
    """Everything the outer iteration needs, computed once per run."""
    tensor: object
    kappa: float
    eta: float
    profile: object
    field: object          # discretized lift M(x)
    dM: np.ndarray         # (M, dim, 3)
    f_perp: np.ndarray     # (M, dim)
    ell: np.ndarray
    system: object
    solver: object
    weight: np.ndarray     # H^1 proxy Gram matrix

    @property
    def grid(self):
        return self.profile.grid

    @property
    def epsilon(self):
        return self.profile.frame.epsilon


def chapman_enskog_correction(tensor, kappa, field_, macro_derivative):
    """Per-node f_perp = b_perp(M) u' and the Maxwellian tangents dM."""
    Mn = len(field_.grid)
    dim = tensor.index_set.dim
    fp = np.empty((Mn, dim))
    dM = np.empty((Mn, dim, 3))
    for i in range(Mn):
        dM[i] = cc.discretized_maxwellian_jacobian(tensor, kappa, field_.coeffs[i])
        b, _ = ce.b_perp_map(tensor, kappa, field_.coeffs[i], dM[i])
        fp[i] = b @ macro_derivative[i]
    return fp, dM


def prepare(tensor, kappa, eta, profile, transport):
    """Lift, Chapman-Enskog correction, l_eps and the factorized linear solver."""
    field_ = ns.lift_profile(profile, tensor, kappa, mode="discretized")
    fp, dM = chapman_enskog_correction(tensor, kappa, field_, profile.macro_derivative)
    ell = lb.build_ell(profile, transport)
    system = lb.assemble_system(field_, tensor, kappa, eta, profile.frame)
    solver = lb.CollocationSolver(system, ell)
    weight = lb.hh1_weight(tensor, kappa)
    return ShockSetup(tensor, float(kappa), float(eta), profile, field_, dM, fp, ell,
                      system, solver, weight)


def _dx(values, grid):
    return ns.fd_derivative(values, grid[1] - grid[0], axis=0, order=4)


def error_term(f, field_, f_perp, tensor, kappa, dM, speed, macro_tol=1e-7,
               macro_derivative=None):
    """Per-node E[f] (microscopic).

    When `macro_derivative` (u' per node) is given, the macroscopic part of
    the unreduced first group, -P (A - s)(dM u' + f_perp'), is checked
    against `macro_tol`; a violation means the profile does not solve the
    Galerkin Navier-Stokes equations.
    """
    grid = np.asarray(field_.grid)
    f = np.asarray(f, dtype=float)
    f_perp = np.asarray(f_perp, dtype=float)
    if f.shape != f_perp.shape or f.shape[0] != len(grid) or dM.shape[0] != len(grid):
        raise GridMismatch("error-term inputs must share the grid")
    iset = tensor.index_set
    A = hs.xi1_matrix(iset) - speed * np.eye(iset.dim)
    E = hs.macro_vectors(iset)
    dfp = _dx(f_perp, grid)
    Adfp = dfp @ A.T
    if macro_derivative is not None:
        full = (np.einsum("kij,kj->ki", dM, macro_derivative) + dfp) @ A.T @ E.T
        worst = float(np.abs(full).max())
        if worst > macro_tol:
            raise NonMicroscopicError(f"macroscopic residual {worst:.3e} of the profile "
                                      f"exceeds {macro_tol:.1e}")
    group1 = -(Adfp - np.einsum("kij,kj->ki", dM, Adfp @ E.T))
    Q = lambda g, h: cc.apply_Q(tensor, kappa, g, h)
    return group1 + Q(f_perp, f_perp) + Q(f_perp, f) + Q(f, f_perp) + Q(f, f)


def setup_error_term(setup, f, check=False):
    return error_term(f, setup.field, setup.f_perp, setup.tensor, setup.kappa, setup.dM,
                      setup.profile.frame.speed,
                      macro_derivative=setup.profile.macro_derivative if check else None)


@dataclass
class IterationState:
    f: np.ndarray
    iteration: int
    step_norms: list
    ratios: list
    phase_values: list
    converged: bool

    @property
    def contraction(self):
        """Largest successive step ratio after the first two iterations."""
        tail = self.ratios[1:] if len(self.ratios) > 1 else self.ratios
        return float(max(tail)) if tail else 0.0


@dataclass
class KineticShock:
    grid: np.ndarray
    F: np.ndarray
    frame: object
    lift: np.ndarray
    f_perp: np.ndarray
    f: np.ndarray
    meta: dict = field(default_factory=dict)


def _norm(setup, g):
    return lb.h2_eps(setup.grid, g, setup.weight, setup.epsilon)


def iterate(setup, tol=1e-10, max_iter=25, stall_ratio=0.9, f0=None, d=0.0):
    """f_{k+1} = L^dagger E[f_k] from f_0 = 0 until the step norm is <= tol."""
    f = np.zeros_like(setup.f_perp) if f0 is None else np.array(f0, dtype=float)
    steps, ratios, phases = [], [], []
    converged = False
    k = 0
    for k in range(1, max_iter + 1):
        z = setup_error_term(setup, f, check=(k == 1))
        sampler = lb.source_from_z(setup.system, z)
        sol = setup.solver.solve(sampler, d=d)
        step = _norm(setup, sol.f - f)
        f = sol.f
        phases.append(sol.bc_value)
        if steps:
            ratios.append(step / steps[-1] if steps[-1] > 0 else 0.0)
        steps.append(step)
        if step <= tol:
            converged = True
            break
        if len(ratios) >= 2 and ratios[-1] >= stall_ratio:
            raise ContractionStall(f"outer iteration stalled at step ratio {ratios[-1]:.3f}",
                                   ratios[-1])
    state = IterationState(f, k, steps, ratios, phases, converged)
    lift = setup.field.coeffs
    shock = KineticShock(setup.grid, lift + setup.f_perp + f, setup.profile.frame, lift,
                         setup.f_perp, f,
                         {"epsilon": setup.epsilon, "N": setup.tensor.index_set.N,
                          "kappa": setup.kappa, "eta": setup.eta, "tol": tol,
                          "max_iter": max_iter})
    return state, shock


@dataclass
class ResidualReport:
    travelling_residual: float        # max interior |(A - s) F' - Q(F, F)|
    travelling_residual_viscous: float  # same with the -eta f'' term included
    flux_variation: float             # max spread of P (A - s) F over nodes
    flux_variation_viscous: float     # spread of P (A - s) F - eta P f'
    boundary_distance: tuple
    f_perp_norm: float
    correction_norm: float            # |F - M| in H^2_eps H^1
    per_node: np.ndarray = field(repr=False, default=None)


def residual(shock, setup, skip=4):
    """Travelling-wave residual, flux constancy, endpoint distances and norms."""
    tensor, kappa = setup.tensor, setup.kappa
    iset = tensor.index_set
    s = shock.frame.speed
    grid = shock.grid
    h = grid[1] - grid[0]
    A = hs.xi1_matrix(iset) - s * np.eye(iset.dim)
    E = hs.macro_vectors(iset)
    dF = _dx(shock.F, grid)
    Q = cc.apply_Q(tensor, kappa, shock.F, shock.F)
    r = dF @ A.T - Q
    rv = r - setup.eta * ns.fd_second_derivative(shock.f, h)
    per = np.linalg.norm(r, axis=1)
    flux = shock.F @ A.T @ E.T
    fluxv = flux - setup.eta * _dx(shock.f, grid) @ E.T
    spread = lambda a: float(np.max(a.max(axis=0) - a.min(axis=0)))
    ends = []
    for i, v in ((0, shock.frame.v_minus), (-1, shock.frame.v_plus)):
        Mv = cc.discretized_maxwellian(tensor, kappa, hs.macro_from_hydro(np.asarray(v.array))).coeffs
        ends.append(float(np.abs(shock.F[i] - Mv).max()))
    inner = slice(skip, len(grid) - skip)
    return ResidualReport(float(per[inner].max()), float(np.linalg.norm(rv, axis=1)[inner].max()),
                          spread(flux), spread(fluxv), tuple(ends),
                          _norm(setup, shock.f_perp), _norm(setup, shock.F - shock.lift), per)
