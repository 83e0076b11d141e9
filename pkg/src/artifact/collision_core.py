"""Galerkin collision tensor for the non-cutoff kernel and derived operators.

The kernel is B = |v|^gamma b(cos theta) with b(cos theta) sin theta =
c_b theta^{-1-2s} on (0, pi/2].  Entries are computed from the symmetrized
weak form

    T_gab = 1/2 int int int B psi_a(xi_*) psi_b(xi)
            [h_g(xi') + h_g(xi_*') - h_g(xi) - h_g(xi_*)] dsigma dxi_* dxi,

which equals the symmetric part (in a, b) of <Q(psi_a, psi_b), psi_g>.  It
gives the same Q(F, F) and the same linearized operator as the plain weak
form, and conserves mass, momentum and energy for every pair (g, f).

Production route: centre of mass / relative velocity coordinates
xi = V + v/2, xi_* = V - v/2, Gauss rules in |V|, |v| and the direction of v,
and the angular sigma integral by the Funk-Hecke formula.  The integrand is a
polynomial in every variable, so the rules below are exact apart from the
scalar eigenvalues lambda_l of the angular kernel.  The graded-theta route
integrates sigma directly and serves as an independent check.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from math import ceil, pi
import hashlib
import struct

import mpmath
import numpy as np
from scipy import integrate, special
from threadpoolctl import threadpool_limits

from . import hermite_spectral as hs
from .errors import (CacheError, DimensionMismatch, EigSolverFailure, NewtonDivergence,
                     QuadratureConfigInvalid, SingularMicroBlock, ValidationError)


@dataclass(frozen=True)
class KernelParams:
    gamma: float
    s: float
    kappa: float = 0.0
    c_b: float = 1.0

    def __post_init__(self):
        problems = []
        if not 0 < self.gamma < 1:
            problems.append(f"gamma={self.gamma} outside (0, 1)")
        if not 0 < self.s < 0.5:
            problems.append(f"s={self.s} outside (0, 1/2)")
        if self.kappa < 0:
            problems.append(f"kappa={self.kappa} negative")
        if self.c_b <= 0:
            problems.append(f"c_b={self.c_b} not positive")
        if problems:
            raise ValidationError("invalid kernel parameters: " + "; ".join(problems), problems)

    @classmethod
    def unchecked(cls, gamma, s, kappa=0.0, c_b=1.0):
        """Bypass the hard-potential range check (used for Maxwell-molecule oracles)."""
        obj = object.__new__(cls)
        for k, v in dict(gamma=gamma, s=s, kappa=kappa, c_b=c_b).items():
            object.__setattr__(obj, k, float(v))
        return obj


def p10_params(kappa=0.0):
    """Inverse power law p = 10: s = 1/(p-1), gamma = (p-5)/(p-1)."""
    return KernelParams(gamma=5 / 9, s=1 / 9, kappa=kappa)


# ---------------------------------------------------------------------------
# quadrature rules

@dataclass(frozen=True)
class QuadConfig:
    """Rule sizes.  ``v_order``: Gauss-Hermite nodes per axis for the centre of
    mass; ``r_order``: radial nodes; ``dir_t``/``dir_phi``: direction of v;
    ``sig_t``/``sig_phi``: the sigma sphere (Funk-Hecke route);
    ``levels``/``per_level``/``azimuth``: the graded theta rule."""
    v_order: int
    r_order: int
    dir_t: int
    dir_phi: int
    sig_t: int
    sig_phi: int
    levels: int = 6
    per_level: int = 4
    azimuth: int = 12

    @classmethod
    def default(cls, N):
        n = ceil((3 * N + 1) / 2)
        return cls(v_order=n, r_order=n, dir_t=n, dir_phi=3 * N + 1,
                   sig_t=N + 1, sig_phi=2 * N + 1)

    def doubled(self):
        return replace(self, v_order=2 * self.v_order, r_order=2 * self.r_order,
                       dir_t=2 * self.dir_t, dir_phi=2 * self.dir_phi, sig_t=2 * self.sig_t,
                       sig_phi=2 * self.sig_phi, levels=2 * self.levels,
                       per_level=2 * self.per_level, azimuth=2 * self.azimuth)

    def as_tuple(self):
        return (self.v_order, self.r_order, self.dir_t, self.dir_phi, self.sig_t,
                self.sig_phi, self.levels, self.per_level, self.azimuth)

    def validate(self, N):
        need = QuadConfig.default(N)
        problems = [f"{k}={getattr(self, k)} < {getattr(need, k)}"
                    for k in ("v_order", "r_order", "dir_t", "dir_phi", "sig_t", "sig_phi")
                    if getattr(self, k) < getattr(need, k)]
        if self.levels < 1 or self.per_level < 1 or self.azimuth < N + 1:
            problems.append("graded theta rule too small")
        if problems:
            raise QuadratureConfigInvalid("quadrature below exactness minimum: "
                                          + "; ".join(problems), problems)


@lru_cache(maxsize=None)
def radial_rule(n, power):
    """Gauss rule for int_0^inf r^power exp(-r^2/4) F(r) dr (Golub-Welsch).

    Moments are 2^(k+power) Gamma((k+power+1)/2); the Cholesky factor of the
    Hankel matrix is taken in extended precision.
    """
    with mpmath.workdps(120):
        p = mpmath.mpf(power)
        mom = [mpmath.power(2, k + p) * mpmath.gamma((k + p + 1) / 2) for k in range(2 * n + 1)]
        H = mpmath.matrix(n + 1, n + 1)
        for i in range(n + 1):
            for j in range(n + 1):
                H[i, j] = mom[i + j]
        R = mpmath.cholesky(H).T
        alpha = [R[k, k + 1] / R[k, k] - (R[k - 1, k] / R[k - 1, k - 1] if k else 0)
                 for k in range(n)]
        beta = [R[k + 1, k + 1] / R[k, k] for k in range(n - 1)]
        J = np.diag([float(a) for a in alpha]) + np.diag([float(b) for b in beta], 1) \
            + np.diag([float(b) for b in beta], -1)
        mu0 = float(mom[0])
    x, vec = np.linalg.eigh(J)
    return x, mu0 * vec[0] ** 2


@lru_cache(maxsize=None)
def sphere_rule(n_t, n_phi):
    """Gauss-Legendre in cos(theta) times uniform azimuth; weights sum to 4 pi."""
    t, wt = np.polynomial.legendre.leggauss(n_t)
    phi = 2 * pi * (np.arange(n_phi) + 0.5) / n_phi
    st = np.sqrt(1 - t**2)
    pts = np.stack([st[:, None] * np.cos(phi)[None, :], st[:, None] * np.sin(phi)[None, :],
                    np.broadcast_to(t[:, None], (n_t, n_phi))], axis=-1).reshape(-1, 3)
    w = np.repeat(wt * 2 * pi / n_phi, n_phi)
    return pts, w


def _legendre_minus_one_over_theta2(l, theta):
    """(P_l(cos theta) - 1)/theta^2 without cancellation.

    P_l(1 - 2x) = 2F1(-l, l+1; 1; x) with x = sin^2(theta/2).
    """
    theta = np.asarray(theta, dtype=float)
    x = np.sin(theta / 2) ** 2
    ratio = np.where(theta > 0, np.sin(theta / 2) / np.where(theta > 0, theta, 1.0), 0.5) ** 2
    total = np.zeros_like(theta)
    coef = 1.0
    xp = np.ones_like(theta)  # x^(k-1)
    for k in range(1, l + 1):
        coef *= (-l + k - 1) * (l + k) / k**2
        total += coef * xp
        xp = xp * x
    return total * ratio


@lru_cache(maxsize=None)
def angular_eigenvalue_shift(l, s, c_b=1.0):
    """lambda_l - lambda_0 = 2 pi c_b int_0^{pi/2} theta^{-1-2s} (P_l(cos theta) - 1) dtheta."""
    if l == 0:
        return 0.0
    val, err = integrate.quad(lambda t: _legendre_minus_one_over_theta2(l, t), 0.0, pi / 2,
                              weight="alg", wvar=(1 - 2 * s, 0.0), epsabs=1e-15, epsrel=1e-14,
                              limit=200)
    return 2 * pi * c_b * val


@lru_cache(maxsize=None)
def graded_theta_rule(s, levels, per_level):
    """Nodes/weights with sum w G(theta) ~ int_0^{pi/2} theta^{-1-2s} G(theta) dtheta
    for G(theta) = O(theta^2).  Dyadic intervals [pi/2^(k+1), pi/2^k] use
    Gauss-Legendre; the innermost [0, pi/2^levels] uses Gauss-Jacobi with weight
    theta^{1-2s} applied to G/theta^2."""
    nodes, weights = [], []
    x, w = np.polynomial.legendre.leggauss(per_level)
    for k in range(1, levels):
        a, b = pi / 2 ** (k + 1), pi / 2**k
        th = a + (b - a) * (x + 1) / 2
        nodes.append(th)
        weights.append(w * (b - a) / 2 * th ** (-1 - 2 * s))
    a = pi / 2**levels
    beta = 1 - 2 * s
    xj, wj = special.roots_jacobi(per_level, 0.0, beta)
    th = a * (1 + xj) / 2
    nodes.append(th)
    weights.append(wj * (a / 2) ** (beta + 1) / th**2)
    return np.concatenate(nodes), np.concatenate(weights)


def funk_hecke_kernel(N, s, c_b, t):
    """K(t) = sum_{even 2<=l<=N} (lambda_l - lambda_0) (2l+1)/(4 pi) P_l(t)."""
    out = np.zeros_like(np.asarray(t, dtype=float))
    for l in range(2, N + 1, 2):
        out += angular_eigenvalue_shift(l, s, c_b) * (2 * l + 1) / (4 * pi) \
            * special.eval_legendre(l, t)
    return out


# ---------------------------------------------------------------------------
# tensor

@dataclass
class CollisionTensor:
    index_set: hs.HermiteIndexSet
    gamma: float
    s: float
    c_b: float
    main: np.ndarray
    lift: np.ndarray
    quad: QuadConfig
    meta: dict = field(default_factory=dict)

    def combined(self, kappa):
        if kappa == 0:
            return self.main
        return self.main + kappa * self.lift

    @property
    def dim(self):
        return self.index_set.dim


def _sigma_integrals_fh(index_set, V, r, s, c_b, q, dirs):
    """S_g(V, r, vhat) by Funk-Hecke.  V: (cv, 3), r: (nr,), dirs: (nd, 3)."""
    sig, wsig = sphere_rule(q.sig_t, q.sig_phi)
    Kmat = funk_hecke_kernel(index_set.N, s, c_b, dirs @ sig.T) * wsig[None, :]
    disp = 0.5 * r[:, None, None] * sig[None, :, :]  # (nr, ns, 3)
    pts = V[:, None, None, :] + disp[None]
    G = hs.eval_poly(index_set, pts) + hs.eval_poly(index_set, V[:, None, None, :] - disp[None])
    return np.einsum("ks,vrsg->vrkg", Kmat, G, optimize=False)


def _sigma_integrals_graded(index_set, V, r, s, c_b, q, dirs):
    """S_g(V, r, vhat) by direct sigma quadrature on the graded theta rule."""
    th, wth = graded_theta_rule(s, q.levels, q.per_level)
    phi = 2 * pi * np.arange(q.azimuth) / q.azimuth
    # orthonormal frame (e1, e2) perpendicular to each direction
    helper = np.where(np.abs(dirs[:, 2:3]) < 0.9, np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0]))
    e1 = np.cross(dirs, helper)
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(dirs, e1)
    ring = np.cos(phi)[:, None, None] * e1[None] + np.sin(phi)[:, None, None] * e2[None]  # (nphi, nd, 3)
    sig = np.cos(th)[:, None, None, None] * dirs[None, None] \
        + np.sin(th)[:, None, None, None] * ring[None]  # (nth, nphi, nd, 3)
    out = np.zeros((len(V), len(r), len(dirs), index_set.dim))
    wphi = 2 * pi / q.azimuth
    for i, rr in enumerate(r):
        disp = 0.5 * rr * sig
        for v_idx in range(len(V)):
            Vp = V[v_idx]
            g = hs.eval_poly(index_set, Vp + disp) + hs.eval_poly(index_set, Vp - disp)
            g0 = hs.eval_poly(index_set, Vp + 0.5 * rr * dirs) + hs.eval_poly(index_set, Vp - 0.5 * rr * dirs)
            diff = g.sum(axis=1) * wphi - q.azimuth * wphi * g0[None]
            out[v_idx, i] = c_b * np.einsum("t,tkg->kg", wth, diff, optimize=False)
    return out


def _chunk_contribution(index_set, Vn, wV, r, wr, dirs, wd, s, c_b, q, route):
    sigma = _sigma_integrals_fh if route == "funk_hecke" else _sigma_integrals_graded
    S = sigma(index_set, Vn, r, s, c_b, q, dirs)  # (cv, nr, nd, dim)
    rel = 0.5 * r[:, None, None] * dirs[None, :, :]  # (nr, nd, 3)
    Hb = hs.eval_poly(index_set, Vn[:, None, None, :] + rel[None])  # psi_b at xi
    Ha = hs.eval_poly(index_set, Vn[:, None, None, :] - rel[None])  # psi_a at xi_*
    W = wV[:, None, None] * wr[None, :, None] * wd[None, None, :]
    dim = index_set.dim
    Ha = (Ha * W[..., None]).reshape(-1, dim)
    Hb = Hb.reshape(-1, dim)
    S = S.reshape(-1, dim)
    Z = Ha[:, :, None] * S[:, None, :]  # (p, a, g)
    return np.tensordot(Z, Hb, axes=(0, 0)).transpose(1, 0, 2)  # (g, a, b)


def _assemble_part(index_set, radial_power, s, c_b, q, route, threads, chunk):
    x, w = np.polynomial.hermite.hermgauss(q.v_order)
    V = np.stack(np.meshgrid(x, x, x, indexing="ij"), axis=-1).reshape(-1, 3)
    wV = (w[:, None, None] * w[None, :, None] * w[None, None, :]).ravel()
    r, wr = radial_rule(q.r_order, radial_power)
    dirs, wd = sphere_rule(q.dir_t, q.dir_phi)
    starts = list(range(0, len(V), chunk))

    def work(i0):
        sl = slice(i0, i0 + chunk)
        return _chunk_contribution(index_set, V[sl], wV[sl], r, wr, dirs, wd, s, c_b, q, route)

    with threadpool_limits(1):
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as ex:
                parts = list(ex.map(work, starts))
        else:
            parts = [work(i0) for i0 in starts]
    total = np.zeros((index_set.dim,) * 3)
    for p in parts:  # fixed order reduction
        total += p
    return total * 0.5 * (2 * pi) ** -3


def assemble_tensor(index_set, params, quad=None, route="funk_hecke", threads=1,
                    chunk=None, refine_check=False, include_lift=True):
    """Main tensor (kernel |v|^gamma b) and lift tensor (kernel |v|^{2-2s} b).

    ``route`` is "funk_hecke" (production) or "graded" (direct sigma rule).
    With ``refine_check`` the assembly is repeated at doubled orders and the
    maximum relative change is stored in ``meta['refinement_error']``.
    """
    if route not in ("funk_hecke", "graded"):
        raise QuadratureConfigInvalid(f"unknown route {route!r}")
    quad = quad or QuadConfig.default(index_set.N)
    quad.validate(index_set.N)
    if chunk is None:
        chunk = max(1, min(64, 4096 // max(1, quad.r_order * quad.dir_t * quad.dir_phi // 8)))
    main = _assemble_part(index_set, 2 + params.gamma, params.s, params.c_b, quad, route, threads, chunk)
    lift = (_assemble_part(index_set, 4 - 2 * params.s, params.s, params.c_b, quad, route, threads, chunk)
            if include_lift else np.zeros_like(main))
    t = CollisionTensor(index_set, params.gamma, params.s, params.c_b, main, lift, quad,
                        meta={"route": route})
    if refine_check:
        fine = assemble_tensor(index_set, params, quad.doubled(), route, threads, chunk,
                               include_lift=include_lift)
        scale = max(np.abs(main).max(), 1e-300)
        t.meta["refinement_error"] = float(max(np.abs(fine.main - main).max() / scale,
                                               np.abs(fine.lift - lift).max()
                                               / max(np.abs(lift).max(), 1e-300)
                                               if include_lift else 0.0))
    return t


# ---------------------------------------------------------------------------
# operators

def _check(tensor, *vecs):
    for v in vecs:
        if np.shape(v)[-1] != tensor.dim:
            raise DimensionMismatch(f"vector length {np.shape(v)[-1]} != tensor dim {tensor.dim}")


def apply_Q(tensor, kappa, g, f):
    """(Q_kappa(g, f))_g = sum_ab (T0 + kappa T1)_gab g_a f_b; vectorized over leading axes."""
    _check(tensor, g, f)
    T = tensor.combined(kappa)
    return np.einsum("gab,...a,...b->...g", T, g, f, optimize=False)


def linearized_matrix(tensor, kappa, background):
    """Matrix of f -> Q(bg, f) + Q(f, bg); vectorized over leading axes of bg."""
    _check(tensor, background)
    T = tensor.combined(kappa)
    Ts = T + T.transpose(0, 2, 1)
    return np.einsum("gab,...a->...gb", Ts, background, optimize=False)


def linearization_basis(tensor, kappa):
    """Matrices L_a with L(bg) = sum_a bg_a L_a (linear in the background)."""
    T = tensor.combined(kappa)
    return (T + T.transpose(0, 2, 1)).transpose(1, 0, 2).copy()


@dataclass
class DiscretizedMaxwellian:
    coeffs: np.ndarray
    macro: np.ndarray
    newton_residual: float
    iterations: int


def _newton_system(tensor, kappa, f, macro):
    iset = tensor.index_set
    E = hs.macro_vectors(iset)
    Vm = hs.micro_basis(iset)
    res = np.concatenate([E @ f - macro, Vm.T @ apply_Q(tensor, kappa, f, f)])
    jac = np.vstack([E, Vm.T @ linearized_matrix(tensor, kappa, f)])
    return res, jac


def discretized_maxwellian(tensor, kappa, macro, tol=1e-11, max_iter=30):
    """Newton solve of (P f - macro, (I-P) Q_kappa(f, f)) = 0 from Pi_N M."""
    macro = np.asarray(macro, dtype=float)
    f = hs.maxwellian_coeffs(tensor.index_set, hs.hydro_from_macro(macro))
    hist = []
    for it in range(max_iter + 1):
        res, jac = _newton_system(tensor, kappa, f, macro)
        hist.append(float(np.max(np.abs(res))))
        if hist[-1] <= tol:
            return DiscretizedMaxwellian(f, macro, hist[-1], it)
        if it == max_iter:
            break
        f = f - np.linalg.solve(jac, res)
    raise NewtonDivergence("discretized Maxwellian Newton did not converge", hist)


def discretized_maxwellian_jacobian(tensor, kappa, coeffs):
    """dM/d(macro) at a discretized Maxwellian: [P; (I-P) L_M]^{-1} [I; 0]."""
    iset = tensor.index_set
    E = hs.macro_vectors(iset)
    Vm = hs.micro_basis(iset)
    jac = np.vstack([E, Vm.T @ linearized_matrix(tensor, kappa, coeffs)])
    rhs = np.zeros((iset.dim, 3))
    rhs[:3] = np.eye(3)
    return np.linalg.solve(jac, rhs)


@dataclass
class GapReport:
    kernel_dim: int
    delta0: float
    kernel_angle: float
    singular_values: np.ndarray
    micro_eigs: np.ndarray


def principal_angle(A, B):
    """Largest principal angle between column spaces of A and B."""
    qa, _ = np.linalg.qr(A)
    qb, _ = np.linalg.qr(B)
    resid = qa - qb @ (qb.T @ qa)
    return float(np.arcsin(min(1.0, np.linalg.norm(resid, 2))))


def spectral_gap(L, index_set, kernel_tol=1e-7):
    """Kernel dimension, kernel angle to the macro space, and delta_0.

    delta_0 is the smallest eigenvalue of -sym(L) restricted to the
    microscopic subspace (H0 metric).
    """
    L = np.asarray(L)
    if L.shape != (index_set.dim, index_set.dim):
        raise DimensionMismatch("L does not match the index set")
    try:
        _, sv, vt = np.linalg.svd(L)
        Vm = hs.micro_basis(index_set)
        eigs = np.linalg.eigvalsh(-Vm.T @ (0.5 * (L + L.T)) @ Vm)
    except np.linalg.LinAlgError as exc:
        raise EigSolverFailure(str(exc)) from exc
    kdim = int(np.sum(sv <= kernel_tol * max(1.0, sv[0])))
    kern = vt[-3:].T
    angle = principal_angle(kern, hs.macro_vectors(index_set).T)
    return GapReport(kdim, float(eigs.min()), angle, sv, eigs)


def micro_solve(L, rhs, index_set):
    """Solve L x = rhs with x, rhs microscopic (restricted micro block)."""
    Vm = hs.micro_basis(index_set)
    B = Vm.T @ L @ Vm
    try:
        y = np.linalg.solve(B, Vm.T @ np.asarray(rhs))
    except np.linalg.LinAlgError as exc:
        raise SingularMicroBlock(str(exc)) from exc
    if not np.all(np.isfinite(y)):
        raise SingularMicroBlock("non-finite micro solve")
    return Vm @ y


# ---------------------------------------------------------------------------
# cache file

MAGIC = b"KSHK"
CACHE_VERSION = 1


def _checksum(payload):
    return struct.unpack("<Q", hashlib.blake2b(payload, digest_size=8).digest())[0]


def save_tensor(path, tensor):
    q = tensor.quad.as_tuple()
    head = MAGIC + struct.pack("<I", CACHE_VERSION)
    head += struct.pack("<4d", float(tensor.index_set.N), tensor.gamma, tensor.s, tensor.c_b)
    head += struct.pack("<I", len(q)) + struct.pack(f"<{len(q)}I", *q)
    payload = head + np.ascontiguousarray(tensor.main, dtype="<f8").tobytes() \
        + np.ascontiguousarray(tensor.lift, dtype="<f8").tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(payload + struct.pack("<Q", _checksum(payload)))
    except OSError as exc:
        raise CacheError(f"cannot write tensor cache {path}: {exc}") from exc


def load_tensor(path, N=None, gamma=None, s=None, quad=None, c_b=None):
    """Read a cache file; raise CacheError on corruption or parameter mismatch."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CacheError(f"cannot read tensor cache {path}: {exc}") from exc
    if len(blob) < 48 or blob[:4] != MAGIC:
        raise CacheError("not a tensor cache file")
    payload, tail = blob[:-8], blob[-8:]
    if struct.unpack("<Q", tail)[0] != _checksum(payload):
        raise CacheError("checksum mismatch")
    (version,) = struct.unpack_from("<I", payload, 4)
    if version != CACHE_VERSION:
        raise CacheError(f"unsupported cache version {version}")
    Nf, g, ss, cb = struct.unpack_from("<4d", payload, 8)
    (nq,) = struct.unpack_from("<I", payload, 40)
    qt = struct.unpack_from(f"<{nq}I", payload, 44)
    off = 44 + 4 * nq
    Nc = int(Nf)
    mism = []
    if N is not None and N != Nc:
        mism.append(f"N {Nc} != {N}")
    if gamma is not None and gamma != g:
        mism.append(f"gamma {g} != {gamma}")
    if s is not None and s != ss:
        mism.append(f"s {ss} != {s}")
    if c_b is not None and c_b != cb:
        mism.append(f"c_b {cb} != {c_b}")
    if quad is not None and tuple(quad.as_tuple()) != tuple(qt):
        mism.append(f"quadrature {qt} != {quad.as_tuple()}")
    if mism:
        raise CacheError("cache parameter mismatch: " + "; ".join(mism))
    iset = hs.build_index_set(Nc)
    n = iset.dim ** 3
    arr = np.frombuffer(payload, dtype="<f8", count=2 * n, offset=off)
    if arr.size != 2 * n or off + 16 * n != len(payload):
        raise CacheError("truncated tensor payload")
    d = iset.dim
    return CollisionTensor(iset, g, ss, cb, arr[:n].reshape(d, d, d).copy(),
                           arr[n:].reshape(d, d, d).copy(), QuadConfig(*qt), {"route": "cache"})
