"""Symmetric Hermite basis of velocity space.

The basis functions are psi_alpha = h_alpha(xi) Mref(xi), where Mref is the
standard Maxwellian and h_alpha = prod_i He_{alpha_i}(xi_i)/sqrt(alpha_i!) are
normalized probabilists' Hermite polynomials.  They are orthonormal in the
weighted space H0 with <f, g> = int f g / Mref.  Only multi-indices with
alpha_2, alpha_3 even are kept (reflection symmetry in xi_2 and xi_3).
"""
from dataclasses import dataclass, field
from functools import lru_cache
from math import factorial, sqrt

import numpy as np

from .errors import DegreeTooSmall, DimensionMismatch, IncompatibleSets

SQRT6 = sqrt(6.0)
MREF0 = (2 * np.pi) ** -1.5


@dataclass(frozen=True)
class HermiteIndexSet:
    N: int
    indices: np.ndarray = field(repr=False)

    @property
    def dim(self):
        return len(self.indices)

    @property
    def degrees(self):
        return self.indices.sum(axis=1)

    def position(self, alpha):
        key = tuple(int(a) for a in alpha)
        return _positions(self.N)[key]

    def __contains__(self, alpha):
        return tuple(int(a) for a in alpha) in _positions(self.N)

    def __eq__(self, other):
        return isinstance(other, HermiteIndexSet) and self.N == other.N

    def __hash__(self):
        return hash(("HermiteIndexSet", self.N))


@lru_cache(maxsize=None)
def _index_array(N):
    idx = [(a1, a2, a3)
           for a1 in range(N + 1) for a2 in range(0, N + 1, 2) for a3 in range(0, N + 1, 2)
           if a1 + a2 + a3 <= N]
    idx.sort(key=lambda a: (sum(a), a))
    arr = np.array(idx, dtype=np.int64)
    arr.setflags(write=False)
    return arr


@lru_cache(maxsize=None)
def _positions(N):
    return {tuple(int(x) for x in a): i for i, a in enumerate(_index_array(N))}


def build_index_set(N):
    """All alpha with |alpha| <= N and alpha_2, alpha_3 even, sorted by (|alpha|, alpha)."""
    N = int(N)
    if N < 2:
        raise DegreeTooSmall(f"N={N}: the hydrodynamic space needs N >= 2")
    return HermiteIndexSet(N, _index_array(N))


# ---------------------------------------------------------------------------
# pointwise evaluation

def hermite_1d(n_max, x):
    """Normalized probabilists' Hermite polynomials h_0..h_{n_max} at x.

    Returns an array of shape (n_max + 1,) + x.shape.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty((n_max + 1,) + x.shape)
    out[0] = 1.0
    if n_max >= 1:
        out[1] = x
    for n in range(1, n_max):
        out[n + 1] = (x * out[n] - sqrt(n) * out[n - 1]) / sqrt(n + 1)
    return out


def mref(xi):
    xi = np.asarray(xi, dtype=float)
    return MREF0 * np.exp(-0.5 * np.sum(xi**2, axis=-1))


def eval_poly(index_set, xi):
    """h_alpha(xi) for every alpha in the set; shape xi.shape[:-1] + (dim,)."""
    xi = np.asarray(xi, dtype=float)
    N = index_set.N
    h = [hermite_1d(N, xi[..., k]) for k in range(3)]
    a = index_set.indices
    vals = h[0][a[:, 0]] * h[1][a[:, 1]] * h[2][a[:, 2]]
    return np.moveaxis(vals, 0, -1)


def eval_basis(alpha, xi):
    """psi_alpha(xi) = h_alpha(xi) Mref(xi)."""
    xi = np.asarray(xi, dtype=float)
    alpha = tuple(int(a) for a in alpha)
    n = max(alpha)
    val = np.ones(xi.shape[:-1])
    for k in range(3):
        val = val * hermite_1d(n, xi[..., k])[alpha[k]]
    return val * mref(xi)


def evaluate(coeffs, index_set, xi):
    """f(xi) for f = sum c_alpha psi_alpha."""
    return eval_poly(index_set, xi) @ np.asarray(coeffs) * mref(xi)


# ---------------------------------------------------------------------------
# quadrature

@lru_cache(maxsize=None)
def gauss_hermite_1d(order):
    """Nodes/weights for expectations under the standard normal density."""
    x, w = np.polynomial.hermite.hermgauss(order)
    return np.sqrt(2.0) * x, w / np.sqrt(np.pi)


def gauss_hermite_3d(order):
    """Tensor rule: sum w g(x) = int g Mref dxi, exact for degree <= 2*order-1."""
    x, w = gauss_hermite_1d(order)
    X = np.stack(np.meshgrid(x, x, x, indexing="ij"), axis=-1).reshape(-1, 3)
    W = (w[:, None, None] * w[None, :, None] * w[None, None, :]).ravel()
    return X, W


def default_order(N):
    return 2 * N + 4


def h0_inner(f_vals, g_vals, weights):
    """<f, g>_H0 from values of f/Mref and g/Mref at a gauss_hermite_3d rule."""
    return np.sum(weights * f_vals * g_vals)


def gram_matrix(index_set, order=None):
    X, W = gauss_hermite_3d(order or default_order(index_set.N))
    H = eval_poly(index_set, X)
    return (H * W[:, None]).T @ H


# ---------------------------------------------------------------------------
# coefficient-space operations

def project(coeffs, source, target):
    """Orthogonal projection Pi_N: truncation from a larger set to a smaller one."""
    coeffs = np.asarray(coeffs)
    if coeffs.shape[-1] != source.dim:
        raise DimensionMismatch("coefficient length does not match the source set")
    if target.N > source.N:
        raise IncompatibleSets(f"target N={target.N} exceeds source N={source.N}")
    return coeffs[..., :target.dim].copy()


def embed(coeffs, source, target):
    """Zero-padding from a smaller set into a larger one."""
    coeffs = np.asarray(coeffs)
    if target.N < source.N:
        raise IncompatibleSets("target smaller than source")
    out = np.zeros(coeffs.shape[:-1] + (target.dim,))
    out[..., :source.dim] = coeffs
    return out


def oscillator_norm(coeffs, index_set, ell):
    w = (index_set.degrees + 1.5) ** ell
    return float(np.linalg.norm(np.asarray(coeffs) * w))


@lru_cache(maxsize=None)
def _macro_vectors(N):
    iset = build_index_set(N)
    E = np.zeros((3, iset.dim))
    E[0, iset.position((0, 0, 0))] = 1.0
    E[1, iset.position((1, 0, 0))] = 1.0
    for a in [(2, 0, 0), (0, 2, 0), (0, 0, 2)]:
        E[2, iset.position(a)] = 1.0 / sqrt(3.0)
    E.setflags(write=False)
    return E


def macro_vectors(index_set):
    """Rows are the coefficients of psi_0 = Mref, psi_1 = xi_1 Mref, psi_2 = (|xi|^2-3)Mref/sqrt6."""
    if index_set.N < 2:
        raise DegreeTooSmall("macro space needs N >= 2")
    return _macro_vectors(index_set.N)


@lru_cache(maxsize=None)
def _frame(N):
    # Gram-Schmidt of the unit vectors against the macro rows, in index order
    cols = [row for row in _macro_vectors(N)]
    for j in range(len(cols[0])):
        v = np.zeros(len(cols[0]))
        v[j] = 1.0
        for _ in range(2):
            B = np.array(cols)
            v = v - B.T @ (B @ v)
        nv = np.linalg.norm(v)
        if nv > 1e-8:
            cols.append(v / nv)
    Q = np.array(cols).T
    Q.setflags(write=False)
    return Q


def frame(index_set):
    """Orthogonal matrix whose first three columns span the macro space."""
    return _frame(index_set.N)


def micro_basis(index_set):
    """Orthonormal basis (dim x r) of the microscopic complement inside H_N."""
    return frame(index_set)[:, 3:]


def macro_split(coeffs, index_set):
    """Return (macro coordinates a, micro part) with f = lift(a) + micro."""
    coeffs = np.asarray(coeffs, dtype=float)
    E = macro_vectors(index_set)
    a = coeffs @ E.T
    return a, coeffs - a @ E


def lift_macro(a, index_set):
    return np.asarray(a) @ macro_vectors(index_set)


def macro_projector(index_set):
    E = macro_vectors(index_set)
    return E.T @ E


def xi1_matrix(index_set):
    """Matrix of Pi_N xi_1 Pi_N from xi h_n = sqrt(n+1) h_{n+1} + sqrt(n) h_{n-1}."""
    dim = index_set.dim
    A = np.zeros((dim, dim))
    for j, a in enumerate(index_set.indices):
        up = (a[0] + 1, a[1], a[2])
        if up in index_set:
            A[index_set.position(up), j] = sqrt(a[0] + 1)
        if a[0] > 0:
            A[index_set.position((a[0] - 1, a[1], a[2])), j] = sqrt(a[0])
    return A


# ---------------------------------------------------------------------------
# Maxwellians

def gaussian_hermite_moments(n_max, mean, var):
    """m_n = E[He_n(mean + sqrt(var) Z)] for n = 0..n_max (unnormalized He_n)."""
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(var, dtype=float)
    m = np.empty((n_max + 1,) + np.broadcast(mean, var).shape)
    m[0] = 1.0
    if n_max >= 1:
        m[1] = mean
    for n in range(2, n_max + 1):
        m[n] = mean * m[n - 1] + (var - 1.0) * (n - 1) * m[n - 2]
    return m


@lru_cache(maxsize=None)
def _inv_sqrt_fact(N):
    a = _index_array(N)
    f = np.array([sqrt(factorial(x) * factorial(y) * factorial(z)) for x, y, z in a])
    return 1.0 / f


def maxwellian_coeffs(index_set, v):
    """Coefficients of Pi_N M_V for V = (rho, u, T); vectorized over leading axes."""
    v = np.asarray(v, dtype=float)
    rho, u, T = v[..., 0], v[..., 1], v[..., 2]
    N = index_set.N
    mu = gaussian_hermite_moments(N, u, T)
    m0 = gaussian_hermite_moments(N, np.zeros_like(T), T)
    a = index_set.indices
    c = rho * mu[a[:, 0]] * m0[a[:, 1]] * m0[a[:, 2]]
    return np.moveaxis(c, 0, -1) * _inv_sqrt_fact(N)


def maxwellian_jacobian(index_set, v):
    """d(coeffs of Pi_N M_V)/d(rho, u, T), shape (dim, 3).

    Uses d/dmean m_n = n m_{n-1} and d/dvar m_n = n(n-1)/2 m_{n-2}.
    """
    rho, u, T = np.asarray(v, dtype=float)
    N = index_set.N
    mu = gaussian_hermite_moments(N, u, T)
    m0 = gaussian_hermite_moments(N, 0.0, T)
    n = np.arange(N + 1)

    def shift(m, k):
        out = np.zeros_like(m)
        out[k:] = m[:len(m) - k]
        return out

    dmu_du = n * shift(mu, 1)
    dmu_dT = 0.5 * n * (n - 1) * shift(mu, 2)
    dm0_dT = 0.5 * n * (n - 1) * shift(m0, 2)
    a = index_set.indices
    p1, p2, p3 = mu[a[:, 0]], m0[a[:, 1]], m0[a[:, 2]]
    s = _inv_sqrt_fact(N)
    d_rho = p1 * p2 * p3 * s
    d_u = rho * dmu_du[a[:, 0]] * p2 * p3 * s
    d_T = rho * (dmu_dT[a[:, 0]] * p2 * p3 + p1 * dm0_dT[a[:, 1]] * p3
                 + p1 * p2 * dm0_dT[a[:, 2]]) * s
    return np.column_stack([d_rho, d_u, d_T])


def macro_from_hydro(v):
    """Orthonormal macro coordinates (rho, rho u, (2E - 3 rho)/sqrt6)."""
    v = np.asarray(v, dtype=float)
    rho, u, T = v[..., 0], v[..., 1], v[..., 2]
    E = 0.5 * rho * u**2 + 1.5 * rho * T
    return np.stack([rho, rho * u, (2 * E - 3 * rho) / SQRT6], axis=-1)


def hydro_from_macro(a):
    a = np.asarray(a, dtype=float)
    rho, m = a[..., 0], a[..., 1]
    E = (SQRT6 * a[..., 2] + 3 * rho) / 2
    u = m / rho
    T = (E - 0.5 * rho * u**2) / (1.5 * rho)
    return np.stack([rho, u, T], axis=-1)


def macro_hydro_jacobian(v):
    """d(macro coordinates)/d(rho, u, T)."""
    rho, u, T = np.asarray(v, dtype=float)
    return np.array([[1.0, 0.0, 0.0],
                     [u, rho, 0.0],
                     [(u**2 + 3 * T - 3) / SQRT6, 2 * rho * u / SQRT6, 3 * rho / SQRT6]])


def conserved_from_macro_matrix():
    """Linear map from macro coordinates to (rho, m, E)."""
    return np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.5, 0.0, SQRT6 / 2]])


# ---------------------------------------------------------------------------
# proxy norm

def hh1_proxy_norm(coeffs, index_set, gamma, s, order=None):
    """|| <xi>^{gamma/2+s} f / Mref^{1/2} ||_{L2} by Gauss-Hermite quadrature."""
    order = order or max(40, 2 * index_set.N + 20)
    X, W = gauss_hermite_3d(order)
    h = eval_poly(index_set, X) @ np.asarray(coeffs, dtype=float)
    weight = (1.0 + np.sum(X**2, axis=1)) ** (gamma / 2 + s)
    return float(np.sqrt(np.sum(W * weight * h**2)))
