import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from artifact import chapman_enskog as ce
from artifact import collision_core as cc
from artifact import hermite_spectral as hs
from artifact.errors import (CacheError, DimensionMismatch, QuadratureConfigInvalid,
                             ValidationError)


@pytest.fixture(scope="module")
def tensors(tensor3):
    p = cc.KernelParams(0.5, 0.25)
    return {3: tensor3, 4: cc.assemble_tensor(hs.build_index_set(4), p),
            5: cc.assemble_tensor(hs.build_index_set(5), p)}


def _L(t, kappa):
    return cc.linearized_matrix(t, kappa, ce.reference_background(t.index_set))


def test_kernel_params_validation():
    with pytest.raises(ValidationError) as exc:
        cc.KernelParams(1.5, 0.6)
    assert len(exc.value.problems) == 2


def test_quadrature_below_minimum():
    q = cc.QuadConfig.default(3)
    with pytest.raises(QuadratureConfigInvalid):
        cc.assemble_tensor(hs.build_index_set(3), cc.KernelParams(0.5, 0.25),
                           quad=cc.QuadConfig(1, 1, 1, 1, 1, 1))
    q.validate(3)


def test_maxwell_molecule_eigenvalues():
    # gamma = 0: viscous and heat-flux modes are eigenvectors with closed-form eigenvalues
    iset = hs.build_index_set(3)
    t = cc.assemble_tensor(iset, cc.KernelParams.unchecked(0.0, 0.25), include_lift=False)
    L = _L(t, 0.0)
    Vm = hs.micro_basis(iset)
    eigs = np.sort(np.linalg.eigvals(Vm.T @ L @ Vm).real)
    I2 = float(mpmath.quad(lambda x: x ** -1.5 * mpmath.sin(x) ** 2, [0, mpmath.pi / 2]))
    for lam in (-1.5 * np.pi * I2, -np.pi * I2):
        assert np.min(np.abs(eigs - lam)) <= 1e-10 * abs(lam)


def test_routes_agree(tensor3):
    from dataclasses import replace
    q = replace(cc.QuadConfig.default(3), per_level=8, levels=6, azimuth=8)
    g = cc.assemble_tensor(tensor3.index_set, cc.KernelParams(0.5, 0.25), quad=q, route="graded")
    assert np.abs(g.main - tensor3.main).max() <= 1e-10 * np.abs(tensor3.main).max()
    assert np.abs(g.lift - tensor3.lift).max() <= 1e-10 * np.abs(tensor3.lift).max()


def test_quadrature_self_convergence(tensor3):
    t = cc.assemble_tensor(tensor3.index_set, cc.KernelParams(0.5, 0.25), refine_check=True)
    assert t.meta["refinement_error"] <= 1e-6


def test_threads_do_not_change_entries(tensor3):
    t2 = cc.assemble_tensor(tensor3.index_set, cc.KernelParams(0.5, 0.25), threads=3)
    np.testing.assert_array_equal(t2.main, tensor3.main)
    np.testing.assert_array_equal(t2.lift, tensor3.lift)


@given(st.integers(0, 2**32 - 1), st.sampled_from([0.0, 0.05, 0.1]))
@settings(max_examples=25, deadline=None)
def test_conservation(tensor3, seed, kappa):
    c = np.random.default_rng(seed).standard_normal(tensor3.dim)
    q = cc.apply_Q(tensor3, kappa, c, c)
    E = hs.macro_vectors(tensor3.index_set)
    scale = np.abs(tensor3.combined(kappa)).max()
    assert np.abs(E @ q).max() <= 1e-8 * scale * (c @ c)


def test_equilibrium(tensor3):
    e0 = ce.reference_background(tensor3.index_set)
    assert np.abs(cc.apply_Q(tensor3, 0.05, e0, e0)).max() <= 1e-8


def test_kappa_zero_ignores_lift(tensor3, rng):
    g, f = rng.standard_normal((2, tensor3.dim))
    t = cc.CollisionTensor(tensor3.index_set, 0.5, 0.25, 1.0, tensor3.main,
                           np.full_like(tensor3.lift, np.nan), tensor3.quad)
    np.testing.assert_array_equal(cc.apply_Q(t, 0.0, g, f), cc.apply_Q(tensor3, 0.0, g, f))


def test_bilinearity(tensor3, rng):
    g, f1, f2 = rng.standard_normal((3, tensor3.dim))
    a, b = 0.7, -1.3
    lhs = cc.apply_Q(tensor3, 0.05, g, a * f1 + b * f2)
    rhs = a * cc.apply_Q(tensor3, 0.05, g, f1) + b * cc.apply_Q(tensor3, 0.05, g, f2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-14 * np.abs(lhs).max() * 10)


def test_dimension_mismatch(tensor3):
    with pytest.raises(DimensionMismatch):
        cc.apply_Q(tensor3, 0.0, np.ones(3), np.ones(3))


def test_linearized_kernel_and_image(tensor3):
    L = _L(tensor3, 0.05)
    iset = tensor3.index_set
    sv = np.linalg.svd(L, compute_uv=False)
    assert np.all(sv[-3:] <= 1e-7)
    E = hs.macro_vectors(iset)
    assert np.abs(E @ L).max() <= 1e-8
    g = cc.spectral_gap(L, iset)
    assert g.kernel_dim == 3 and g.kernel_angle <= 1e-5


@pytest.mark.parametrize("kappa", [0.0, 0.1])
def test_micro_block_negative_definite(tensors, kappa):
    t = tensors[4]
    Vm = hs.micro_basis(t.index_set)
    L = _L(t, kappa)
    assert np.linalg.eigvalsh(Vm.T @ (L + L.T) @ Vm / 2).max() < 0


def test_gap_n_stability(tensors):
    gaps = {N: cc.spectral_gap(_L(tensors[N], 0.05), tensors[N].index_set) for N in (3, 4, 5)}
    assert gaps[4].kernel_dim == 3
    assert abs(gaps[3].delta0 / gaps[5].delta0 - 1) <= 0.3


def test_gap_positive_and_growing_in_kappa(tensor3):
    d = [cc.spectral_gap(_L(tensor3, k), tensor3.index_set).delta0 for k in (0.0, 0.05, 0.1)]
    assert 0 < d[0] < d[1] < d[2]


@pytest.mark.xfail(strict=True, reason="delta_0 grows linearly with the lift weight: "
                                       "5.53, 6.57, 7.60, a max/min spread of 37%")
def test_gap_kappa_within_20_percent(tensor3):
    d = [cc.spectral_gap(_L(tensor3, k), tensor3.index_set).delta0 for k in (0.0, 0.05, 0.1)]
    assert max(d) / min(d) - 1 <= 0.2


def test_discretized_maxwellian_reference(tensor3):
    dm = cc.discretized_maxwellian(tensor3, 0.05, np.array([1.0, 0.0, 0.0]))
    assert dm.iterations == 0
    np.testing.assert_array_equal(dm.coeffs, ce.reference_background(tensor3.index_set))


@given(st.floats(0.8, 1.2), st.floats(-0.2, 0.2), st.floats(0.8, 1.2))
@settings(max_examples=15, deadline=None)
def test_discretized_maxwellian_moments(tensor3, rho, u, T):
    macro = hs.macro_from_hydro(np.array([rho, u, T]))
    dm = cc.discretized_maxwellian(tensor3, 0.05, macro)
    a, _ = hs.macro_split(dm.coeffs, tensor3.index_set)
    np.testing.assert_allclose(a, macro, atol=1e-12)
    assert np.abs(cc.apply_Q(tensor3, 0.05, dm.coeffs, dm.coeffs)).max() <= 1e-9


def _maxwellian_gaps(tensors):
    v = np.array([1.05, 0.02, 0.98])
    return [np.linalg.norm(cc.discretized_maxwellian(tensors[N], 0.05, hs.macro_from_hydro(v)).coeffs
                           - hs.maxwellian_coeffs(tensors[N].index_set, v)) for N in (3, 4, 5)]


def test_discretized_maxwellian_close_to_projection(tensors):
    assert max(_maxwellian_gaps(tensors)) <= 1e-5


@pytest.mark.xfail(strict=True, reason="the distance is at quadrature-noise level (6e-7, 2.9e-6, "
                                       "1.9e-6) and not monotone in N")
def test_discretized_maxwellian_gap_decreasing(tensors):
    d = _maxwellian_gaps(tensors)
    assert d[0] > d[1] > d[2]


def test_discretized_jacobian_matches_fd(tensor3):
    macro = hs.macro_from_hydro(np.array([1.1, 0.1, 0.95]))
    coeffs = cc.discretized_maxwellian(tensor3, 0.05, macro).coeffs
    J = cc.discretized_maxwellian_jacobian(tensor3, 0.05, coeffs)
    np.testing.assert_allclose(J, ce.finite_difference_dM(tensor3, 0.05, macro), atol=1e-8)


def test_cache_roundtrip_and_mismatch(tensor3, tmp_path):
    path = tmp_path / "t.bin"
    cc.save_tensor(path, tensor3)
    t = cc.load_tensor(path, N=3, gamma=0.5, s=0.25, quad=tensor3.quad, c_b=1.0)
    np.testing.assert_array_equal(t.main, tensor3.main)
    np.testing.assert_array_equal(t.lift, tensor3.lift)
    with pytest.raises(CacheError):
        cc.load_tensor(path, N=4)
    with pytest.raises(CacheError):
        cc.load_tensor(path, s=0.3)
    blob = bytearray(path.read_bytes())
    blob[100] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(CacheError):
        cc.load_tensor(path)
