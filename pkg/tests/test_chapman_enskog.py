import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from artifact import chapman_enskog as ce
from artifact import collision_core as cc
from artifact import hermite_spectral as hs
from artifact.errors import DegreeTooSmall


@pytest.fixture(scope="module")
def tensor4():
    return cc.assemble_tensor(hs.build_index_set(4), cc.KernelParams(0.5, 0.25))


def _L(t, kappa):
    return cc.linearized_matrix(t, kappa, ce.reference_background(t.index_set))


def test_burnett_pointwise(iset3):
    phi, psi = ce.burnett_fields(iset3)
    xi = np.array([[1.0, 0.0, 0.0]])
    m = hs.mref(xi)
    assert hs.evaluate(phi, iset3, xi)[0] / m[0] == pytest.approx(2 / 3, rel=1e-13)
    assert hs.evaluate(psi, iset3, xi)[0] / m[0] == pytest.approx(-4.0, rel=1e-13)


def test_burnett_micro_and_degree(iset3):
    phi, psi = ce.burnett_fields(iset3)
    E = hs.macro_vectors(iset3)
    assert np.abs(E @ phi).max() <= 1e-14 and np.abs(E @ psi).max() <= 1e-14
    big = hs.build_index_set(5)
    for f in ce.burnett_fields(big):
        assert np.all(f[big.degrees > 3] == 0)


def test_burnett_needs_degree_three():
    with pytest.raises(DegreeTooSmall):
        ce.burnett_fields(hs.build_index_set(2))


def test_inversion_residual(tensor3):
    iset = tensor3.index_set
    L = _L(tensor3, 0.05)
    phi, psi = ce.burnett_fields(iset)
    pt, qt = ce.invert_burnett(L, iset)
    np.testing.assert_allclose(L @ pt, -phi, atol=1e-10)
    np.testing.assert_allclose(L @ qt, -psi, atol=1e-10)
    E = hs.macro_vectors(iset)
    assert np.abs(E @ pt).max() <= 1e-10 and np.abs(E @ qt).max() <= 1e-10


def test_inversion_n_refinement(tensor4):
    i4, i5 = tensor4.index_set, hs.build_index_set(5)
    t5 = cc.assemble_tensor(i5, cc.KernelParams(0.5, 0.25))
    p4, _ = ce.invert_burnett(_L(tensor4, 0.0), i4)
    p5, _ = ce.invert_burnett(_L(t5, 0.0), i5)
    big = np.abs(p4) > 1e-3 * np.abs(p4).max()
    assert np.all(np.abs(p5[:i4.dim][big] / p4[big] - 1) <= 0.05)


def test_coefficients_positive(tensor4):
    tc = ce.transport_coeffs(tensor4, 0.0)
    assert tc.mu_tilde > 0 and tc.kappa_tilde > 0


def test_reference_values(model):
    # regression values at N = 3, gamma = 0.5, s = 0.25, kappa = 0.05
    assert model.reference.mu_tilde == pytest.approx(0.13539, rel=1e-4)
    assert model.reference.kappa_tilde == pytest.approx(0.38077, rel=1e-4)


@pytest.mark.parametrize("T", [0.9, 1.1, 1.7])
def test_temperature_law_kappa_zero(tensor3, T):
    m = ce.TransportModel(tensor3, 0.0)
    assert m.mu(T) / m.mu(1.0) == pytest.approx(T ** 0.75, rel=1e-14)
    assert m.heat(T) / m.heat(1.0) == pytest.approx(T ** 0.75, rel=1e-14)


@given(st.floats(0.5, 2.0))
@settings(max_examples=20, deadline=None)
def test_rescaled_solve_agrees(model, T):
    assert model.mu(T) == pytest.approx(model.mu_rescaled_solve(T), rel=1e-8)
    assert model.heat(T) == pytest.approx(model.heat_rescaled_solve(T), rel=1e-8)


def test_kappa_derivative_stable(tensor3):
    mu0 = ce.TransportModel(tensor3, 0.0).mu(1.0)
    slopes = [(ce.TransportModel(tensor3, k).mu(1.0) - mu0) / k for k in (0.01, 0.005)]
    assert abs(slopes[0] / slopes[1] - 1) <= 0.2


def test_diffusion_matrix_structure(model):
    B = ce.diffusion_matrix([1.0, 0.3, 1.2], model)
    assert np.all(B[0] == 0)
    assert ce.diffusion_matrix([1.0, 0.0, 1.2], model)[2, 1] == 0
    np.testing.assert_array_equal(B, ce.diffusion_matrix([2.0, 0.3, 1.2], model))


def test_micro_correction_linear_and_micro(tensor3, rng):
    iset = tensor3.index_set
    bg = cc.discretized_maxwellian(tensor3, 0.05, hs.macro_from_hydro(np.array([1.05, 0.1, 0.97]))).coeffs
    assert np.all(ce.micro_correction(tensor3, 0.05, bg, np.zeros(3)) == 0)
    fp = ce.micro_correction(tensor3, 0.05, bg, rng.standard_normal(3))
    assert np.abs(hs.macro_vectors(iset) @ fp).max() <= 1e-10


def test_galerkin_closure_matches_continuum_at_reference(tensor3, model):
    # at the reference Maxwellian the Galerkin viscous flux is the continuum one
    iset = tensor3.index_set
    v = np.array([1.0, 0.0, 1.0])
    clo = ce.galerkin_closure(tensor3, 0.05, ce.reference_background(iset))
    C = hs.conserved_from_macro_matrix()
    B = C @ clo.B @ hs.macro_hydro_jacobian(v)
    np.testing.assert_allclose(B, ce.diffusion_matrix(v, model), atol=1e-6)
