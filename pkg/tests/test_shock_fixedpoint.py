import numpy as np
import pytest

from artifact import chapman_enskog as ce
from artifact import collision_core as cc
from artifact import fluid_states as fs
from artifact import hermite_spectral as hs
from artifact import linear_bvp as lb
from artifact import ns_shock as ns
from artifact import shock_fixedpoint as sf
from artifact.errors import GridMismatch, NonMicroscopicError

KAPPA = 0.05


@pytest.fixture(scope="module")
def runs(shock_setups):
    out = {}
    for eps, setup in shock_setups.items():
        state, shock = sf.iterate(setup)
        out[eps] = (setup, state, shock, sf.residual(shock, setup))
    return out


def _hm1(setup, z):
    return lb.h2_eps(setup.grid, z, np.linalg.inv(setup.weight), setup.epsilon)


def test_error_term_microscopic(runs):
    for setup, state, _, _ in runs.values():
        E = hs.macro_vectors(setup.tensor.index_set)
        for f in (np.zeros_like(state.f), state.f):
            assert np.abs(sf.setup_error_term(setup, f) @ E.T).max() <= 1e-9


def test_unreduced_macro_check_passes(shock_setups):
    setup = shock_setups[0.05]
    sf.setup_error_term(setup, np.zeros_like(setup.f_perp), check=True)


def test_unreduced_macro_check_flags_bad_profile(shock_setups):
    setup = shock_setups[0.05]
    wrong = 1.5 * setup.profile.macro_derivative
    with pytest.raises(NonMicroscopicError):
        sf.error_term(np.zeros_like(setup.f_perp), setup.field, setup.f_perp, setup.tensor,
                      KAPPA, setup.dM, setup.profile.frame.speed, macro_derivative=wrong)


def test_error_term_grid_mismatch(shock_setups):
    setup = shock_setups[0.05]
    with pytest.raises(GridMismatch):
        sf.error_term(np.zeros((3, setup.tensor.dim)), setup.field, setup.f_perp, setup.tensor,
                      KAPPA, setup.dM, setup.profile.frame.speed)


def test_error_term_eps_cubed(shock_setups):
    n = {eps: _hm1(s, sf.setup_error_term(s, np.zeros_like(s.f_perp))) for eps, s in shock_setups.items()}
    assert n[0.05] / n[0.025] == pytest.approx(8, rel=0.5)


def test_quadratic_part_polarization(shock_setups, rng):
    setup = shock_setups[0.05]
    t = setup.tensor
    fp = setup.f_perp
    Q = lambda a, b: cc.apply_Q(t, KAPPA, a, b)
    E0 = sf.setup_error_term(setup, np.zeros_like(fp))

    def quad(f):
        return sf.setup_error_term(setup, f) - E0 - Q(fp, f) - Q(f, fp)

    Vm = hs.micro_basis(t.index_set)
    f = 1e-3 * rng.standard_normal((len(setup.grid), Vm.shape[1])) @ Vm.T
    g = 1e-3 * rng.standard_normal((len(setup.grid), Vm.shape[1])) @ Vm.T
    lhs = quad(f) - quad(g)
    rhs = 0.5 * (Q(f - g, f + g) + Q(f + g, f - g))
    assert np.abs(lhs - rhs).max() <= 1e-12


def test_contraction_and_convergence(runs):
    _, state, _, _ = runs[0.05]
    assert state.converged
    assert state.contraction <= 0.5
    assert all(r < 1 for r in state.ratios[1:])


def test_phase_condition_every_iterate(runs):
    for _, state, _, _ in runs.values():
        assert max(abs(v) for v in state.phase_values) <= 1e-12


def test_residuals(runs):
    setup, _, shock, rep = runs[0.05]
    assert rep.travelling_residual <= 1e-6
    assert rep.flux_variation <= 1e-8
    assert max(rep.boundary_distance) <= 1e-6
    fr = shock.frame
    for i, v in ((0, fr.v_minus), (-1, fr.v_plus)):
        a = hs.macro_vectors(setup.tensor.index_set) @ shock.F[i]
        np.testing.assert_allclose(hs.hydro_from_macro(a), v.array, atol=1e-6)


def test_eps_squared_scalings(runs):
    a, b = runs[0.05][3], runs[0.025][3]
    assert a.correction_norm / b.correction_norm == pytest.approx(4, rel=0.4)
    assert a.f_perp_norm / b.f_perp_norm == pytest.approx(4, rel=0.4)


def test_fixed_point_certificate(runs):
    setup, state, _, _ = runs[0.05]
    extra, _ = sf.iterate(setup, f0=state.f, max_iter=1)
    assert np.abs(extra.f - state.f).max() <= 1e-8


def test_translation_consistency(shock_setups):
    setup = shock_setups[0.05]
    d = 1e-4
    state, shock = sf.iterate(setup, d=d)
    assert state.phase_values[-1] == pytest.approx(d, abs=1e-12)
    i0 = int(np.argmin(np.abs(setup.grid)))
    P = hs.macro_vectors(setup.tensor.index_set)
    assert setup.ell @ (P @ shock.f[i0]) == pytest.approx(d, abs=1e-12)


def test_kappa_sweep_cauchy(tensor3, model):
    F = {}
    for kap in (0.1, 0.05, 0.025):
        clo = ns.GalerkinHydroClosure(tensor3, kap)
        p = ns.solve_profile(ns.make_frame(fs.HydroState(1.0, 0.0, 1.0), 0.05, clo), clo)
        setup = sf.prepare(tensor3, kap, 5e-4, p, ce.TransportModel(tensor3, kap))
        _, shock = sf.iterate(setup)
        F[kap] = shock.F
    d1 = np.abs(F[0.1] - F[0.05]).max()
    d2 = np.abs(F[0.05] - F[0.025]).max()
    assert d2 < d1
