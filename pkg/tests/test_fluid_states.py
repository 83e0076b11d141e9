import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from artifact import fluid_states as fs
from artifact.errors import NonPhysicalState, ValidationError

states = st.tuples(st.floats(0.05, 20), st.floats(-10, 10), st.floats(0.05, 20))


def test_sound_speed_at_reference():
    assert fs.sound_speed(np.array([1.0, 0.0, 1.0])) == pytest.approx(np.sqrt(5 / 3), abs=1e-14)


def test_contact_vector():
    cf = fs.char_fields(np.array([2.0, 0.3, 1.5]))
    np.testing.assert_allclose(cf.rvecs[:, 1], [-6.0, 0.0, 4.5])


@given(states)
@settings(max_examples=100, deadline=None)
def test_eigen_residuals(v):
    v = np.array(v)
    scale = max(1.0, np.abs(fs.f1_jacobian(v)).max())
    assert fs.eigen_residuals(v).max() <= 1e-12 * scale


@given(states)
@settings(max_examples=50, deadline=None)
def test_genuine_nonlinearity_normalization(v):
    v = np.array(v)
    r = fs.char_fields(v).rvecs
    assert r[:, 2] @ fs.grad_lambda3(v) == pytest.approx(1.0, rel=1e-12)


@given(states)
@settings(max_examples=50, deadline=None)
def test_conserved_roundtrip(v):
    v = np.array(v)
    np.testing.assert_allclose(fs.from_conserved(fs.to_conserved(v)), v, rtol=1e-10, atol=1e-12)


def test_from_conserved_rejects_negative_energy():
    with pytest.raises(NonPhysicalState):
        fs.from_conserved(np.array([1.0, 2.0, 1.0]))


def test_hydro_state_validation():
    with pytest.raises(NonPhysicalState):
        fs.HydroState(-1.0, 0.0, 1.0)


@pytest.mark.parametrize("eps", [0.1, 0.05, 0.025])
def test_rh_solve_residual_and_lax(eps):
    rh = fs.rh_solve(fs.HydroState(1.0, 0.0, 1.0), eps)
    vm, vp = rh.v_minus.array, rh.v_plus.array
    jump = fs.euler_flux(vp) - fs.euler_flux(vm) - rh.speed * (fs.to_conserved(vp) - fs.to_conserved(vm))
    assert np.abs(jump).max() <= 1e-12
    assert fs.lambda3(vp) == pytest.approx(fs.lambda3(vm) - eps, abs=1e-12)
    assert fs.lambda3(vp) <= rh.speed <= fs.lambda3(vm)


def test_shock_speed_second_order():
    vm = fs.HydroState(1.0, 0.0, 1.0)
    lam = fs.lambda3(vm.array)
    d = [abs(fs.rh_solve(vm, e).speed - (lam - e / 2)) / e**2 for e in (0.05, 0.025, 0.0125)]
    assert d[0] / d[1] == pytest.approx(1.0, abs=0.05)
    assert d[1] / d[2] == pytest.approx(1.0, abs=0.05)


def test_zero_amplitude_is_trivial():
    rh = fs.rh_solve(fs.HydroState(1.0, 0.0, 1.0), 0.0)
    np.testing.assert_allclose(rh.v_plus.array, rh.v_minus.array, atol=1e-14)


def test_rh_rejects_large_amplitude():
    with pytest.raises(ValidationError):
        fs.rh_solve(fs.HydroState(1.0, 0.0, 1.0), 0.5)
