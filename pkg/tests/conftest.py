import numpy as np
import pytest

from artifact import chapman_enskog as ce
from artifact import collision_core as cc
from artifact import fluid_states as fs
from artifact import hermite_spectral as hs
from artifact import ns_shock as ns
from artifact import shock_fixedpoint as sf

GAMMA, S, KAPPA = 0.5, 0.25, 0.05
V_REF = fs.HydroState(1.0, 0.0, 1.0)


@pytest.fixture(scope="session")
def iset3():
    return hs.build_index_set(3)


@pytest.fixture(scope="session")
def tensor3(iset3):
    return cc.assemble_tensor(iset3, cc.KernelParams(GAMMA, S))


@pytest.fixture(scope="session")
def model(tensor3):
    return ce.TransportModel(tensor3, KAPPA)


@pytest.fixture(scope="session")
def continuum_profiles(model):
    clo = ns.ContinuumClosure(model)
    out = {}
    for eps in (0.05, 0.025):
        fr = ns.make_frame(V_REF, eps, clo)
        out[eps] = ns.solve_profile(fr, clo)
    return out, clo


@pytest.fixture(scope="session")
def shock_setups(tensor3, model):
    clo = ns.GalerkinHydroClosure(tensor3, KAPPA)
    out = {}
    for eps in (0.05, 0.025):
        p = ns.solve_profile(ns.make_frame(V_REF, eps, clo), clo)
        out[eps] = sf.prepare(tensor3, KAPPA, 5e-4, p, model)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
