"""Sweep the shock strength and print the eps^2 scaling of F - M_NS-lift.

    python3 demos/epsilon_sweep.py
"""
from artifact import chapman_enskog as ce
from artifact import collision_core as cc
from artifact import fluid_states as fs
from artifact import hermite_spectral as hs
from artifact import ns_shock as ns
from artifact import shock_fixedpoint as sf

KAPPA, ETA = 0.05, 5e-4


def main():
    tensor = cc.assemble_tensor(hs.build_index_set(3), cc.KernelParams(0.5, 0.25))
    model = ce.TransportModel(tensor, KAPPA)
    clo = ns.GalerkinHydroClosure(tensor, KAPPA)
    prev = None
    print(f"{'eps':>8} {'|F - lift|':>12} {'ratio':>7} {'contraction':>12} {'residual':>10}")
    for eps in (0.08, 0.04, 0.02):
        p = ns.solve_profile(ns.make_frame(fs.HydroState(1.0, 0.0, 1.0), eps, clo), clo)
        setup = sf.prepare(tensor, KAPPA, ETA, p, model)
        state, shock = sf.iterate(setup)
        rep = sf.residual(shock, setup)
        ratio = prev / rep.correction_norm if prev else float("nan")
        print(f"{eps:8.3f} {rep.correction_norm:12.4e} {ratio:7.2f} {state.contraction:12.2e} "
              f"{rep.travelling_residual:10.2e}")
        prev = rep.correction_norm


if __name__ == "__main__":
    main()
