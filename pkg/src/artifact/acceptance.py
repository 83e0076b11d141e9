"""Acceptance suite: twelve end-to-end checks, one pass/fail line each.

Run with ``python -m artifact.acceptance`` or ``artifact-shock --verify``.
Each check returns a CheckResult; shared objects (tensors, profiles) are
built once per suite run by AcceptanceContext.
"""
import sys
import tempfile
import time
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import chapman_enskog as ce
from . import collision_core as cc
from . import fluid_states as fs
from . import hermite_spectral as hs
from . import kawashima as kw
from . import linear_bvp as lb
from . import ns_shock as ns
from . import shock_fixedpoint as sf

GAMMA, S, KAPPA = 0.5, 0.25, 0.05
V_MINUS = fs.HydroState(1.0, 0.0, 1.0)


@dataclass
class CheckResult:
    number: int
    name: str
    passed: bool
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        info = ", ".join(f"{k}={_short(v)}" for k, v in self.details.items())
        return f"[{status}] criterion {self.number:2d} {self.name}: {info} ({self.seconds:.1f}s)"


def _short(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.3g}"
    if isinstance(v, (tuple, list)):
        return "(" + ", ".join(_short(x) for x in v) + ")"
    return str(v)


class AcceptanceContext:
    """Lazily built tensors, profiles and shock setups shared by the checks."""

    def __init__(self, seed=0):
        self.rng = np.random.default_rng(seed)

    @lru_cache(maxsize=None)
    def tensor(self, N, gamma=GAMMA, s=S):
        return cc.assemble_tensor(hs.build_index_set(N), cc.KernelParams(gamma, s))

    @lru_cache(maxsize=None)
    def model(self, kappa=KAPPA):
        return ce.TransportModel(self.tensor(3), kappa)

    @lru_cache(maxsize=None)
    def continuum_profile(self, eps, M=801):
        clo = ns.ContinuumClosure(self.model())
        fr = ns.make_frame(V_MINUS, eps, clo)
        return ns.solve_profile(fr, clo, M=M), clo

    @lru_cache(maxsize=None)
    def shock_setup(self, eps, eta=5e-4):
        clo = ns.GalerkinHydroClosure(self.tensor(3), KAPPA)
        fr = ns.make_frame(V_MINUS, eps, clo)
        p = ns.solve_profile(fr, clo)
        return sf.prepare(self.tensor(3), KAPPA, eta, p, self.model())

    @lru_cache(maxsize=None)
    def linear_system(self, eps, eta, M=801):
        p, _ = self.continuum_profile(eps, M)
        lift = ns.lift_profile(p, self.tensor(3), KAPPA, mode="continuum")
        return p, lift, lb.build_ell(p, self.model())


def run_check(number, name, fn, ctx):
    t0 = time.perf_counter()
    try:
        passed, details = fn(ctx)
    except Exception as exc:  # a crash is a failed criterion, reported on its line
        passed, details = False, {"error": f"{type(exc).__name__}: {exc}"}
    return CheckResult(number, name, bool(passed), details, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# the twelve criteria

def check_fluid_eigenstructure(ctx):
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(100):
        v = np.array([rng.uniform(0.1, 10), rng.uniform(-5, 5), rng.uniform(0.1, 10)])
        worst = max(worst, float(fs.eigen_residuals(v).max()))
    c_err = abs(float(fs.sound_speed(V_MINUS.array)) - np.sqrt(5 / 3))
    return worst <= 1e-12 and c_err <= 1e-14, {"eig_residual": worst, "sound_speed_err": c_err}


def check_rankine_hugoniot(ctx):
    lam3 = float(fs.lambda3(V_MINUS.array))
    res, scaled = [], []
    for eps in (0.1, 0.05, 0.025, 0.0125):
        rh = fs.rh_solve(V_MINUS, eps)
        lax = fs.lambda3(rh.v_plus.array) <= rh.speed <= lam3
        res.append(rh.residual if lax else np.inf)
        scaled.append(abs(rh.speed - (lam3 - eps / 2)) / eps**2)
    ratios = [a / b for a, b in zip(scaled[:-1], scaled[1:])]
    stable = all(0.8 <= r <= 1.25 for r in ratios)
    ok = max(res) <= 1e-12 and stable and max(scaled) < 10
    return ok, {"rh_residual": max(res), "speed_defect/eps^2": tuple(scaled)}


def check_collision(ctx):
    t = ctx.tensor(3)
    iset = t.index_set
    E = hs.macro_vectors(iset)
    rng = np.random.default_rng(2)
    rel = 0.0
    for _ in range(20):
        f = rng.standard_normal(iset.dim)
        q = cc.apply_Q(t, KAPPA, f, f)
        rel = max(rel, float(np.linalg.norm(E @ q) / np.linalg.norm(q)))
    eq = 0.0
    for v in ((1.0, 0.0, 1.0), (1.2, -0.1, 0.9)):
        M = cc.discretized_maxwellian(t, KAPPA, hs.macro_from_hydro(np.array(v))).coeffs
        eq = max(eq, float(np.linalg.norm(cc.apply_Q(t, KAPPA, M, M))))
    fine = cc.assemble_tensor(iset, cc.KernelParams(GAMMA, S), quad=t.quad.doubled())
    conv = max(float(np.abs(fine.main - t.main).max() / np.abs(t.main).max()),
               float(np.abs(fine.lift - t.lift).max() / np.abs(t.lift).max()))
    ok = rel <= 1e-8 and eq <= 1e-8 and conv <= 1e-6
    return ok, {"macro_rel": rel, "Q(M,M)": eq, "quad_doubling": conv}


def check_spectrum(ctx):
    gaps_N, angles, kdims = [], [], []
    for N in (3, 4, 5):
        t = ctx.tensor(N)
        L = cc.linearized_matrix(t, KAPPA, ce.reference_background(t.index_set))
        g = cc.spectral_gap(L, t.index_set)
        gaps_N.append(g.delta0)
        angles.append(g.kernel_angle)
        kdims.append(g.kernel_dim)
    t = ctx.tensor(3)
    gaps_k = []
    for kap in (0.0, 0.05, 0.1):
        L = cc.linearized_matrix(t, kap, ce.reference_background(t.index_set))
        g = cc.spectral_gap(L, t.index_set)
        gaps_k.append(g.delta0)
        angles.append(g.kernel_angle)
        kdims.append(g.kernel_dim)
    # spread is max/min - 1; the deviation from the default kappa is reported too
    spread = lambda v: max(v) / min(v) - 1
    ok = (all(k == 3 for k in kdims) and max(angles) <= 1e-5 and min(gaps_N + gaps_k) > 0
          and spread(gaps_N) <= 0.3 and spread(gaps_k) <= 0.2)
    dev_k = max(abs(g - gaps_k[1]) for g in gaps_k) / gaps_k[1]
    return ok, {"kernel_dims": tuple(kdims), "max_angle": max(angles),
                "delta0_N": tuple(gaps_N), "delta0_kappa": tuple(gaps_k),
                "spread_N": spread(gaps_N), "spread_kappa": spread(gaps_k),
                "kappa_dev_from_default": dev_k}


def check_kawashima(ctx):
    t = ctx.tensor(3)
    iset = t.index_set
    A3 = kw.transport_matrix(iset)
    A00, A01, A10, _ = kw.frame_blocks(A3, iset)
    prod_err = float(np.abs(A01 @ A10 - np.diag([0.0, 4 / 3, 5 / 3])).max())
    comm = kw.K00 @ A00 - A00 @ kw.K00
    comm_err = abs(comm[0, 0] - 2.0)
    L = cc.linearized_matrix(t, KAPPA, ce.reference_background(iset))
    comp = kw.select_delta1(hs.xi1_matrix(iset), L, iset)
    rep = kw.coercivity_check(comp, hs.xi1_matrix(iset), L, iset)
    ok = prod_err <= 1e-12 and comm_err <= 1e-12 and rep.min_combined_eig > 0
    return ok, {"A01A10_err": prod_err, "commutator_err": comm_err,
                "min_eig": rep.min_combined_eig, "delta": comp.delta, "delta1": comp.delta1}


def check_transport(ctx):
    t = ctx.tensor(3)
    ref = ctx.model().reference
    m0 = ce.TransportModel(t, 0.0)
    Ts = (0.5, 0.8, 1.3, 2.0)
    law = max(abs(m0.mu(T) / m0.mu(1.0) - T ** (1 - GAMMA / 2)) for T in Ts)
    law = max(law, max(abs(m0.heat(T) / m0.heat(1.0) - T ** (1 - GAMMA / 2)) for T in Ts))
    cons = 0.0
    for model in (m0, ctx.model()):
        for T in Ts:
            cons = max(cons, abs(model.mu(T) - model.mu_rescaled_solve(T)) / model.mu(T),
                       abs(model.heat(T) - model.heat_rescaled_solve(T)) / model.heat(T))
    ok = ref.mu_tilde > 0 and ref.kappa_tilde > 0 and law <= 1e-12 and cons <= 1e-8
    return ok, {"mu~": ref.mu_tilde, "kappa~": ref.kappa_tilde, "law_err": law,
                "rescaled_err": cons}


def check_ns_profile(ctx):
    out = {}
    for eps in (0.05, 0.025):
        p, clo = ctx.continuum_profile(eps)
        rep = ns.profile_diagnostics(p, clo)
        i0 = int(np.argmin(np.abs(p.grid)))
        out[eps] = (rep, abs(p.derivative[i0, 1]), min(rep.decay_rates))
    ode = max(out[e][0].ode_residual for e in out)
    ends = max(max(out[e][0].boundary_error) for e in out)
    du_ratio = out[0.05][1] / out[0.025][1]
    decay_ratio = out[0.05][2] / out[0.025][2]
    ok = (ode <= 1e-9 and ends <= 1e-6 and abs(du_ratio - 4) <= 1.2
          and abs(decay_ratio - 2) <= 0.6)
    return ok, {"ode_residual": ode, "endpoint_err": ends, "du0_ratio": du_ratio,
                "decay_ratio": decay_ratio}


def check_macro_pack(ctx):
    model = ctx.model()
    det_err, lam_minus = 0.0, []
    errs = {}
    for eps in (0.05, 0.025, 0.0125):
        fr = ns.make_frame(V_MINUS, eps, ns.ContinuumClosure(model))
        for side, v in (("-", fr.v_minus), ("+", fr.v_plus)):
            pk = lb.macro_ode_matrices(v, model, fr.speed)
            det_err = max(det_err, abs(np.linalg.det(pk.m) - pk.det_closed)
                          / max(1.0, abs(pk.det_closed)))
            lam_minus.append(pk.lam_minus)
            errs[(side, eps)] = abs(pk.lam0 - pk.lam0_asymptotic)
    # Richardson: an O(eps^2) defect drops by 4 under halving
    ratios = [errs[(side, e)] / errs[(side, e / 2)] for side in "-+" for e in (0.05, 0.025)]
    ok = det_err <= 1e-10 and all(3.0 <= r <= 5.0 for r in ratios) and max(lam_minus) < 0
    return ok, {"det_err": det_err, "lam0_defect_ratios": tuple(ratios),
                "max_lam_minus": max(lam_minus)}


def check_endpoints(ctx):
    p, lift, _ = ctx.linear_system(0.05, 5e-4)
    system = lb.assemble_system(lift, ctx.tensor(3), KAPPA, 5e-4, p.frame)
    an = lb.endpoint_analysis(system)
    # margin is the smallest |Re lambda| over both endpoint spectra
    dim_sum = an.dim_unstable_minus + an.dim_stable_plus
    ok = an.margin > 1e-3 and dim_sum == 2 * system.r + 4 == 14
    return ok, {"margin": an.margin, "dim_U_minus": an.dim_unstable_minus,
                "dim_S_plus": an.dim_stable_plus, "system_dim": system.dim}


def _manufactured(ctx, eta=0.01, M=1601, w=0.1):
    p, lift, ell = ctx.linear_system(0.05, eta, M)
    tensor = ctx.tensor(3)
    base = lb.assemble_system(lift, tensor, KAPPA, eta, p.frame)
    rng = np.random.default_rng(3)
    c1, c2 = rng.standard_normal(base.dim), rng.standard_normal(base.dim)

    def F(x):
        x = np.atleast_1d(x)
        return np.outer(1 / np.cosh(w * x), c1) + np.outer(np.tanh(w * x) / np.cosh(w * x), c2)

    def dF(x):
        x = np.atleast_1d(x)
        sech, tanh = 1 / np.cosh(w * x), np.tanh(w * x)
        return np.outer(-w * sech * tanh, c1) + np.outer(w * (sech**3 - tanh**2 * sech), c2)

    def G(x):
        return -dF(x) + np.einsum("kij,kj->ki", base.matrix(x), F(x))

    system = lb.assemble_system(lift, tensor, KAPPA, eta, p.frame, source=G)
    sol = lb.solve_bvp(system, ell, float(ell @ F(0.0)[0, :3]))
    return float(np.abs(sol.F - F(p.grid)).max())


def check_bvp(ctx):
    man_err = _manufactured(ctx)
    p, lift, ell = ctx.linear_system(0.05, 0.01)
    tensor = ctx.tensor(3)
    Q = hs.frame(tensor.index_set)
    zeta = np.outer(np.exp(-4 * (0.05 * p.grid) ** 2), np.arange(1, Q.shape[1] - 2) / 5.0)
    z = zeta @ Q[:, 3:].T
    system = lb.assemble_system(lift, tensor, KAPPA, 0.01, p.frame, z=z)
    zero = lb.solve_bvp(lb.assemble_system(lift, tensor, KAPPA, 0.01, p.frame), ell, 0.0)
    hom = float(np.abs(zero.F).max())
    colloc = lb.solve_bvp(system, ell, 0.3)
    matched = lb.solve_bvp_matched(system, ell, 0.3)
    cross = float(np.abs(colloc.f - matched.f).max())
    rates, resid = [], []
    for conj in matched.meta["conjugations"].values():
        rates.append(lb.identity_decay_rate(conj))
        resid.append(float(lb.conjugation_residual(conj, system).max()))
    theta = 0.5 * lb.endpoint_analysis(system).margin
    ok = (man_err <= 1e-6 and hom == 0.0 and cross <= 1e-5 and min(rates) >= theta
          and max(resid) <= 1e-8)
    return ok, {"manufactured_err": man_err, "homogeneous": hom, "cross_validation": cross,
                "T-I_decay": tuple(rates), "theta": theta, "conj_residual": max(resid)}


def check_full_shock(ctx):
    reps = {}
    for eps in (0.05, 0.025):
        setup = ctx.shock_setup(eps)
        state, shock = sf.iterate(setup)
        rep = sf.residual(shock, setup)
        z = sf.setup_error_term(setup, state.f)
        macro = float(np.abs(z @ hs.macro_vectors(setup.tensor.index_set).T).max())
        reps[eps] = (state, rep, macro)
    st, rep, macro = reps[0.05]
    ratio = rep.correction_norm / reps[0.025][1].correction_norm
    ok = (st.converged and st.contraction <= 0.5 and rep.travelling_residual <= 1e-6
          and rep.flux_variation <= 1e-8 and abs(ratio - 4) <= 1.6
          and max(m for _, _, m in reps.values()) <= 1e-9)
    return ok, {"contraction": st.contraction, "iterations": st.iteration,
                "travelling_residual": rep.travelling_residual,
                "flux_variation": rep.flux_variation, "eps2_ratio": ratio,
                "E_macro": max(m for _, _, m in reps.values())}


def check_determinism(ctx):
    from . import shock_cli
    with tempfile.TemporaryDirectory() as tmp:
        outs = []
        for k, threads in enumerate((1, 2)):
            cfg = shock_cli.load_config(overrides={"out": f"{tmp}/run{k}", "threads": threads})
            manifest, res, timings = shock_cli.run_pipeline(cfg)
            shock_cli.emit_results(manifest, res, timings, cfg.out)
            outs.append(Path(cfg.out))
        names = ("manifest.json", "profile.csv", "history.csv")
        same = {n: (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes() for n in names}
        status = manifest["status"]
    return all(same.values()) and status == "ok", {**same, "status": status}


CHECKS = (
    (1, "fluid eigenstructure", check_fluid_eigenstructure),
    (2, "Rankine-Hugoniot and Lax", check_rankine_hugoniot),
    (3, "collision conservation and equilibrium", check_collision),
    (4, "linearized spectrum", check_spectrum),
    (5, "Kawashima blocks", check_kawashima),
    (6, "transport coefficients", check_transport),
    (7, "Navier-Stokes profile", check_ns_profile),
    (8, "macro ODE pack", check_macro_pack),
    (9, "endpoint hyperbolicity", check_endpoints),
    (10, "linear BVP solver", check_bvp),
    (11, "full kinetic shock", check_full_shock),
    (12, "determinism", check_determinism),
)


def run_all(print_lines=False, only=None, ctx=None):
    ctx = ctx or AcceptanceContext()
    results = []
    for number, name, fn in CHECKS:
        if only is not None and number not in only:
            continue
        r = run_check(number, name, fn, ctx)
        if print_lines:
            print(r.line(), flush=True)
        results.append(r)
    return results


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    only = {int(a) for a in argv} or None
    results = run_all(print_lines=True, only=only)
    return 0 if all(r.passed for r in results) else 1


if __name__ == "__main__":
    sys.exit(main())
