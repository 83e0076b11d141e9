"""Command-line pipeline: config, tensor cache, stages and result files.

Output directory layout (schema version 1):

    profile.csv    one row per grid node
    history.csv    one row per outer iteration
    manifest.json  config echo, versions, stage reports, acceptance flags
    timings.json   wall-clock seconds per stage, thread count, cache status

manifest.json and the CSV files are deterministic for a fixed config; all
run-dependent data (timings, threads, paths, cache status) goes to timings.json.
"""
import argparse
import csv
import dataclasses
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from . import chapman_enskog as ce
from . import collision_core as cc
from . import fluid_states as fs
from . import hermite_spectral as hs
from . import linear_bvp as lb
from . import ns_shock as ns
from . import shock_fixedpoint as sf
from .errors import ArtifactError, CacheError, ValidationError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA_VERSION = 1
STAGES = ("tensor", "rh", "transport", "profile", "lift", "ell", "fixedpoint", "residuals")
PRESETS = {"default": {}, "p10": {"s": 1.0 / 9.0, "gamma": 5.0 / 9.0}}
EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4

PROFILE_COLUMNS = ("x", "rho", "u", "T", "drho", "du", "dT",
                   "F_rho", "F_u", "F_T", "F_minus_lift", "residual")
HISTORY_COLUMNS = ("iteration", "step_norm", "ratio", "phase")


@dataclasses.dataclass
class RunConfig:
    epsilon: float = 0.05
    N: int = 3
    gamma: float = 0.5
    s: float = 0.25
    kappa: float = 0.05
    eta: float = 5e-4
    domain: float = 10.0
    grid: int = 801
    quad: dict = None
    tol: float = 1e-10
    max_iter: int = 25
    preset: str = None
    out: str = "shock_out"
    cache: str = None
    threads: int = 1
    stage_until: str = "residuals"

    def echo(self):
        """Config fields that determine the numbers (not paths or threads)."""
        d = dataclasses.asdict(self)
        for k in ("threads", "out", "cache"):
            d.pop(k)
        return d


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_FLAG_NAMES = {"order": "N"}


def validate(cfg):
    problems = []
    if not 0 < cfg.epsilon <= 0.1:
        problems.append(f"epsilon={cfg.epsilon} outside (0, 0.1]")
    if not 3 <= cfg.N <= 7:
        problems.append(f"N={cfg.N} outside [3, 7]")
    if not 0 < cfg.gamma < 1:
        problems.append(f"gamma={cfg.gamma} outside (0, 1)")
    if not 0 < cfg.s < 0.5:
        problems.append(f"s={cfg.s} outside (0, 1/2)")
    if not cfg.kappa >= 0:
        problems.append(f"kappa={cfg.kappa} must be >= 0")
    if not cfg.eta > 0:
        problems.append(f"eta={cfg.eta} must be > 0")
    if not cfg.domain > 0:
        problems.append(f"domain={cfg.domain} must be > 0")
    if cfg.grid < 101 or cfg.grid % 2 == 0:
        problems.append(f"grid={cfg.grid} must be odd and >= 101")
    if not 0 < cfg.tol < 1:
        problems.append(f"tol={cfg.tol} outside (0, 1)")
    if cfg.max_iter < 1:
        problems.append(f"max_iter={cfg.max_iter} must be >= 1")
    if cfg.threads < 1:
        problems.append(f"threads={cfg.threads} must be >= 1")
    if cfg.stage_until not in STAGES:
        problems.append(f"stage_until={cfg.stage_until!r} not one of {', '.join(STAGES)}")
    if cfg.preset is not None and cfg.preset not in PRESETS:
        problems.append(f"unknown preset {cfg.preset!r}")
    if cfg.quad is not None:
        try:
            cc.QuadConfig(**cfg.quad).validate(cfg.N)
        except (TypeError, ValidationError) as exc:
            problems.append(f"quad: {exc}")
    if problems:
        raise ValidationError("invalid configuration: " + "; ".join(problems), problems)
    return cfg


def _coerce(name, value):
    f = _FIELDS[name]
    if value is None:
        return None
    if f.type in (float, "float"):
        return float(value)
    if f.type in (int, "int"):
        if isinstance(value, float) and not value.is_integer():
            raise ValidationError(f"{name} must be an integer", [f"{name}={value}"])
        return int(value)
    return value


def load_config(path=None, overrides=None):
    """Defaults, then preset, then file values, then flag overrides."""
    file_vals = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                file_vals = tomllib.load(fh)
        except OSError as exc:
            raise CacheError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ValidationError(f"config {path} is not valid TOML: {exc}", [str(exc)]) from exc
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    unknown = [k for k in list(file_vals) + list(overrides) if _FLAG_NAMES.get(k, k) not in _FIELDS]
    if unknown:
        raise ValidationError("unknown config keys: " + ", ".join(sorted(set(unknown))), unknown)
    file_vals = {_FLAG_NAMES.get(k, k): v for k, v in file_vals.items()}
    overrides = {_FLAG_NAMES.get(k, k): v for k, v in overrides.items()}
    preset = overrides.get("preset", file_vals.get("preset"))
    vals = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ValidationError(f"unknown preset {preset!r}", [f"preset={preset}"])
        vals.update(PRESETS[preset])
    vals.update(file_vals)
    vals.update(overrides)
    cfg = RunConfig(**{k: _coerce(k, v) for k, v in vals.items()})
    return validate(cfg)


# ---------------------------------------------------------------------------
# JSON helpers

def _jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)
                if f.repr}
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, (np.integer, int)) and not isinstance(obj, bool):
        return int(obj)
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if obj is None or isinstance(obj, str):
        return obj
    return repr(obj)


MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "config", "versions", "stages", "acceptance", "status"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "config": {"type": "object"},
        "versions": {"type": "object"},
        "status": {"enum": ["ok", "failed", "partial"]},
        "exit_code": {"type": "integer"},
        "stages": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["status"],
                "properties": {"status": {"enum": ["ok", "failed", "skipped"]},
                               "report": {}, "error": {"type": "string"},
                               "reason": {"type": "string"}},
            },
        },
        "acceptance": {"type": "object", "additionalProperties": {"type": "boolean"}},
    },
}


def validate_manifest(manifest):
    import jsonschema
    jsonschema.validate(manifest, MANIFEST_SCHEMA)
    missing = [s for s in STAGES if s not in manifest["stages"]]
    if missing:
        raise ValidationError("manifest lacks stages: " + ", ".join(missing), missing)
    return True


# ---------------------------------------------------------------------------
# pipeline

def _exit_code(exc):
    if isinstance(exc, ValidationError):
        return EXIT_VALIDATION
    if isinstance(exc, (CacheError, OSError)):
        return EXIT_IO
    return EXIT_NUMERICAL


def get_tensor(cfg):
    iset = hs.build_index_set(cfg.N)
    params = cc.KernelParams(cfg.gamma, cfg.s, cfg.kappa)
    quad = cc.QuadConfig(**cfg.quad) if cfg.quad else cc.QuadConfig.default(cfg.N)
    if cfg.cache and os.path.exists(cfg.cache):
        t = cc.load_tensor(cfg.cache, N=cfg.N, gamma=cfg.gamma, s=cfg.s, quad=quad, c_b=1.0)
        return t, {"cache": "hit"}
    t = cc.assemble_tensor(iset, params, quad=quad, threads=cfg.threads)
    if cfg.cache:
        Path(cfg.cache).parent.mkdir(parents=True, exist_ok=True)
        cc.save_tensor(cfg.cache, t)
        return t, {"cache": "written"}
    return t, {"cache": "none"}


def run_pipeline(cfg):
    """Run stages up to cfg.stage_until; returns (manifest, results, timings)."""
    stages = {name: {"status": "skipped", "reason": "not reached"} for name in STAGES}
    timings = {"threads": cfg.threads}
    res = {}
    exit_code = EXIT_OK
    last = STAGES.index(cfg.stage_until)
    kap = cfg.kappa

    def st_tensor():
        t, info = get_tensor(cfg)
        timings["cache"] = info["cache"]
        res["tensor"] = t
        gap = cc.spectral_gap(cc.linearized_matrix(t, kap, ce.reference_background(t.index_set)),
                              t.index_set)
        return {"dim": t.index_set.dim, "kernel_dim": gap.kernel_dim,
                "delta0": gap.delta0, "kernel_angle": gap.kernel_angle}

    def st_rh():
        clo = ns.GalerkinHydroClosure(res["tensor"], kap)
        res["closure"] = clo
        fr = ns.make_frame(fs.HydroState(1.0, 0.0, 1.0), cfg.epsilon, clo)
        res["frame"] = fr
        return {"speed": fr.speed, "v_minus": fr.v_minus.array, "v_plus": fr.v_plus.array}

    def st_transport():
        model = ce.TransportModel(res["tensor"], kap)
        res["model"] = model
        return model.reference

    def st_profile():
        p = ns.solve_profile(res["frame"], res["closure"], L=cfg.domain, M=cfg.grid)
        res["profile"] = p
        rep = ns.profile_diagnostics(p, res["closure"])
        return {"diagnostics": rep, "unstable_rate": p.unstable_rate}

    def st_lift():
        setup = sf.prepare(res["tensor"], kap, cfg.eta, res["profile"], res["model"])
        res["setup"] = setup
        an = setup.solver.analysis
        return {"f_perp_norm": lb.h2_eps(setup.grid, setup.f_perp, setup.weight, cfg.epsilon),
                "dims": [an.dim_unstable_minus, an.dim_stable_plus], "margin": an.margin}

    def st_ell():
        ell = res["setup"].ell
        p = res["profile"]
        i0 = int(np.argmin(np.abs(p.grid)))
        return {"ell": ell, "ell_dot_du0": float(ell @ p.macro_derivative[i0])}

    def st_fixedpoint():
        state, shock = sf.iterate(res["setup"], tol=cfg.tol, max_iter=cfg.max_iter)
        res["state"], res["shock"] = state, shock
        return {"iterations": state.iteration, "converged": state.converged,
                "contraction": state.contraction, "step_norms": state.step_norms}

    def st_residuals():
        rep = sf.residual(res["shock"], res["setup"])
        res["residual"] = rep
        return rep

    fns = dict(zip(STAGES, (st_tensor, st_rh, st_transport, st_profile, st_lift, st_ell,
                            st_fixedpoint, st_residuals)))
    failed = False
    with threadpool_limits(1):
        for i, name in enumerate(STAGES):
            if i > last:
                stages[name] = {"status": "skipped", "reason": f"stage_until={cfg.stage_until}"}
                continue
            if failed:
                stages[name] = {"status": "skipped", "reason": "upstream failure"}
                continue
            t0 = time.perf_counter()
            try:
                rep = fns[name]()
                stages[name] = {"status": "ok", "report": _jsonable(rep)}
            except (ArtifactError, np.linalg.LinAlgError) as exc:
                stages[name] = {"status": "failed", "error": f"{type(exc).__name__}: {exc}"}
                exit_code = _exit_code(exc)
                failed = True
            timings[name] = time.perf_counter() - t0
    status = "failed" if failed else ("ok" if last == len(STAGES) - 1 else "partial")
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "config": _jsonable(cfg.echo()),
        "versions": {"artifact": __version__, "numpy": np.__version__,
                     "scipy": __import__("scipy").__version__},
        "status": status,
        "exit_code": exit_code,
        "stages": stages,
        "acceptance": _acceptance_flags(res) if not failed else {},
    }
    return manifest, res, timings


def _acceptance_flags(res):
    flags = {}
    if "state" in res:
        flags["contraction_le_0.5"] = bool(res["state"].contraction <= 0.5)
        flags["converged"] = bool(res["state"].converged)
    if "residual" in res:
        r = res["residual"]
        flags["travelling_residual_le_1e-6"] = bool(r.travelling_residual <= 1e-6)
        flags["flux_constant_1e-8"] = bool(r.flux_variation <= 1e-8)
    if "profile" in res and "closure" in res:
        d = ns.profile_diagnostics(res["profile"], res["closure"])
        flags["profile_ode_residual_le_1e-9"] = bool(d.ode_residual <= 1e-9)
        flags["profile_endpoints_le_1e-6"] = bool(max(d.boundary_error) <= 1e-6)
    return flags


def _fmt(x):
    return repr(float(x))


def emit_results(manifest, res, timings, out):
    """Write profile.csv, history.csv, manifest.json and timings.json."""
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        validate_manifest(manifest)
        with open(out / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(out / "timings.json", "w") as fh:
            json.dump(_jsonable(timings), fh, indent=2, sort_keys=True)
            fh.write("\n")
        p = res.get("profile")
        if p is not None:
            shock = res.get("shock")
            rep = res.get("residual")
            iset = res["tensor"].index_set
            E = hs.macro_vectors(iset)
            with open(out / "profile.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(PROFILE_COLUMNS)
                for i, x in enumerate(p.grid):
                    row = [x, *p.states[i], *p.derivative[i]]
                    if shock is not None:
                        row += list(hs.hydro_from_macro(E @ shock.F[i]))
                        row.append(float(np.linalg.norm(shock.F[i] - shock.lift[i])))
                    else:
                        row += [math.nan] * 4
                    row.append(rep.per_node[i] if rep is not None else math.nan)
                    w.writerow([_fmt(v) for v in row])
        state = res.get("state")
        if state is not None:
            with open(out / "history.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(HISTORY_COLUMNS)
                for k, step in enumerate(state.step_norms):
                    ratio = state.ratios[k - 1] if k > 0 else math.nan
                    w.writerow([k + 1, _fmt(step), _fmt(ratio), _fmt(state.phase_values[k])])
    except OSError as exc:
        raise CacheError(f"cannot write results to {out}: {exc}") from exc


# ---------------------------------------------------------------------------
# entry point

def build_parser():
    p = argparse.ArgumentParser(prog="artifact-shock",
                                description="Kinetic shock profile pipeline (Hermite-Galerkin, non-cutoff kernel).")
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--preset", help="parameter preset: " + ", ".join(PRESETS))
    p.add_argument("--epsilon", type=float, help="shock strength (default 0.05)")
    p.add_argument("--order", type=int, help="Hermite degree N (default 3)")
    p.add_argument("--gamma", type=float, help="kinetic exponent gamma (default 0.5)")
    p.add_argument("--s", type=float, help="angular singularity s (default 0.25)")
    p.add_argument("--kappa", type=float, help="lift weight kappa (default 0.05)")
    p.add_argument("--eta", type=float, help="artificial viscosity (default 5e-4)")
    p.add_argument("--domain", type=float, help="domain half-length L in units of 1/epsilon (default 10)")
    p.add_argument("--grid", type=int, help="number of grid nodes, odd (default 801)")
    p.add_argument("--threads", type=int, help="worker threads for tensor assembly")
    p.add_argument("--cache", help="tensor cache file")
    p.add_argument("--out", help="output directory")
    p.add_argument("--stage-until", dest="stage_until", help="last stage: " + ", ".join(STAGES))
    p.add_argument("--verify", action="store_true", help="run the acceptance suite and exit")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.verify:
        from .acceptance import run_all
        results = run_all(print_lines=True)
        return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERICAL
    flags = {k: v for k, v in vars(args).items() if k not in ("config", "verify")}
    try:
        cfg = load_config(args.config, flags)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except CacheError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    if args.threads is None:
        cfg.threads = os.cpu_count() or 1
    manifest, res, timings = run_pipeline(cfg)
    try:
        emit_results(manifest, res, timings, cfg.out)
    except CacheError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    for name in STAGES:
        st = manifest["stages"][name]
        line = f"{name:<11} {st['status']}"
        if st["status"] == "failed":
            line += f"  {st['error']}"
        print(line)
    return manifest["exit_code"]
