import csv
import json

import numpy as np
import pytest

from artifact import shock_cli as cli
from artifact import shock_fixedpoint as sf
from artifact.errors import ArtifactError, ValidationError


@pytest.fixture(scope="module")
def cache_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cache") / "tensor_n3.npz"
    cfg = cli.load_config(overrides={"cache": str(path)})
    _, info = cli.get_tensor(cfg)
    assert info["cache"] == "written"
    return str(path)


@pytest.fixture(scope="module")
def full_run(cache_file, tmp_path_factory):
    out = tmp_path_factory.mktemp("run1")
    code = cli.main(["--cache", cache_file, "--out", str(out), "--threads", "1"])
    return code, out


def _read(out, name):
    return (out / name).read_bytes()


# config ---------------------------------------------------------------------

def test_defaults():
    cfg = cli.load_config()
    assert (cfg.epsilon, cfg.N, cfg.gamma, cfg.s, cfg.kappa) == (0.05, 3, 0.5, 0.25, 0.05)
    assert (cfg.eta, cfg.domain, cfg.grid) == (5e-4, 10.0, 801)


def test_preset_p10():
    cfg = cli.load_config(overrides={"preset": "p10"})
    assert cfg.s == pytest.approx(0.111111, abs=1e-6)
    assert cfg.gamma == pytest.approx(0.555556, abs=1e-6)


def test_s_out_of_range():
    with pytest.raises(ValidationError):
        cli.load_config(overrides={"s": 0.6})


def test_flag_overrides_file(tmp_path):
    p = tmp_path / "run.toml"
    p.write_text("epsilon = 0.1\nkappa = 0.02\n")
    cfg = cli.load_config(p, {"epsilon": 0.05})
    assert cfg.epsilon == 0.05 and cfg.kappa == 0.02


def test_file_overrides_preset(tmp_path):
    p = tmp_path / "run.toml"
    p.write_text('preset = "p10"\ns = 0.2\n')
    cfg = cli.load_config(p)
    assert cfg.s == 0.2 and cfg.gamma == pytest.approx(5 / 9)


def test_every_problem_listed():
    with pytest.raises(ValidationError) as exc:
        cli.load_config(overrides={"s": 0.6, "grid": 100, "epsilon": -1.0})
    msg = str(exc.value)
    for key in ("s=0.6", "grid=100", "epsilon=-1.0"):
        assert key in msg


def test_unknown_key(tmp_path):
    p = tmp_path / "run.toml"
    p.write_text("epsilonn = 0.05\n")
    with pytest.raises(ValidationError):
        cli.load_config(p)


def test_order_flag_maps_to_N():
    assert cli.load_config(overrides={"order": 4}).N == 4


# exit codes -----------------------------------------------------------------

def test_exit_validation(tmp_path, capsys):
    assert cli.main(["--s", "0.6", "--out", str(tmp_path)]) == cli.EXIT_VALIDATION
    assert "s=0.6" in capsys.readouterr().err


def test_exit_io_missing_config(tmp_path):
    assert cli.main(["--config", str(tmp_path / "nope.toml")]) == cli.EXIT_IO


def test_exit_io_unwritable_out(tmp_path, cache_file):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    code = cli.main(["--cache", cache_file, "--out", str(blocker / "sub"),
                     "--stage-until", "rh", "--threads", "1"])
    assert code == cli.EXIT_IO


def test_exit_io_corrupt_cache(tmp_path):
    bad = tmp_path / "bad.npz"
    bad.write_bytes(b"not a tensor")
    code = cli.main(["--cache", str(bad), "--out", str(tmp_path / "o"), "--stage-until", "tensor"])
    assert code == cli.EXIT_IO


def test_exit_numerical_on_stage_failure(tmp_path, cache_file, monkeypatch):
    def boom(*a, **k):
        raise ArtifactError("forced")
    monkeypatch.setattr(sf, "prepare", boom)
    code = cli.main(["--cache", cache_file, "--out", str(tmp_path), "--threads", "1"])
    assert code == cli.EXIT_NUMERICAL
    m = json.loads(_read(tmp_path, "manifest.json"))
    assert m["status"] == "failed"
    assert m["stages"]["lift"]["status"] == "failed"
    for name in ("ell", "fixedpoint", "residuals"):
        assert m["stages"][name] == {"status": "skipped", "reason": "upstream failure"}
    assert m["stages"]["profile"]["status"] == "ok"


# pipeline -------------------------------------------------------------------

def test_stage_until_partial(tmp_path, cache_file):
    cfg = cli.load_config(overrides={"cache": cache_file, "stage_until": "transport"})
    manifest, res, timings = cli.run_pipeline(cfg)
    assert manifest["status"] == "partial"
    assert [manifest["stages"][s]["status"] for s in cli.STAGES[:3]] == ["ok"] * 3
    for s in cli.STAGES[3:]:
        assert manifest["stages"][s]["status"] == "skipped"
        assert "stage_until" in manifest["stages"][s]["reason"]
    assert timings["cache"] == "hit"
    cli.emit_results(manifest, res, timings, tmp_path)
    assert not (tmp_path / "profile.csv").exists()


def test_full_run_outputs(full_run):
    code, out = full_run
    assert code == cli.EXIT_OK
    m = json.loads(_read(out, "manifest.json"))
    assert cli.validate_manifest(m)
    assert m["status"] == "ok"
    assert all(m["stages"][s]["status"] == "ok" for s in cli.STAGES)
    assert all(m["acceptance"].values())
    with open(out / "profile.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == cli.PROFILE_COLUMNS
    assert len(rows) - 1 == m["config"]["grid"]
    with open(out / "history.csv") as fh:
        hist = list(csv.reader(fh))
    assert len(hist) - 1 == m["stages"]["fixedpoint"]["report"]["iterations"]


def test_end_moments_match_endpoint_states(full_run):
    _, out = full_run
    m = json.loads(_read(out, "manifest.json"))
    data = np.loadtxt(out / "profile.csv", delimiter=",", skiprows=1)
    rh = m["stages"]["rh"]["report"]
    np.testing.assert_allclose(data[0, 7:10], rh["v_minus"], atol=1e-6)
    np.testing.assert_allclose(data[-1, 7:10], rh["v_plus"], atol=1e-6)


def test_manifest_schema_roundtrip(full_run):
    _, out = full_run
    m = json.loads(_read(out, "manifest.json"))
    again = json.loads(json.dumps(m))
    assert cli.validate_manifest(again)
    del again["stages"]["ell"]
    with pytest.raises(ValidationError):
        cli.validate_manifest(again)


def test_manifest_schema_rejects_bad_status(full_run):
    import jsonschema
    _, out = full_run
    m = json.loads(_read(out, "manifest.json"))
    m["stages"]["rh"]["status"] = "maybe"
    with pytest.raises(jsonschema.ValidationError):
        cli.validate_manifest(m)


def test_determinism_across_threads(full_run, cache_file, tmp_path):
    _, out1 = full_run
    assert cli.main(["--cache", cache_file, "--out", str(tmp_path), "--threads", "2"]) == 0
    for name in ("manifest.json", "profile.csv", "history.csv"):
        assert _read(out1, name) == _read(tmp_path, name)
    t = json.loads(_read(tmp_path, "timings.json"))
    assert t["threads"] == 2 and t["cache"] == "hit"
