import json
import os
import subprocess
import sys

import numpy as np
import pytest

from clkinetic import cli, config, io
from clkinetic.errors import ConfigError


def run(args, cwd):
    return subprocess.run([sys.executable, "-m", "clkinetic", *args], cwd=cwd,
                          capture_output=True, text=True, timeout=600)


def test_csv_roundtrip(tmp_path):
    p = tmp_path / "a.csv"
    rows = [{"x": 0.1, "ok": True, "p": {"a": 1}}, {"x": 1e-300, "ok": False, "p": [1, 2]}]
    io.write_csv(p, ["x", "ok", "p"], rows, 1, 1)
    got, summary = io.read_csv(p)
    assert summary == {"pass": 1, "fail": 1}
    assert float(got[0]["x"]) == 0.1 and float(got[1]["x"]) == 1e-300
    assert got[0]["ok"] == "true" and json.loads(got[0]["p"]) == {"a": 1}
    assert p.read_text().splitlines()[-1] == "# pass=1 fail=1"


def test_state_dump_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    pos, vel = rng.standard_normal((7, 3)), rng.standard_normal((7, 3))
    p = tmp_path / "s.bin"
    io.write_state_dump(p, pos, vel)
    raw = p.read_bytes()
    assert raw[:4] == b"CLKS" and len(raw) == 16 + 7 * 48
    P, V = io.read_state_dump(p)
    np.testing.assert_array_equal(P, pos)
    np.testing.assert_array_equal(V, vel)


def test_state_dump_rejects_bad_magic(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"XXXX" + bytes(12))
    with pytest.raises(ValueError):
        io.read_state_dump(p)


def test_config_defaults_valid():
    cfg = config.load()
    assert cfg["seed"] == 12345 and cfg["wall"]["r_perp"] == 0.5


def test_config_user_wall_replaces_default(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"wall": {"T_w": {"type": "patchwise", "params": {"values": [1, 2]}},
                                      "r_perp": 1.0, "r_par": 1.0}}))
    cfg = config.load(p)
    assert cfg["wall"]["T_w"]["type"] == "patchwise"


@pytest.mark.parametrize("bad", [
    {"wall": {"T_w": 1.0, "r_perp": 0.0, "r_par": 0.5}},
    {"wall": {"T_w": 1.0, "r_perp": 0.5, "r_par": 2.0}},
    {"domain": {"type": "torus"}},
    {"simulate": {"n_particles": 0}},
    {"unknown_key": 1},
])
def test_config_rejects(tmp_path, bad):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(bad))
    with pytest.raises(ConfigError):
        config.load(p)


def test_build_domain_variants():
    assert cli.build_domain({"type": "quartic"}).xi_poly.degree == 4
    d = cli.build_domain({"type": "ellipsoid", "params": {"semi_axes": [1, 2, 3]}})
    assert d.quadric is not None


def test_cli_config_error_writes_nothing(tmp_path):
    (tmp_path / "bad.json").write_text('{"wall": {"T_w": -1, "r_perp": 0.5, "r_par": 0.5}}')
    r = run(["--config", "bad.json", "--out", "o", "verify-kernel"], tmp_path)
    assert r.returncode == 2
    assert "wall/T_w" in r.stderr
    assert not (tmp_path / "o").exists()


def test_cli_malformed_json(tmp_path):
    (tmp_path / "m.json").write_text("{oops")
    assert run(["--config", "m.json", "verify-kernel"], tmp_path).returncode == 2


def test_cli_io_errors(tmp_path):
    assert run(["--config", "missing.json", "verify-kernel"], tmp_path).returncode == 3
    (tmp_path / "f").write_text("")
    assert run(["--out", "f/sub", "simulate"], tmp_path).returncode == 3


def test_cli_simulate_outputs(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"simulate": {"n_particles": 3000, "n_bounces": 10}}))
    r = run(["--config", "c.json", "--seed", "5", "--threads", "2", "--out", "o", "simulate"], tmp_path)
    assert r.returncode == 0, r.stderr
    out = tmp_path / "o"
    assert {"moments.csv", "wall_tally.csv", "state.bin", "simulate_checks.csv"} <= set(os.listdir(out))
    P, V = io.read_state_dump(out / "state.bin")
    assert P.shape == (3000, 3)
    rows, summary = io.read_csv(out / "wall_tally.csv")
    assert summary["fail"] == 0 and len(rows) == 1


def test_cli_trace_outputs(tmp_path):
    r = run(["--out", "o", "trace", "--samples", "200", "--k", "4", "--delta", "0.2"], tmp_path)
    assert r.returncode == 0, r.stderr
    rows, _ = io.read_csv(tmp_path / "o" / "survival.csv")
    assert [int(x["k"]) for x in rows] == [1, 2, 3, 4]
    rows, _ = io.read_csv(tmp_path / "o" / "traces.csv")
    assert rows and set(rows[0]) >= {"trace", "j", "t_j", "in_grazing_set"}


def test_cli_verify_kernel_small(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps(
        {"verify_kernel": {"n_configs": 3, "n_pairs": 60, "n_samples": 100000}}))
    r = run(["--config", "c.json", "--out", "o", "verify-kernel"], tmp_path)
    assert r.returncode == 0, r.stderr
    rows, summary = io.read_csv(tmp_path / "o" / "verify_kernel.csv")
    assert summary["fail"] == 0
    assert {x["check"] for x in rows} >= {"normalization", "reciprocity", "sampler_ks"}


def test_cli_seed_reproducible(tmp_path):
    args = ["--seed", "3", "trace", "--samples", "100", "--k", "3"]
    run(["--out", "a", *args], tmp_path)
    run(["--out", "b", *args], tmp_path)
    assert (tmp_path / "a" / "traces.csv").read_text() == (tmp_path / "b" / "traces.csv").read_text()
