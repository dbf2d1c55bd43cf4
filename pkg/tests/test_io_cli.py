import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sos_layering import cli
from sos_layering.io import (
    SCHEMAS, ConfigError, OutputError, RunConfig, csv_text, fmt, parse_config, to_json, write_csv,
)


# --- configuration -----------------------------------------------------------

def test_required_flags_with_empty_file():
    cfg = parse_config("layering locate", {}, {"n": 1})
    assert cfg.params == {"beta": 2.5, "n": 1, "lmax": 14}
    assert cfg.globals["digits"] == 17


def test_validation_errors():
    with pytest.raises(ConfigError, match="beta"):
        parse_config("exact z", {"domain": "2x2", "beta": -1})
    with pytest.raises(ConfigError, match="unknown"):
        parse_config("exact z", {"domain": "2x2", "beta": 1.0, "gamma": 2})
    with pytest.raises(ConfigError, match="missing"):
        parse_config("exact z", {"domain": "2x2"})
    with pytest.raises(ConfigError, match="integer"):
        parse_config("layering locate", {"n": 1.5})
    with pytest.raises(ConfigError):
        parse_config("expansion free-energy", {"beta": 1.0, "lmax": 7})
    with pytest.raises(ConfigError):
        parse_config("no such", {})


def test_flags_override_file_and_both_are_kept():
    cfg = parse_config("exact z", {"domain": "2x2", "beta": 1.0, "u": 0.3}, {"u": 0.1, "level": None})
    assert cfg.params["u"] == 0.1
    assert cfg.sources["file"]["u"] == 0.3 and cfg.sources["flags"]["u"] == 0.1


@settings(max_examples=60, deadline=None)
@given(st.floats(1e-3, 50.0), st.floats(-5.0, 5.0), st.integers(0, 6), st.sampled_from([4, 6, 8, 12, 16]),
       st.booleans(), st.one_of(st.none(), st.integers(0, 2 ** 31)))
def test_config_roundtrip(beta, u, level, lmax, truncated, seed):
    cfg = parse_config("expansion free-energy",
                       {"beta": beta, "u": u, "level": level, "lmax": lmax, "truncated": truncated, "seed": seed})
    again = RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again.to_dict() == cfg.to_dict()


def test_every_schema_parses_its_defaults():
    required = {"window": "2x2", "max_len": 4, "domain": "2x2", "beta": 1.0, "u_grid": "0:1:2",
                "n": 1, "size": "2x2", "sweeps": 10}
    for cmd, schema in SCHEMAS.items():
        vals = {k: required[k] for k, key in schema.items() if key.required}
        cfg = parse_config(cmd, vals)
        assert set(cfg.params) == set(schema)


# --- writers -----------------------------------------------------------------

def test_header_only_csv():
    assert csv_text(["a", "b"], []) == "a,b\n"


def test_seventeen_digits_roundtrip():
    for x in (0.1, 1 / 3, math.pi * 1e-20, 2.0 ** -1074, 1e300):
        s = fmt(x)
        assert float(s) == x
    assert fmt(0.1) == "0.10000000000000001"
    assert fmt(np.float64(0.5)) == "0.5" and fmt(np.int64(3)) == "3"
    assert fmt(None) == "" and fmt(True) == "true" and fmt(-math.inf) == "-inf"


def test_json_non_finite_and_nesting():
    text = to_json({"a": [1, 2.5, math.inf], "b": {"c": None}, "d": []})
    assert json.loads(text) == {"a": [1, 2.5, "inf"], "b": {"c": None}, "d": []}


def test_csv_schema_enforced(tmp_path):
    with pytest.raises(ValueError):
        csv_text(["a"], [{"a": 1, "b": 2}])
    with pytest.raises(ValueError):
        csv_text(["a", "b"], [[1]])
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OutputError, match="file"):
        write_csv(blocker / "sub" / "t.csv", ["a"], [])


# --- command line ------------------------------------------------------------

def run(argv):
    out = io.StringIO()
    code = cli.run(argv, stdout=out)
    return code, out.getvalue()


def numeric_files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "manifest.json"}


def test_contours_enumerate_and_manifest(tmp_path):
    code, text = run(["contours", "enumerate", "--window", "2x2", "--max-len", "8", "--out", str(tmp_path)])
    assert code == 0 and text.strip().endswith("count 28")
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["config"]["params"] == {"window": "2x2", "max_len": 8, "anchor": None}
    assert man["outputs"][0]["path"].endswith("contours.txt")


def test_validation_exit_code(tmp_path):
    assert run(["exact", "z", "--domain", "2x2", "--beta", "-1"])[0] == cli.EXIT_VALIDATION
    assert run(["mcmc", "run", "--size", "2x2", "--beta", "1", "--sweeps", "50",
                "--out", str(tmp_path)])[0] == cli.EXIT_VALIDATION
    assert run(["exact", "z", "--domain", "2by2", "--beta", "1"])[0] == cli.EXIT_VALIDATION


def test_io_exit_code(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    code, _ = run(["exact", "z", "--domain", "2x2", "--beta", "1", "--out", str(blocker / "sub")])
    assert code == cli.EXIT_IO
    assert run(["exact", "z", "--config", str(tmp_path / "missing.json")])[0] == cli.EXIT_IO


def test_unresolved_exit_code(tmp_path):
    code, text = run(["layering", "locate", "--n", "3", "--lmax", "8", "--out", str(tmp_path)])
    assert code == cli.EXIT_UNRESOLVED
    assert json.loads(text)["status"] == "unresolved"
    assert (tmp_path / "layering.json").exists()


def test_config_file_with_flag_override(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"domain": "2x2", "beta": 1.0, "u": 0.3}))
    code, text = run(["exact", "z", "--config", str(conf), "--u", "0.1", "--out", str(tmp_path / "o")])
    assert code == 0
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["config"]["params"]["u"] == 0.1
    assert man["config_sources"]["file"]["u"] == 0.3
    assert str(conf) in man["inputs"]
    direct = run(["exact", "z", "--domain", "2x2", "--beta", "1", "--u", "0.1"])[1]
    assert direct == text


def test_threads_env_recorded(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.THREADS_ENV, "3")
    run(["exact", "z", "--domain", "1x1", "--beta", "1", "--out", str(tmp_path)])
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["config"]["globals"]["threads"] == 3


@pytest.mark.parametrize("argv", [
    ["exact", "z", "--domain", "3x2", "--beta", "1.3", "--u", "0.2"],
    ["expansion", "free-energy", "--beta", "2", "--lmax", "8"],
    ["weights", "scan", "--beta", "2", "--level", "1", "--max-len", "6", "--u-grid", "0:0.01:4"],
    ["mcmc", "run", "--size", "4x4", "--beta", "1", "--sweeps", "400", "--seed", "5",
     "--observables", "contact,height,center,histogram,percolation", "--percolation-every", "50"],
])
def test_reruns_are_byte_identical(tmp_path, argv):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(argv + ["--out", str(a)])[0] == 0
    assert run(argv + ["--out", str(b)])[0] == 0
    fa, fb = numeric_files(a), numeric_files(b)
    assert fa and fa == fb


def test_mcmc_resume(tmp_path):
    base = ["mcmc", "run", "--size", "3x3", "--beta", "1", "--seed", "2", "--burn-in", "0"]
    assert run(base + ["--sweeps", "200", "--out", str(tmp_path / "whole"),
                       "--checkpoint", str(tmp_path / "whole.txt")])[0] == 0
    assert run(base + ["--sweeps", "100", "--out", str(tmp_path / "a"),
                       "--checkpoint", str(tmp_path / "half.txt")])[0] == 0
    assert run(base + ["--sweeps", "100", "--out", str(tmp_path / "b"), "--resume", str(tmp_path / "half.txt"),
                       "--checkpoint", str(tmp_path / "resumed.txt")])[0] == 0
    whole = (tmp_path / "whole.txt").read_text().splitlines()
    resumed = (tmp_path / "resumed.txt").read_text().splitlines()
    assert resumed == whole
    bad = ["mcmc", "run", "--size", "4x4", "--beta", "1", "--seed", "2", "--sweeps", "10",
           "--resume", str(tmp_path / "half.txt"), "--out", str(tmp_path / "d")]
    assert run(bad)[0] == cli.EXIT_VALIDATION
