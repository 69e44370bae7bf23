import filecmp
import json
from pathlib import Path

import pytest

from mfgprice import cli
from mfgprice.config import (
    OUTPUT_ENV,
    ConfigError,
    dump_config,
    fig1_config,
    load_config,
    parse_config,
)
from mfgprice.model import Tabulated
from mfgprice.verify import Check

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL = """\
model:
  c: 1.0
  T: 1.0
  q_bar: 1.0
  supply_drift: {k0: 1.0, k1: -1.0, k2: 0.0}
  supply_vol: {k0: 0.0, k1: 1.0, k2: 0.0}
  terminal:
    c1: [0.0, 0.0, 0.0]
    c2: [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]
  agents: {family: gaussian, mean: 0.0, variance: 1.0}
experiment:
  alphas: [0.0, 0.5]
  seed: 3
  dt_ode: 0.01
  dt_sde: 0.01
  particles: 200
  martingale_paths: 100
  output_dir: small_out
"""


def write(tmp_path, text, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return path


# parsing

def test_parse_small_config():
    cfg = parse_config(SMALL)
    assert cfg.alphas == (0.0, 0.5)
    assert cfg.seed == 3 and cfg.model.agents.seed == 3
    assert cfg.particles == 200
    assert cfg.spec_for(0.5).terminal.c1 == (-1.0, 0.0, 0.0)


def test_fig1_file_matches_preset():
    assert load_config(CONFIGS / "fig1.yaml") == fig1_config()


def test_dump_round_trip():
    cfg = parse_config(SMALL)
    assert parse_config(dump_config(cfg)) == cfg


def test_tabulated_coefficient():
    cfg = parse_config(SMALL.replace("k0: 1.0, k1: -1.0", "k0: [1.0, 2.0, 1.5], k1: -1.0"))
    fn = cfg.model.supply_drift.k0
    assert isinstance(fn, Tabulated) and fn(0.25) == pytest.approx(1.5)


@pytest.mark.parametrize("old, new, expected", [
    ("  c: 1.0\n", "  c: -1.0\n", "cfg.yaml:2: c must be positive"),
    ("  T: 1.0\n", "  T: 1.0\n  colour: red\n", "cfg.yaml:4: model.colour: unknown key"),
    ("  q_bar: 1.0\n", "  q_bar: lots\n", "cfg.yaml:4: model.q_bar: expected a number, got 'lots'"),
    ("  particles: 200\n", "  particles: 1\n", "cfg.yaml:16: particles must be at least 2"),
    ("    c2: [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]\n", "    c2: [1.0, 0.0]\n",
     "cfg.yaml:9: model.terminal.c2: expected 6 numbers, got 2"),
])
def test_errors_are_line_anchored(old, new, expected):
    with pytest.raises(ConfigError) as exc:
        parse_config(SMALL.replace(old, new), source="cfg.yaml")
    assert expected in exc.value.violations


def test_empty_alphas_rejected():
    with pytest.raises(ConfigError) as exc:
        parse_config(SMALL.replace("alphas: [0.0, 0.5]", "alphas: []"), source="cfg.yaml")
    assert exc.value.violations == ["cfg.yaml:12: alphas must be non-empty"]


def test_yaml_syntax_error_has_line():
    with pytest.raises(ConfigError) as exc:
        parse_config(SMALL.replace("  T: 1.0\n", "  T: [1.0\n"), source="cfg.yaml")
    assert exc.value.violations[0].startswith("cfg.yaml:")
    assert "YAML syntax error" in exc.value.violations[0]


def test_env_overrides_only_output_dir(tmp_path, monkeypatch):
    path = write(tmp_path, SMALL)
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "elsewhere"))
    cfg = load_config(path)
    assert cfg.output_dir == str(tmp_path / "elsewhere")
    monkeypatch.delenv(OUTPUT_ENV)
    base = load_config(path)
    assert base.output_dir == "small_out"
    assert cfg.model == base.model and cfg.seed == base.seed and cfg.alphas == base.alphas


# command line

def run_cli(*argv):
    return cli.main([str(a) for a in argv])


def test_run_writes_artifacts(tmp_path, capsys):
    path = write(tmp_path, SMALL)
    out = tmp_path / "out"
    assert run_cli("run", path, "--out", out) == 0
    names = sorted(p.name for p in out.iterdir())
    assert "paths_alpha=0.5_seed=3.csv" in names and "summary.json" in names and "fig1.svg" in names
    header = (out / "paths_alpha=0_seed=3.csv").read_text().splitlines()[0]
    assert header == "t,Q,price,Pi,mean_holdings,clearing_residual"
    summary = json.loads((out / "summary.json").read_text())
    assert summary["w_bar"][0] == pytest.approx(-3.0, abs=1e-6)
    assert "alpha=  0.5" in capsys.readouterr().out


def test_flags_override_config(tmp_path):
    path = write(tmp_path, SMALL)
    out = tmp_path / "out"
    assert run_cli("run", path, "--out", out, "--seed", 9, "--dt-sde", 0.02, "--particles", 50) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert (summary["seed"], summary["dt_sde"], summary["particles"]) == (9, 0.02, 50)
    assert (out / "paths_alpha=0_seed=9.csv").exists()


def test_out_flag_beats_env(tmp_path, monkeypatch):
    path = write(tmp_path, SMALL)
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    assert run_cli("run", path) == 0
    assert (tmp_path / "env" / "summary.json").exists()
    assert run_cli("run", path, "--out", tmp_path / "flag") == 0
    assert (tmp_path / "flag" / "summary.json").exists()


def test_validation_exit_code(tmp_path, capsys):
    path = write(tmp_path, SMALL.replace("alphas: [0.0, 0.5]", "alphas: []"))
    assert run_cli("run", path, "--out", tmp_path / "o") == cli.EXIT_VALIDATION
    assert "alphas must be non-empty" in capsys.readouterr().err
    assert run_cli("run", path.with_name("cfg.yaml"), "--particles", 1) == cli.EXIT_VALIDATION


def test_riccati_blowup_exit_code(tmp_path, capsys):
    text = SMALL.replace("  T: 1.0\n", "  T: 5.0\n").replace("c2: [1.0,", "c2: [-1.0,")
    text = text.replace("dt_ode: 0.01", "dt_ode: 0.05").replace("dt_sde: 0.01", "dt_sde: 0.05")
    path = write(tmp_path, text)
    assert run_cli("run", path, "--out", tmp_path / "o") == cli.EXIT_NUMERICAL
    err = capsys.readouterr().err
    # t* = T - c / (2 |c2_1|)
    assert "Riccati blow-up" in err and "t = 4.5" in err


def test_singularity_exit_code(tmp_path, capsys):
    text = SMALL.replace("k0: 1.0, k1: -1.0, k2: 0.0", "k0: 0.0, k1: 0.0, k2: -1.0")
    text = text.replace("c2: [1.0, 0.0, 0.0,", "c2: [0.0, 0.0, -0.5,")
    assert run_cli("run", write(tmp_path, text), "--out", tmp_path / "o") == cli.EXIT_NUMERICAL
    assert "singularity floor" in capsys.readouterr().err


def test_strict_failure_exit_code(tmp_path, monkeypatch):
    import mfgprice.verify

    monkeypatch.setattr(mfgprice.verify, "run_checks",
                        lambda *a, **k: [Check(1, "always fails", False, "forced")])
    path = write(tmp_path, SMALL)
    assert run_cli("run", path, "--out", tmp_path / "a") == cli.EXIT_OK
    assert run_cli("run", path, "--out", tmp_path / "b", "--strict") == cli.EXIT_ACCEPTANCE
    assert run_cli("verify", path, "--strict") == cli.EXIT_ACCEPTANCE
    assert run_cli("verify", path) == cli.EXIT_OK


def test_rerun_is_byte_identical(tmp_path):
    path = write(tmp_path, SMALL)
    assert run_cli("run", path, "--out", tmp_path / "a") == 0
    assert run_cli("run", path, "--out", tmp_path / "b", "--threads", 3) == 0
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    assert cmp.left_list == cmp.right_list
    assert not filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", cmp.common_files, shallow=False)[1]


@pytest.mark.slow
def test_fig1_config_file_matches_preset(tmp_path):
    assert run_cli("fig1", "--out", tmp_path / "preset") == 0
    assert run_cli("run", CONFIGS / "fig1.yaml", "--out", tmp_path / "file") == 0
    names = sorted(p.name for p in (tmp_path / "preset").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "file").iterdir())
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "preset", tmp_path / "file", names, shallow=False)
    assert not mismatch and not errors
