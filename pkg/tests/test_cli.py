import csv
import json
from pathlib import Path

import pytest

from epcusp.cli import (
    CSV_SCHEMAS,
    GATING_CONDITIONS,
    ConfigError,
    RunConfig,
    build_parser,
    git_blob_sha1,
    load_config,
    main,
    parse_sweep,
    sweep_config,
)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL = """\
[model]
closure = "isothermal"

[data]
epsilon = 0.05

[grid]
h = 2e-4
core_cells = 1.0
y_points = 1001
y_window = 20.0

[monitor]
enabled = false
bootstrap_samples = 100

[output]
snapshot_stride = 4
"""


def header(path):
    with open(path, newline="") as fh:
        return next(csv.reader(fh))


def test_defaults_and_validation():
    cfg = RunConfig.from_dict({})
    assert cfg.data.epsilon == [0.05]
    assert cfg.grid.h == 1e-4
    assert cfg.closure().kind == "isothermal"
    bad = [
        {"model": {"closure": "polytropic"}},
        {"model": {"K": 0}},
        {"data": {"epsilon": 0.5}},
        {"data": {"epsilon": []}},
        {"model": {"closure": "isentropic"}, "data": {"kappa0": 0.5}},
        {"grid": {"y_points": 1000}},
        {"solver": {"cfl": 2.0}},
        {"solver": {"frame_velocity": "fast"}},
        {"grid": {"h": "small"}},
        {"monitor": {"enabled": 1}},
        {"output": {"snapshot_stride": 1.5}},
    ]
    for raw in bad:
        with pytest.raises(ConfigError):
            RunConfig.from_dict(raw)


def test_unknown_keys_are_named():
    with pytest.raises(ConfigError, match="colour"):
        RunConfig.from_dict({"grid": {"colour": 1}})
    with pytest.raises(ConfigError, match="plots"):
        RunConfig.from_dict({"plots": {}})


def test_epsilon_list_and_integer_coercion():
    cfg = RunConfig.from_dict({"data": {"epsilon": [0.05, 0.02]}, "grid": {"core_cells": 4}})
    assert cfg.data.epsilon == [0.05, 0.02]
    assert isinstance(cfg.grid.core_cells, float)


def test_shipped_configs_load():
    for p in sorted(CONFIGS.glob("*.toml")):
        cfg, raw = load_config(p)
        assert raw == p.read_bytes()


def test_json_mirror_matches_toml():
    a, _ = load_config(CONFIGS / "isothermal_eps005.toml")
    b, _ = load_config(CONFIGS / "isothermal_eps005.json")
    assert a.to_dict() == b.to_dict()


def test_config_hash_is_git_blob_sha1():
    assert git_blob_sha1(b"") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391"
    assert git_blob_sha1(b"hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a"


def test_unreadable_or_malformed_config(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.toml")]) == 2
    p = tmp_path / "broken.toml"
    p.write_text("[model\n")
    assert main(["run", "--config", str(p)]) == 2
    assert "config error" in capsys.readouterr().err


def test_bad_z0_rejected_by_validation(capsys):
    code = main(["run", "--config", str(CONFIGS / "bad_z0.toml"), "--validate-only"])
    assert code == 2
    assert "z0_C4" in capsys.readouterr().err


def test_validate_only_passes_canonical_data(capsys):
    code = main(["run", "--config", str(CONFIGS / "isothermal_eps005.toml"), "--validate-only"])
    out = capsys.readouterr().out
    assert code == 0
    for name in GATING_CONDITIONS:
        if name != "init_gen_6":
            assert f"[gate] {name}" in out
    assert "[info] 1D4" in out


def test_sweep_parsing():
    assert parse_sweep("epsilon=0.05,0.02") == ("epsilon", [0.05, 0.02])
    assert parse_sweep("resolution=") == ("resolution", [])
    for bad in ("epsilon", "kappa=1", "epsilon=a,b"):
        with pytest.raises(ConfigError):
            parse_sweep(bad)
    cfg = RunConfig.from_dict({})
    c, eps = sweep_config(cfg, "resolution", 2.0)
    assert c.grid.h == 5e-5 and eps == 0.05 and cfg.grid.h == 1e-4
    c, eps = sweep_config(cfg, "epsilon", 0.02)
    assert eps == 0.02 and c.data.epsilon == [0.02]
    with pytest.raises(ConfigError):
        sweep_config(cfg, "epsilon", 0.3)


def test_empty_sweep_is_a_no_op(tmp_path, capsys):
    out = tmp_path / "sw"
    code = main(["sweep", "--config", str(CONFIGS / "isothermal_eps005.toml"),
                 "--sweep", "epsilon=", "--out", str(out)])
    assert code == 0
    assert not out.exists()
    assert main(["sweep", "--config", str(CONFIGS / "isothermal_eps005.toml")]) == 2


def test_parser_requires_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "small.toml"
    cfg.write_text(SMALL)
    out = d / "out"
    code = main(["run", "--config", str(cfg), "--out", str(out)])
    return code, cfg, out


def test_end_to_end_outputs(small_run):
    code, cfg, out = small_run
    assert code == 0
    for name in ("manifest.json", "report.json", "validation.json", "rates.csv",
                 "residuals.csv", "profile.csv", "final_state.csv", "rates.svg"):
        assert (out / name).is_file(), name
    snaps = sorted((out / "snapshots").glob("snap_*.csv"))
    assert snaps
    assert header(snaps[0]) == CSV_SCHEMAS["snapshots/snap_NNN.csv"]
    for name in ("final_state.csv", "rates.csv", "residuals.csv", "profile.csv"):
        assert header(out / name) == CSV_SCHEMAS[name], name


def test_manifest_contents(small_run):
    _, cfg, out = small_run
    m = json.loads((out / "manifest.json").read_text())
    assert m["config_sha1"] == git_blob_sha1(cfg.read_bytes())
    assert m["status"] == "ok"
    run = m["run"]
    assert run["stop_cause"] == "gradient_ceiling"
    assert run["energy_ledger_columns"] == ["t", "H", "relative_drift", "boundary_work"]
    assert len(run["energy_ledger"]) > 5
    assert run["max_energy_drift"] < 1e-5
    rep = json.loads((out / "report.json").read_text())
    assert {"T_star", "grad_rate_exponent", "holder_exponents", "energy_drift"} <= set(rep)
