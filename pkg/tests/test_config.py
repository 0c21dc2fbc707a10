"""Config parsing, validation messages, and derived-object construction."""
import hashlib
import json

import numpy as np
import pytest

from chnslab.config import (ConfigError, control_signal, initial_state,
                            load_config, parse_config, with_seed)
from chnslab.control import (OptimizerConfig, save_value_estimate,
                             value_estimate)
from chnslab.integrator import SchemeConfig, spinodal_state, write_snapshot, rest_state
from chnslab.operators import Params


def test_empty_config_resolves_all_defaults():
    cfg = parse_config({})
    assert cfg.grid.shape == (64, 64)
    assert cfg.grid.L == pytest.approx(2.0 * np.pi)
    assert cfg.params == Params(nu=1.0, mobility=1.0, capillary=1.0, R=0.0)
    assert cfg.scheme.dt == 1e-3
    assert cfg.window == (0.0, 1.0)
    assert cfg.init_kind == "spinodal"
    assert cfg.optimizer == OptimizerConfig()
    assert cfg.out_dir == "out"


def test_schema_violation_reports_the_path():
    with pytest.raises(ConfigError, match="time/dt"):
        parse_config({"time": {"dt": 0.0}})
    with pytest.raises(ConfigError, match="grid/nx"):
        parse_config({"grid": {"nx": -4}})
    with pytest.raises(ConfigError, match="Additional properties"):
        parse_config({"grid": {"resolution": 64}})
    with pytest.raises(ConfigError):
        parse_config({"init": {"kind": "vortex"}})


def test_cross_field_checks():
    with pytest.raises(ConfigError, match="t_end"):
        parse_config({"time": {"t_start": 1.0, "t_end": 0.5}})
    with pytest.raises(ConfigError, match="elites"):
        parse_config({"optimizer": {"population": 4, "elites": 8}})
    with pytest.raises(ConfigError, match="init.path"):
        parse_config({"init": {"kind": "file"}})
    with pytest.raises(ConfigError, match="control.path"):
        parse_config({"control": {"kind": "file"}})


def test_constructor_errors_become_config_errors():
    # odd grid size fails inside GridSpec, surfaced as a config problem
    with pytest.raises(ConfigError):
        parse_config({"grid": {"nx": 9, "ny": 9}})


def test_load_config_hashes_raw_bytes(tmp_path):
    doc = {"grid": {"nx": 16, "ny": 16}, "time": {"t_end": 0.1}}
    path = tmp_path / "run.json"
    blob = json.dumps(doc).encode()
    path.write_bytes(blob)
    cfg = load_config(str(path))
    assert cfg.sha256 == hashlib.sha256(blob).hexdigest()
    assert cfg.grid.shape == (16, 16)


def test_load_config_error_cases(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(str(tmp_path / "absent.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config(str(bad))
    arr = tmp_path / "arr.json"
    arr.write_text("[1, 2]")
    with pytest.raises(ConfigError, match="JSON object"):
        load_config(str(arr))


def test_with_seed_overrides_both_seeds():
    cfg = parse_config({"init": {"seed": 1}, "optimizer": {"seed": 2}})
    out = with_seed(cfg, 9)
    assert out.init_seed == 9
    assert out.optimizer.seed == 9
    assert out.sha256 == cfg.sha256
    # the original is untouched
    assert cfg.init_seed == 1


def test_initial_state_kinds(tmp_path):
    rest = parse_config({"init": {"kind": "rest"}, "grid": {"nx": 16, "ny": 16}})
    s = initial_state(rest)
    assert np.all(s.phi.values == 0.0)

    spin = parse_config({"init": {"kind": "spinodal", "amplitude": 0.3, "seed": 7},
                         "grid": {"nx": 16, "ny": 16}})
    s = initial_state(spin)
    expected = spinodal_state(spin.grid, amplitude=0.3, seed=7)
    assert np.array_equal(s.phi.values, expected.phi.values)

    snap = tmp_path / "start.bin"
    write_snapshot(str(snap), expected)
    filecfg = parse_config({"init": {"kind": "file", "path": str(snap)},
                            "grid": {"nx": 16, "ny": 16}})
    s = initial_state(filecfg)
    assert np.array_equal(s.phi.values, expected.phi.values)
    assert s.t == filecfg.t_start


def test_initial_state_file_errors(tmp_path):
    missing = parse_config({"init": {"kind": "file", "path": str(tmp_path / "no.bin")},
                            "grid": {"nx": 16, "ny": 16}})
    with pytest.raises(ConfigError, match="cannot load"):
        initial_state(missing)

    snap = tmp_path / "wrong_grid.bin"
    write_snapshot(str(snap), rest_state(parse_config({"grid": {"nx": 32, "ny": 32}}).grid))
    mismatched = parse_config({"init": {"kind": "file", "path": str(snap)},
                               "grid": {"nx": 16, "ny": 16}})
    with pytest.raises(ConfigError, match="does not match"):
        initial_state(mismatched)


def test_control_signal_zero_is_none():
    cfg = parse_config({"grid": {"nx": 16, "ny": 16}})
    assert control_signal(cfg) is None


def test_control_signal_from_file(tmp_path, pot):
    raw = {"grid": {"nx": 16, "ny": 16}, "params": {"R": 0.5},
           "time": {"dt": 2e-3, "t_end": 0.04}}
    cfg = parse_config(raw)
    s0 = initial_state(cfg)
    opt = OptimizerConfig(population=2, elites=1, iterations=1, fd_passes=0,
                          intervals=2)
    est = value_estimate(s0, cfg.window, cfg.params, cfg.scheme, opt, pot)
    path = tmp_path / "u.json"
    save_value_estimate(str(path), est)

    withfile = dict(raw)
    withfile["control"] = {"kind": "file", "path": str(path)}
    u = control_signal(parse_config(withfile))
    assert u.window == cfg.window
    assert u.modes == est.best_control.modes

    shifted = dict(withfile)
    shifted["time"] = {"dt": 2e-3, "t_end": 0.08}
    with pytest.raises(ConfigError, match="window"):
        control_signal(parse_config(shifted))


def test_control_signal_file_errors(tmp_path):
    cfg = parse_config({"grid": {"nx": 16, "ny": 16},
                        "control": {"kind": "file",
                                    "path": str(tmp_path / "no.json")}})
    with pytest.raises(ConfigError, match="cannot load"):
        control_signal(cfg)
    garbage = tmp_path / "garbage.json"
    garbage.write_text('{"value": 1.0}')
    cfg2 = parse_config({"grid": {"nx": 16, "ny": 16},
                         "control": {"kind": "file", "path": str(garbage)}})
    with pytest.raises(ConfigError):
        control_signal(cfg2)
