import json

import pytest

from omnimvs.config import PROFILES, RunConfig, env_overrides, resolve
from omnimvs.network import ConfigError


def test_defaults_reproduce_desk_profile():
    cfg = RunConfig()
    grid = cfg.sweep_grid()
    assert (grid.height, grid.width, grid.num_spheres, grid.stride) == (32, 128, 16, 2)
    assert grid.inv_depth_max == PROFILES["desk"].inv_depth_max
    net = cfg.network_config()
    assert net.image_size == (128, 128) and net.encoder_depth == 4
    assert cfg.load_rig()[0].image_size == (128, 128)
    assert (cfg.base_lr(), cfg.momentum, cfg.p1, cfg.p2) == (0.03, 0.9, 0.1, 12.0)


def test_paper_profile():
    cfg = RunConfig(profile="paper")
    grid = cfg.sweep_grid()
    assert (grid.height, grid.width, grid.num_spheres) == (160, 640, 192)
    assert cfg.network_config().encoder_channels == (64, 128, 128, 128, 256)
    assert cfg.base_lr() == 0.003


def test_lr_schedule():
    cfg = RunConfig(lr=0.003)
    assert cfg.lr_at(19) == 0.003 and cfg.lr_at(20) == pytest.approx(0.0003)
    assert RunConfig().lr_at(0) == PROFILES["desk"].learning_rate


def test_precedence(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"seed": 1, "method": "stitch", "patch": 7}))
    env = {"OMNIMVS_SEED": "2", "OMNIMVS_PATCH": "5"}
    cfg = resolve({"seed": 3, "patch": None}, path, env)
    assert (cfg.seed, cfg.patch, cfg.method) == (3, 5, "stitch")


def test_env_coercion():
    env = {"OMNIMVS_DMAX": "1.25", "OMNIMVS_PLOTS": "off", "OMNIMVS_STEPS": "none",
           "OMNIMVS_GRID": "8x32x8", "UNRELATED": "x"}
    assert env_overrides(env) == {"dmax": 1.25, "plots": False, "steps": None,
                                  "grid": "8x32x8"}
    with pytest.raises(ConfigError):
        env_overrides({"OMNIMVS_PLOTS": "maybe"})
    with pytest.raises(ConfigError):
        env_overrides({"OMNIMVS_SEED": "seven"})


@pytest.mark.parametrize("bad", [{"profile": "x"}, {"method": "x"}, {"dmax": 0.0},
                                 {"lr": -1.0}, {"momentum": 1.0}, {"seed": -1},
                                 {"patch": 4}, {"frames": 0}])
def test_validation(bad):
    with pytest.raises(ConfigError):
        RunConfig(**bad)


def test_config_file_errors(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"colour": "blue"}))
    with pytest.raises(ConfigError, match="unknown config keys"):
        resolve({}, path, {})
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        resolve({}, path, {})


def test_bad_grid_is_config_error():
    with pytest.raises(ConfigError):
        RunConfig(grid="12").sweep_grid()
