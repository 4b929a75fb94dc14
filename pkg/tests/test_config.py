import pytest

from solmplan.config import ConfigError, RunConfig, load_config, parse_config
from solmplan.lidar import LIDAR_PRESETS


def test_empty_config_is_defaults(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("")
    assert load_config(path) == RunConfig()
    assert load_config(None) == RunConfig()


@pytest.mark.parametrize("data", [{"bogus": 1}, {"planner": {"rho": 1.0}}, {"optimizer": {"alm": {}}}])
def test_unknown_keys_rejected(data):
    with pytest.raises(ConfigError):
        parse_config(data)


def test_invalid_values_rejected():
    with pytest.raises(ConfigError):
        parse_config({"metric": {"strategy": "median"}})
    with pytest.raises(ConfigError):
        parse_config({"grid": {"resolution": 0}})
    with pytest.raises(ConfigError):
        parse_config({"optimizer": {"heading": "sideways"}})


def test_top_level_must_be_mapping(tmp_path):
    path = tmp_path / "list.yaml"
    path.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(path)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "none.yaml")


def test_dotted_overrides():
    cfg = RunConfig().with_overrides(**{"planner.rho_q": 0.0, "seed": 7, "grid.yaw_channels": None})
    assert cfg.planner.rho_q == 0.0 and cfg.seed == 7
    assert cfg.grid.yaw_channels is None
    with pytest.raises(ConfigError):
        RunConfig().with_overrides(**{"planner.rho_q": -1.0})


def test_custom_lidar_block():
    cfg = parse_config({"lidar": "narrow", "lidar_presets": {"narrow": {"h_fov_deg": 30.0}}})
    assert cfg.lidar_model().h_fov_deg == 30.0
    with pytest.raises(ConfigError):
        RunConfig(lidar="nope").lidar_model()
    assert RunConfig(lidar="spin-360").lidar_model() == LIDAR_PRESETS["spin-360"]


def test_yaw_channels_follow_sensor():
    assert RunConfig(lidar="spin-360").yaw_channels() == 1
    assert RunConfig(lidar="mid70-like").yaw_channels() == 8
    assert parse_config({"grid": {"yaw_channels": 4}}).yaw_channels() == 4


def test_heading_mode():
    cfg = RunConfig()
    assert cfg.heading_mode(1) == "blend"
    assert cfg.heading_mode(8) == "path"
    assert parse_config({"optimizer": {"robot": "nonholonomic"}}).heading_mode(8) == "tangent"
    assert parse_config({"optimizer": {"heading": "tangent"}}).heading_mode(1) == "tangent"


def test_baseline_drops_loss():
    cfg = RunConfig()
    assert cfg.opt_params().loss_weight == 1.0
    assert cfg.opt_params(baseline=True).loss_weight == 0.0
    assert cfg.opt_params().r_safe == cfg.planner.r_safe
