import pytest

from gcsl.config import KNOWN_KEYS, RunConfig, load_config, parse_config_text, parse_value
from gcsl.env import FourRooms
from gcsl.errors import ConfigError


@pytest.mark.parametrize("text, want", [
    ("true", True), ("False", False), ("none", None), ("42", 42), ("-3", -3), ("0.25", 0.25), ("1e-3", 1e-3),
    ("[400, 300]", [400, 300]), ("[]", []), ("grid-rooms", "grid-rooms"), ("'quoted # no'", "quoted # no"),
])
def test_parse_value(text, want):
    assert parse_value(text) == want


def test_parse_config_text():
    text = """
    # comment line
    env.name = four-rooms   # trailing comment
    env.horizon = 40
    policy.hidden = [64, 32]
    train.total_env_steps = 5000
    seed = 4
    """
    values = parse_config_text(text)
    assert values == {"env.name": "four-rooms", "env.horizon": 40, "policy.hidden": [64, 32],
                      "train.total_env_steps": 5000, "seed": 4}


@pytest.mark.parametrize("text, match", [
    ("bogus.key = 1", r"cfg:1: unknown config key 'bogus.key'"),
    ("seed = 1\nseed = 2", r"cfg:2: duplicate"),
    ("\nseed", r"cfg:2: expected"),
])
def test_parse_errors_name_line(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config_text(text, "cfg")


def test_missing_file_names_path(tmp_path):
    missing = tmp_path / "nope.cfg"
    with pytest.raises(ConfigError, match="nope.cfg"):
        load_config(missing)


def test_run_config_roundtrip(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("env.name = four-rooms\nenv.horizon = 20\npolicy.time_varying = true\n"
                    "train.ablation = limited-relabel\nbuffer.h_max = 2\nseed = 9\n")
    cfg = RunConfig.from_mapping(load_config(path))
    assert cfg.env_name == "four-rooms" and cfg.env_params == {"horizon": 20}
    assert cfg.train.ablation == "limited_relabel" and cfg.train.h_max == 2 and cfg.seed == 9
    assert cfg.train.time_varying
    again = RunConfig.from_mapping(cfg.to_mapping())
    assert again == cfg
    assert set(cfg.to_mapping()) <= KNOWN_KEYS
    env = cfg.make_env()
    assert isinstance(env, FourRooms) and env.horizon == 20


def test_overrides_and_validation():
    cfg = RunConfig().with_overrides({"seed": 3, "train.epsilon": None})
    assert cfg.seed == 3 and cfg.train.epsilon is None
    assert cfg.replace_train(seed=5).seed == 5
    with pytest.raises(ConfigError, match="invalid training configuration"):
        RunConfig.from_mapping({"train.batch_size": 0})
    with pytest.raises(ConfigError, match="unknown"):
        RunConfig.from_mapping({"train.nonsense": 1})


def test_bad_env_parameter():
    with pytest.raises(ConfigError):
        RunConfig.from_mapping({"env.name": "chain", "env.door_width": 0.1}).make_env()
