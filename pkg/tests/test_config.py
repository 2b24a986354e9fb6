import pytest

from dhwflex import config


def test_defaults_validate_and_materialise(tmp_path):
    cfg = config.from_dict({})
    assert [c.size for c in cfg.fleet.clusters] == [100, 100]
    assert cfg.mpc.horizon == 4 and cfg.rl.history_days == 18
    p = tmp_path / "eff.yaml"
    config.dump(cfg, p)
    again = config.load(p)
    assert again.to_dict() == cfg.to_dict()


def test_partial_override_keeps_other_defaults():
    cfg = config.from_dict({"scenario": {"days": 3, "channel": {"p_drop": 0.1}}})
    assert cfg.scenario.days == 3 and cfg.scenario.channel.p_drop == 0.1
    assert cfg.scenario.channel.delay_min == 2.0 and cfg.scenario.seed == 0


def test_int_accepted_for_float_fields():
    cfg = config.from_dict({"fleet": {"ambient_temp": 18}})
    assert isinstance(cfg.fleet.ambient_temp, float)


@pytest.mark.parametrize("data,msg", [
    ({"fleet": {"colour": 1}}, "fleet: unknown key"),
    ({"bogus": {}}, "unknown key"),
    ({"scenario": {"days": "two"}}, "scenario.days: expected an integer"),
    ({"scenario": {"days": 1.5}}, "scenario.days: expected an integer"),
    ({"scenario": {"freeze_models": 1}}, "expected true/false"),
    ({"mpc": {"epsilon": True}}, "expected a number"),
    ({"fleet": {"clusters": {"a": 1}}}, "expected a list"),
    ({"fleet": {"clusters": [{"name": "x", "kind": "factory"}]}}, "unknown kind"),
    ({"fleet": {"clusters": [{"name": "x"}, {"name": "x"}]}}, "unique"),
    ({"fleet": {"bounds": {"lower": 90.0}}}, "hard_lower < lower < upper"),
    ({"mpc": {"window_len": 600.0}}, "900"),
    ({"mpc": {"step_len": 70.0}}, "whole multiple"),
    ({"rl": {"time_encoding": "polar"}}, "raw or cyclic"),
    ({"rl": {"gamma": 0.0}}, "gamma"),
    ({"scenario": {"channel": {"p_drop": 2.0}}}, "p_drop"),
    ({"scenario": {"wind": {"error_reference": "moon"}}}, "baseline or nominal"),
    ({"scenario": {"days": 0}}, "days"),
    ({"fleet": "big"}, "expected a mapping"),
])
def test_invalid_configs_rejected(data, msg):
    with pytest.raises(config.ConfigError, match=msg):
        config.from_dict(data)


def test_load_errors_name_the_path(tmp_path):
    missing = tmp_path / "nope.yaml"
    with pytest.raises(config.ConfigError, match="nope.yaml"):
        config.load(missing)
    bad = tmp_path / "bad.yaml"
    bad.write_text("fleet: [unclosed\n")
    with pytest.raises(config.ConfigError, match="bad.yaml: invalid YAML"):
        config.load(bad)


def test_empty_file_means_defaults(tmp_path):
    p = tmp_path / "empty.yaml"
    p.write_text("")
    assert config.load(p).to_dict() == config.from_dict({}).to_dict()
