import json

import pytest

from contractfl import config
from contractfl.errors import ConfigurationError


def test_default_round_trip():
    cfg = config.ExperimentConfig()
    again = config.ExperimentConfig.from_dict(cfg.to_dict())
    assert again == cfg
    assert again.to_dict() == cfg.to_dict()


def test_from_dict_partial_sections():
    cfg = config.ExperimentConfig.from_dict(
        {"seed": 3, "market": {"levels": 4}, "gate": {"phi": 2.5}})
    assert cfg.seed == 3
    assert cfg.market.levels == 4
    assert cfg.market.xi == config.MarketConfig().xi
    assert cfg.gate.phi == 2.5


def test_from_dict_unknown_top_level_key():
    with pytest.raises(ConfigurationError, match="bogus"):
        config.ExperimentConfig.from_dict({"bogus": 1})


def test_from_dict_unknown_nested_key_names_path():
    with pytest.raises(ConfigurationError, match="market.lambda3"):
        config.ExperimentConfig.from_dict({"market": {"lambda3": 1.0}})


def test_dataset_kind_validated():
    with pytest.raises(ConfigurationError, match="synthetic"):
        config.DatasetConfig(kind="cifar")


def test_apply_overrides_json_and_bare_string():
    cfg = config.ExperimentConfig()
    out = config.apply_overrides(cfg, [
        "rounds=7",
        "market.lambda1=1e5",
        "dataset.kind=synthetic",
        "attack.count=2",
    ])
    assert out.rounds == 7
    assert out.market.lambda1 == 1e5
    assert out.dataset.kind == "synthetic"
    assert out.attack.count == 2
    # original untouched
    assert cfg.rounds == config.ExperimentConfig().rounds


def test_apply_overrides_bad_path():
    cfg = config.ExperimentConfig()
    with pytest.raises(ConfigurationError, match="market.nope"):
        config.apply_overrides(cfg, ["market.nope=1"])
    with pytest.raises(ConfigurationError, match="="):
        config.apply_overrides(cfg, ["no_equals_sign"])


def test_apply_overrides_nested_two_deep():
    cfg = config.ExperimentConfig()
    out = config.apply_overrides(cfg, ["timing.delta_t=8.0"])
    assert out.timing.delta_t == 8.0


def test_apply_overrides_rejects_wrong_value_types():
    cfg = config.ExperimentConfig()
    with pytest.raises(ConfigurationError, match="rounds.*integer"):
        config.apply_overrides(cfg, ["rounds=abc"])
    with pytest.raises(ConfigurationError, match="training.lr.*number"):
        config.apply_overrides(cfg, ["training.lr=fast"])
    with pytest.raises(ConfigurationError, match="dataset.kind.*string"):
        config.apply_overrides(cfg, ["dataset.kind=3"])
    # bool is an int subclass but makes no sense as a count
    with pytest.raises(ConfigurationError, match="attack.count"):
        config.apply_overrides(cfg, ["attack.count=true"])


def test_apply_overrides_coerces_compatible_numbers():
    cfg = config.ExperimentConfig()
    out = config.apply_overrides(cfg, [
        "rounds=7.0",            # integral float narrows to int
        "training.lr=1",         # int widens to float
        "dataset.subset=null",   # optional field accepts null
    ])
    assert out.rounds == 7 and isinstance(out.rounds, int)
    assert out.training.lr == 1.0 and isinstance(out.training.lr, float)
    assert out.dataset.subset is None


def test_presets_exist_and_differ():
    assert set(config.PRESETS) == {"desk", "paper-noattack", "paper-attack30"}
    desk = config.PRESETS["desk"]()
    assert desk.dataset.kind == "synthetic"
    assert desk.rounds == 30
    assert desk.timing.delta_t == 16.0
    assert desk.partition.num_clients == 20
    assert desk.market.levels == 5
    pa = config.PRESETS["paper-attack30"]()
    pn = config.PRESETS["paper-noattack"]()
    assert pa.attack.count == 30
    assert pn.attack.count == 0
    assert pa.dataset.kind == "mnist"
    assert pn.rounds == 300


def test_resolve_config_precedence(tmp_path):
    patch = tmp_path / "patch.json"
    patch.write_text(json.dumps({"rounds": 11, "market": {"xi": 3.0}}))
    cfg = config.resolve_config("desk", str(patch), ["rounds=13"])
    assert cfg.rounds == 13           # override beats file
    assert cfg.market.xi == 3.0       # file beats preset
    assert cfg.timing.delta_t == 16.0  # preset survives where not patched


def test_resolve_config_defaults_to_desk():
    assert config.resolve_config(None, None, []) == config.preset_desk()


def test_load_config_bad_json(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    with pytest.raises(ConfigurationError, match="broken.json"):
        config.load_config(str(p))


def test_load_config_unknown_key(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"market": {"levls": 10}}))
    with pytest.raises(ConfigurationError, match="levls"):
        config.resolve_config("desk", str(p), [])


def test_market_config_to_market():
    m = config.MarketConfig().to_market()
    assert m.n_levels == 10
    assert m.theta[0] == pytest.approx(0.1)
    assert m.theta[-1] == pytest.approx(1.0)
    assert sum(m.p) == pytest.approx(1.0)


def test_quality_and_curve_params():
    qp = config.QualityConfig().to_params()
    assert qp.gamma3 == 70.0
    cc = config.CurveConfig()
    assert cc.beta5 == 2.436


def test_config_is_frozen():
    cfg = config.ExperimentConfig()
    with pytest.raises(AttributeError):
        cfg.rounds = 99
    with pytest.raises(AttributeError):
        cfg.market.levels = 3
