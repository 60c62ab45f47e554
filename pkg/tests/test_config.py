import pytest

from laneatt import config as config_mod
from laneatt.config import RunConfig
from laneatt.errors import ConfigError


def test_defaults_valid_and_published_defaults():
    cfg = RunConfig().validate()
    assert cfg.model.n_pts == 72
    assert cfg.train.n_anchors == 1000
    assert (cfg.matching.tau_p, cfg.matching.tau_n) == (15.0, 20.0)
    assert (cfg.loss.gamma, cfg.loss.alpha, cfg.loss.lam) == (2.0, 0.25, 10.0)


def test_text_round_trip():
    cfg = RunConfig()
    cfg.model.backbone.channels = (4, 8)
    cfg.model.backbone.strides = (4, 4)
    cfg.model.use_attention = False
    cfg.loss.lam = 2.5
    back = config_mod.parse_text(config_mod.to_text(cfg))
    assert back == cfg


def test_comments_and_overrides():
    text = "# a comment\nmodel.per_boundary_heads = true  # trailing\n\ntrain.lr = 0.01\n"
    cfg = config_mod.parse_text(text)
    assert cfg.model.per_boundary_heads is True and cfg.train.lr == 0.01
    config_mod.apply_overrides(cfg, [("anchors.left_angles", "30, 60")])
    assert cfg.anchors.left_angles == (30.0, 60.0)


@pytest.mark.parametrize("key", ["model.nope", "nope.lr", "model.backbone.channels.x"])
def test_unknown_keys_carry_path(key):
    with pytest.raises(ConfigError) as err:
        config_mod.apply_overrides(RunConfig(), [(key, "1")])
    assert err.value.field == key


def test_bad_values():
    with pytest.raises(ConfigError) as err:
        config_mod.apply_overrides(RunConfig(), [("train.epochs", "many")])
    assert err.value.field == "train.epochs"
    with pytest.raises(ConfigError):
        config_mod.apply_overrides(RunConfig(), [("model.use_attention", "maybe")])
    with pytest.raises(ConfigError) as err:
        config_mod.parse_text("just words\n")
    assert "line 1" in err.value.field


@pytest.mark.parametrize("items,field", [
    ([("matching.tau_p", "25")], "matching.tau_p"),
    ([("train.n_anchors", "5000")], "train.n_anchors"),
    ([("model.backbone.input_size", "100, 320")], "model.backbone.input_size"),
    ([("data.image_size", "320, 640")], "data.image_size"),
    ([("anchors.bottom_angles", "0, 90")], "anchors.bottom_angles"),
])
def test_cross_field_validation(items, field):
    cfg = config_mod.apply_overrides(RunConfig(), items)
    with pytest.raises(ConfigError) as err:
        cfg.validate()
    assert err.value.field == field
