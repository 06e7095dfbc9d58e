import json

import pytest

from siamvpg.config import (
    ConfigError,
    LossWeights,
    ModelConfig,
    PROFILES,
    TrainConfig,
    config_hash,
    load_train_config,
    train_config_from_dict,
)


def test_profiles_carry_dataset_defaults():
    a = train_config_from_dict({"profile": "activitynet-like"})
    assert a.t_clips == 256 and a.batch_size == 32 and a.rbs_fraction == 0.1
    assert a.rrs_stride_range == (0.75, 3.0)
    assert a.learning_rate == 1e-4
    assert a.model.hidden_dim == 256 and a.model.encoder_layers == 3
    assert (a.weights.screg, a.weights.oga, a.weights.csc) == (2.0, 1.0, 10.0)
    assert a.weights.beta == 0.5

    c = train_config_from_dict({"profile": "charades-like"})
    assert c.t_clips == 128 and c.rbs_fraction == 0.175
    assert c.rrs_stride_range == (1.0, 3.0)

    t = train_config_from_dict({"profile": "tacos-like"})
    assert t.t_clips == 512 and t.batch_size == 16
    assert t.rrs_stride_range == (1.0, 15.0)
    assert t.iou_thresholds == (0.1, 0.3, 0.5)


def test_explicit_keys_override_profile():
    cfg = train_config_from_dict({
        "profile": "activitynet-like",
        "t_clips": 32,
        "model": {"hidden_dim": 64, "heads": 4},
        "weights": {"csc": 3.0},
    })
    assert cfg.t_clips == 32
    assert cfg.model.hidden_dim == 64
    assert cfg.model.encoder_layers == 3  # untouched profile default
    assert cfg.weights.csc == 3.0
    assert cfg.weights.screg == 2.0


def test_unknown_profile_rejected():
    with pytest.raises(ConfigError, match="unknown profile"):
        train_config_from_dict({"profile": "imagenet"})


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError):
        train_config_from_dict({"bogus_key": 1})
    with pytest.raises(ConfigError):
        train_config_from_dict({"model": {"bogus": 2}})


def test_validation_errors():
    with pytest.raises(ConfigError):
        TrainConfig(mode="nope")
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(labeled_fraction=1.5)
    with pytest.raises(ConfigError):
        TrainConfig(model_selection="oracle")
    with pytest.raises(ConfigError):
        LossWeights(beta=1.0)
    with pytest.raises(ConfigError):
        LossWeights(oga=-1.0)
    with pytest.raises(ConfigError):
        ModelConfig(hidden_dim=30, heads=4)


def test_config_hash_tracks_content():
    a = TrainConfig(seed=1)
    b = TrainConfig(seed=1)
    c = TrainConfig(seed=2)
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(c)


def test_to_dict_round_trip():
    cfg = train_config_from_dict({"profile": "synthetic", "mode": "ss", "seed": 9})
    back = train_config_from_dict(cfg.to_dict())
    assert back == cfg
    assert config_hash(back) == config_hash(cfg)


def test_load_train_config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"profile": "synthetic", "mode": "ws"}))
    cfg = load_train_config(path)
    assert cfg.mode == "ws" and cfg.t_clips == 64
    path.write_text("not json")
    with pytest.raises(ConfigError):
        load_train_config(path)
    path.write_text("[1,2]")
    with pytest.raises(ConfigError):
        load_train_config(path)


def test_every_profile_resolves():
    for name in PROFILES:
        cfg = train_config_from_dict({"profile": name})
        assert cfg.epochs > 0
        assert cfg.compose_config().t_clips == cfg.t_clips
