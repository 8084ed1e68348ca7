import json

import pytest

from ardvae.config import PRESETS, ConfigError, TrainConfig, preset


def test_round_trip_is_canonical():
    cfg = TrainConfig(variant="gsgvb_ard", latent_dim=7, hidden_sizes=[30, 20], seed=4)
    text = cfg.dumps()
    again = TrainConfig.loads(text)
    assert again == cfg
    assert again.dumps() == text
    assert list(json.loads(text)) == list(cfg.to_dict())


def test_unknown_key_is_rejected():
    raw = TrainConfig().to_dict()
    raw["learnig_rate"] = 0.1
    with pytest.raises(ConfigError, match="learnig_rate"):
        TrainConfig.from_dict(raw)


@pytest.mark.parametrize("field,value", [
    ("latent_dim", 0), ("batch_size", -1), ("learning_rate", -1.0), ("variant", "vae"),
    ("kl_w_mode", "sometimes"), ("retention_threshold", 1.5), ("n_w", 0),
])
def test_field_level_validation(field, value):
    with pytest.raises(ConfigError, match=field):
        TrainConfig(**{field: value}).validate()


def test_iteration_budget_is_exclusive():
    with pytest.raises(ConfigError):
        TrainConfig(iterations=10, epochs=2).validate()
    with pytest.raises(ConfigError):
        TrainConfig(iterations=0, epochs=0).validate()
    assert TrainConfig(iterations=0, epochs=3, batch_size=200).total_iterations(1600) == 24


def test_closed_form_rejected_for_product_posterior():
    with pytest.raises(ConfigError, match="lambda_update"):
        TrainConfig(variant="gsgvb_ard", lambda_update="closed_form").validate()


def test_presets():
    assert len(PRESETS) == 12
    p = preset("frey_200h_50z_ard")
    assert (p.hidden_sizes, p.latent_dim, p.learning_rate, p.batch_size, p.variant) == ([200], 50, 1e-4, 200,
                                                                                         "sgvb_ard")
    assert preset("frey_400h_100z_gsgvb").variant == "gsgvb_ard"
    p.latent_dim = 3
    assert preset("frey_200h_50z_ard").latent_dim == 50
    with pytest.raises(ConfigError):
        preset("nope")


def test_save_and_load(tmp_path):
    cfg = TrainConfig(seed=9)
    cfg.save(tmp_path / "c.json")
    assert TrainConfig.load(tmp_path / "c.json") == cfg
