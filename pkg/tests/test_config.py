import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maskrank.config import (LossWeights, MaskLossConfig, RunConfig, TrainConfig, from_dict,
                             load_config, save_config, to_dict)
from maskrank.errors import FormatError, ParameterError


def test_default_loss_weights():
    w = LossWeights()
    assert (w.alpha, w.beta, w.gamma, w.lambda_) == (2.0, 5.0, 1.0, 0.6)
    assert TrainConfig().pseudo_threshold == 0.99
    assert TrainConfig().logit_scale == 100.0


def test_lambda_key_alias():
    w = from_dict(LossWeights, {"lambda": 0.3})
    assert w.lambda_ == 0.3
    assert to_dict(w)["lambda"] == 0.3


def test_unknown_key_rejected():
    with pytest.raises(FormatError, match="bogus"):
        from_dict(TrainConfig, {"bogus": 1})
    with pytest.raises(FormatError):
        from_dict(TrainConfig, {"weights": {"delta": 1}})


@pytest.mark.parametrize("kw", [
    {"lambda_": 1.5}, {"temperature": 0.0}, {"alpha": -1.0}, {"bg_reduce": "max"},
])
def test_loss_weight_validation(kw):
    with pytest.raises(ParameterError):
        LossWeights(**kw)


@pytest.mark.parametrize("kw", [
    {"mode": "other"}, {"num_queries": 0}, {"num_unseen": 10}, {"pseudo_threshold": 1.0},
    {"logit_scale": 0.0}, {"correlated_pair": (8, 9)}, {"optimizer": "lbfgs"},
])
def test_train_config_validation(kw):
    with pytest.raises(ParameterError):
        TrainConfig(**kw)


def test_focal_alpha_range():
    with pytest.raises(ParameterError):
        MaskLossConfig(focal_alpha=0.0)
    assert MaskLossConfig(focal_alpha=None).focal_alpha is None


def test_pseudo_mode_forces_pseudo_labels():
    assert TrainConfig(mode="bg-aware+rank+pseudo").effective_unseen_labels == "pseudo"
    assert TrainConfig(unseen_labels="none").effective_unseen_labels == "none"


def test_roundtrip_idempotent(tmp_path):
    cfg = RunConfig(train=TrainConfig(steps=7, weights=LossWeights(lambda_=0.2)), threads=2)
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    save_config(cfg, p1)
    loaded = load_config(p1, RunConfig)
    save_config(loaded, p2)
    assert loaded == cfg
    assert p1.read_text() == p2.read_text()


@settings(max_examples=30)
@given(st.floats(0, 1), st.floats(0.01, 5), st.integers(0, 50), st.sampled_from(["sum", "mean"]))
def test_roundtrip_property(lam, t, steps, reduce):
    cfg = TrainConfig(steps=steps, weights=LossWeights(lambda_=lam, temperature=t, bg_reduce=reduce))
    assert from_dict(TrainConfig, json.loads(json.dumps(to_dict(cfg)))) == cfg


def test_invalid_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{nope")
    with pytest.raises(FormatError):
        load_config(p)


def test_partial_nested_section_keeps_toy_defaults():
    cfg = from_dict(TrainConfig, {"weights": {"lambda": 0.5}})
    assert cfg.weights.lambda_ == 0.5
    assert cfg.weights.temperature == TrainConfig().weights.temperature
    assert LossWeights().temperature == 0.1
