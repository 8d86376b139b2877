import numpy as np
import pytest

from tupledet.mlp import MlpParams, init_params
from tupledet.model import ModelConfig, init_model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_mlp(rng, layer_dims, activation="relu"):
    """Small random MLP with nonzero biases so gradient checks bite."""
    params = init_params(layer_dims, seed=int(rng.integers(0, 2**31)),
                         activation=activation)
    for b in params.biases:
        b += rng.normal(scale=0.1, size=b.shape)
    return params


def tiny_model(rng, d=4, visual_in=3, text_in=3):
    cfg = ModelConfig(d=d, visual_in_dim=visual_in, text_in_dim=text_in,
                      visual_layer_dims=[visual_in, 5, d],
                      text_layer_dims=[text_in, 4, 4, 4, 4, d])
    model = init_model(cfg, seed=int(rng.integers(0, 2**31)))
    for head in (model.visual_head, model.text_head):
        for b in head.biases:
            b += rng.normal(scale=0.1, size=b.shape)
    return model
