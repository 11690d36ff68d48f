import numpy as np
import pytest

from perturbkit import backend
from perturbkit.model import Activation, Dense, Model

BACKENDS = backend.available_backends()


@pytest.fixture(params=BACKENDS)
def kernel_backend(request):
    """Run a test once per available kernel backend."""
    with backend.override(request.param):
        yield request.param


def random_model(sizes, activation="tanh", seed=0, final_activation=None):
    """Random dense net with the given layer sizes."""
    rng = np.random.default_rng(seed)
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        w = rng.standard_normal((fan_out, fan_in)) / np.sqrt(fan_in)
        b = 0.1 * rng.standard_normal(fan_out)
        layers.append(Dense(w, b))
        if i < len(sizes) - 2:
            layers.append(Activation(activation))
    if final_activation is not None:
        layers.append(Activation(final_activation))
    return Model(layers, sizes[0], sizes[-1])


def random_deep_linear(sizes, seed=0):
    """Multi-layer model with no activations; its Jacobian is the weight product."""
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        layers.append(Dense(rng.standard_normal((fan_out, fan_in)), np.zeros(fan_out)))
    return Model(layers, sizes[0], sizes[-1])


def weight_product(model):
    """The end-to-end linear map of an activation-free model."""
    total = None
    for layer in model.layers:
        if isinstance(layer, Dense):
            total = layer.weights if total is None else layer.weights @ total
    return total
