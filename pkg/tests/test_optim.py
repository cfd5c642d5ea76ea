"""SGD semantics: exact update rules and guard rails."""
import numpy as np
import pytest

from seal import layers as L
from seal.errors import ConfigError, NumericError
from seal.network import NetworkParams, init_params
from seal.optim import OptConfig, init_velocity, sgd_step


def one_param(value=1.0):
    params = NetworkParams([{"w": np.array([value], dtype=np.float64)}], [{}])
    return params, init_velocity(params)


def test_momentum_zero_is_plain_sgd():
    params, vel = one_param(1.0)
    sgd_step(params, [{"w": np.array([2.0])}], lr=0.1, momentum=0.0, velocity=vel)
    assert params.arrays[0]["w"][0] == pytest.approx(0.8, abs=1e-15)


def test_two_step_momentum_unroll():
    # v1 = g, p1 = 1 - 0.1*2 = 0.8; v2 = 0.9*2 + 2 = 3.8, p2 = 0.8 - 0.38 = 0.42
    params, vel = one_param(1.0)
    g = [{"w": np.array([2.0])}]
    sgd_step(params, g, lr=0.1, momentum=0.9, velocity=vel)
    assert params.arrays[0]["w"][0] == pytest.approx(0.8, abs=1e-15)
    sgd_step(params, g, lr=0.1, momentum=0.9, velocity=vel)
    assert params.arrays[0]["w"][0] == pytest.approx(0.42, abs=1e-15)


def test_zero_lr_keeps_params():
    rng = np.random.default_rng(0)
    specs = [L.dense(3, 2)]
    params = init_params(specs, rng)
    before = params.copy()
    vel = init_velocity(params)
    grads = [{"w": rng.normal(0, 1, (3, 2)).astype(np.float32),
              "b": rng.normal(0, 1, 2).astype(np.float32)}]
    sgd_step(params, grads, lr=0.0, momentum=0.9, velocity=vel)
    np.testing.assert_array_equal(params.arrays[0]["w"], before.arrays[0]["w"])


def test_nonfinite_gradient_names_layer():
    params, vel = one_param()
    with pytest.raises(NumericError, match="layer 0"):
        sgd_step(params, [{"w": np.array([np.nan])}], 0.1, 0.0, vel)


def test_momentum_range_checked():
    params, vel = one_param()
    with pytest.raises(ConfigError):
        sgd_step(params, [{"w": np.array([1.0])}], 0.1, 1.0, vel)
    with pytest.raises(ConfigError):
        OptConfig(lr=0.1, momentum=-0.1)
    with pytest.raises(ConfigError):
        OptConfig(lr=-1.0)
