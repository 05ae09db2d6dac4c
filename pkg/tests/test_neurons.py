import math

import numpy as np
import pytest

from src.core.neurons import (
    NeuronParams,
    activation_slope,
    rectified_tanh,
    settle,
    settling_time,
    summing_amp,
    with_gain_trim,
)


@pytest.fixture
def params():
    return NeuronParams()


def test_balanced_currents_give_bias_voltage(params):
    assert summing_amp(2e-7, 2e-7, params) == pytest.approx(params.v_bias)


def test_summing_amp_gain_and_rails(params):
    assert summing_amp(1e-6, 0.0, params) == pytest.approx(params.v_bias + params.r_f * 1e-6)
    assert summing_amp(1.0, 0.0, params) == params.rail_high
    assert summing_amp(0.0, 1.0, params) == params.rail_low


def test_offset_and_finite_gain_hooks():
    ideal = NeuronParams()
    real = NeuronParams(offset=0.01, open_loop_gain=1000.0)
    swing = ideal.r_f * 1e-5
    assert summing_amp(1e-5, 0.0, real) == pytest.approx(ideal.v_bias + 0.01 + swing * 1000.0 / 1001.0)


def test_rectified_branch_sits_at_minimum_output(params):
    out = rectified_tanh(np.array([0.0, params.v_bias - 0.2, params.v_bias]), params)
    np.testing.assert_array_equal(out, np.full(3, params.v_out_min))


def test_activation_saturates_at_maximum_output(params):
    assert rectified_tanh(params.v_bias + 1.0, params) == pytest.approx(params.v_out_max)


def test_activation_is_tanh_above_bias(params):
    x = 0.002
    expected = params.v_out_min + (params.v_out_max - params.v_out_min) * math.tanh(params.act_gain * x)
    assert rectified_tanh(params.v_bias + x, params) == pytest.approx(expected)


def test_activation_slope_matches_finite_difference(params):
    h = 1e-8
    for x in (0.0005, 0.002, 0.004):
        v = params.v_bias + x
        numeric = (rectified_tanh(v + h, params) - rectified_tanh(v - h, params)) / (2 * h)
        assert activation_slope(v, params) == pytest.approx(numeric, rel=1e-5)
    assert activation_slope(params.v_bias - 0.1, params) == 0.0


def test_settling(params):
    assert settle(2.0, 1.0, 0.0, params) == 1.0
    assert settle(2.0, 1.0, 100 * params.settle_tau, params) == pytest.approx(2.0)
    t = settling_time(params, residual=0.01)
    assert t == pytest.approx(params.settle_tau * math.log(100.0))
    assert settle(2.0, 1.0, t, params) == pytest.approx(1.99)
    with pytest.raises(ValueError):
        settle(2.0, 1.0, -1e-9, params)


def test_gain_trim_maps_unit_weight_current_to_unit_input(params):
    trimmed = with_gain_trim(params, 2e-7 / 0.5)
    assert trimmed.act_gain == pytest.approx(1.0 / (params.r_f * 4e-7))
    # one unit of weight current on the "+" line is a pre-activation of 1
    v = summing_amp(4e-7, 0.0, trimmed)
    expected = trimmed.v_out_min + (trimmed.v_out_max - trimmed.v_out_min) * math.tanh(1.0)
    assert rectified_tanh(v, trimmed) == pytest.approx(expected)


def test_parameter_validation():
    with pytest.raises(ValueError):
        NeuronParams(r_f=0.0)
    with pytest.raises(ValueError):
        NeuronParams(v_out_min=2.7, v_out_max=1.1)


def test_one_time_constant_reaches_63_percent(params):
    reached = settle(1.0, 0.0, params.settle_tau, params)
    assert reached == pytest.approx(1.0 - math.exp(-1.0), rel=1e-12)
    assert reached == pytest.approx(0.632, abs=5e-4)
    falling = settle(1.1, 2.7, params.settle_tau, params)
    assert (2.7 - falling) / 1.6 == pytest.approx(0.632, abs=5e-4)
