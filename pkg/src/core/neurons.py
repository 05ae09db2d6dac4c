"""
Behavioral neuron circuits: differential summing opamp pair, rectified-tanh activation,
and first-order output settling.
"""
import logging
import math
from dataclasses import dataclass, asdict, replace
from typing import Dict, Union

import numpy as np

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

# Supply rails of the neuron circuits (volts)
V_SS = 0.0
V_DD = 2.7


@dataclass(frozen=True)
class NeuronParams:
    r_f: float = 16e3  # ohm, feedback resistance
    v_bias: float = 1.35  # V, output common-mode reference
    act_gain: float = 312.5  # V/V, activation small-signal gain
    v_out_min: float = 1.1  # V, activation output range
    v_out_max: float = 2.7  # V
    settle_tau: float = 5e-8  # s
    offset: float = 0.0  # V, output-referred opamp offset
    open_loop_gain: float = math.inf  # V/V
    rail_low: float = V_SS
    rail_high: float = V_DD

    def __post_init__(self):
        if self.r_f <= 0:
            raise ValueError(f"r_f must be positive, got {self.r_f}")
        if self.v_out_min >= self.v_out_max:
            raise ValueError(f"need v_out_min < v_out_max, got {self.v_out_min}, {self.v_out_max}")
        if self.settle_tau <= 0:
            raise ValueError(f"settle_tau must be positive, got {self.settle_tau}")
        if self.act_gain <= 0 or self.open_loop_gain <= 0:
            raise ValueError("act_gain and open_loop_gain must be positive")
        if self.rail_low >= self.rail_high:
            raise ValueError("rail_low must be below rail_high")

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def summing_amp(i_plus: ArrayLike, i_minus: ArrayLike, params: NeuronParams) -> ArrayLike:
    """Output voltage of the differential pair: v_bias + R_F * (i_plus - i_minus), railed."""
    diff = np.asarray(i_plus, dtype=float) - np.asarray(i_minus, dtype=float)
    if math.isinf(params.open_loop_gain):
        swing = params.r_f * diff
    else:
        swing = params.r_f * diff * params.open_loop_gain / (1.0 + params.open_loop_gain)
    return np.clip(params.v_bias + params.offset + swing, params.rail_low, params.rail_high)


def rectified_tanh(v_in: ArrayLike, params: NeuronParams) -> ArrayLike:
    """Activation circuit output; inputs at or below v_bias map to v_out_min."""
    x = np.asarray(v_in, dtype=float) - params.v_bias
    level = np.maximum(0.0, np.tanh(params.act_gain * x))
    out = params.v_out_min + (params.v_out_max - params.v_out_min) * level
    return np.clip(out, params.v_out_min, params.v_out_max)


def activation_slope(v_in: ArrayLike, params: NeuronParams) -> ArrayLike:
    """Analytic dV_out/dV_in of rectified_tanh (zero on the rectified branch)."""
    x = np.asarray(v_in, dtype=float) - params.v_bias
    sech2 = 1.0 / np.cosh(params.act_gain * x) ** 2
    slope = (params.v_out_max - params.v_out_min) * params.act_gain * sech2
    return np.where(x > 0, slope, 0.0)


def settle(v_target: ArrayLike, v_current: ArrayLike, dt: float, params: NeuronParams) -> ArrayLike:
    """First-order approach of the output toward v_target after dt seconds."""
    if dt < 0:
        raise ValueError(f"dt must be >= 0, got {dt}")
    closed = -math.expm1(-dt / params.settle_tau)
    return v_current + (np.asarray(v_target, dtype=float) - v_current) * closed


def settling_time(params: NeuronParams, residual: float = 0.01) -> float:
    """Time for the first-order output to come within `residual` of its final value."""
    return params.settle_tau * math.log(1.0 / residual)


def with_gain_trim(params: NeuronParams, amps_per_unit_weight: float) -> NeuronParams:
    """Activation gain that turns R_F * I back into the unitless pre-activation."""
    return replace(params, act_gain=1.0 / (params.r_f * amps_per_unit_weight))
