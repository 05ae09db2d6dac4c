"""
Behavioral model of one floating-gate NOR flash cell operated in subthreshold.

The memory state is the cell's effective threshold voltage v_t. Drain current is a
clamped exponential of gate overdrive whose log slope depends on the state:

    I = clamp(i_ref * exp(beta(v_t) * (v_gs - v_t)), i_floor, i_sat)
    beta(v_t) = beta0 + beta_state_coeff * (v_t - v_t_mid)

Drain bias is validated but does not enter the current (arrays run at a fixed drain
bias above 0.5 V). Every function is pure; randomness comes from explicit seeds.
"""
import logging
import math
from dataclasses import dataclass, asdict
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np

from src.core.exceptions import CurrentRangeError, DeviceDomainError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

# Rounding slack allowed at the window edges (volts)
WINDOW_SLACK = 1e-9

# Sanity bound on applied gate voltage (volts)
V_GS_MAX = 5.0


@dataclass(frozen=True)
class DevicePhysics:
    i_ref: float = 1e-8  # A, current at zero overdrive (v_gs == v_t)
    beta0: float = 8.0  # 1/V, log slope at mid-window
    beta_state_coeff: float = -0.45  # 1/V^2, slope change per volt of v_t
    i_sat: float = 3e-7  # A, upper clip
    i_floor: float = 1e-12  # A, leakage floor
    noise_exponent: float = 1.6  # PSD ~ 1/f^gamma
    noise_amp: float = 5e-20  # A^2/Hz at 1 Hz, referred to a cell carrying i_sat
    drift_rate: float = 5e-5  # V per decade of elapsed time
    drift_t0: float = 1.0  # s
    drift_clip: float = 3.0  # drift draws truncated at this many sigma
    v_t_min: float = 1.0  # V
    v_t_max: float = 4.5  # V

    def __post_init__(self):
        if not 0 <= self.i_floor < self.i_sat:
            raise DeviceDomainError(
                f"need 0 <= i_floor < i_sat, got i_floor={self.i_floor}, i_sat={self.i_sat}"
            )
        if self.beta0 <= 0:
            raise DeviceDomainError(f"beta0 must be positive, got {self.beta0}")
        if self.noise_exponent <= 0:
            raise DeviceDomainError(f"noise_exponent must be positive, got {self.noise_exponent}")
        if self.noise_amp < 0 or self.drift_rate < 0:
            raise DeviceDomainError("noise_amp and drift_rate must be non-negative")
        if self.drift_t0 <= 0 or self.drift_clip <= 0:
            raise DeviceDomainError("drift_t0 and drift_clip must be positive")
        if self.v_t_min >= self.v_t_max:
            raise DeviceDomainError(
                f"empty window [{self.v_t_min}, {self.v_t_max}]"
            )
        edge_betas = beta_of_vt(np.array([self.v_t_min, self.v_t_max]), self)
        if np.any(edge_betas <= 0):
            raise DeviceDomainError(
                f"beta must stay positive across the window, got {edge_betas.tolist()}"
            )

    @property
    def v_t_mid(self) -> float:
        return 0.5 * (self.v_t_min + self.v_t_max)

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class CellState:
    v_t: float  # V


@dataclass(frozen=True)
class BiasPoint:
    v_gs: float  # V
    v_ds: float = 1.0  # V

    def __post_init__(self):
        if self.v_ds < 0:
            raise DeviceDomainError(f"v_ds must be >= 0, got {self.v_ds}")
        if not 0 <= self.v_gs <= V_GS_MAX:
            raise DeviceDomainError(f"v_gs={self.v_gs} outside [0, {V_GS_MAX}] V")


def check_window(v_t: ArrayLike, phys: DevicePhysics) -> None:
    """Raise DeviceDomainError if any state lies outside the programmable window."""
    v_t = np.asarray(v_t, dtype=float)
    if v_t.size == 0:
        return
    low, high = float(np.min(v_t)), float(np.max(v_t))
    if not np.isfinite(low) or not np.isfinite(high):
        raise DeviceDomainError("non-finite memory state")
    if low < phys.v_t_min - WINDOW_SLACK or high > phys.v_t_max + WINDOW_SLACK:
        bad = low if low < phys.v_t_min - WINDOW_SLACK else high
        raise DeviceDomainError(
            f"v_t={bad:.6f} V outside window [{phys.v_t_min}, {phys.v_t_max}] V"
        )


def beta_of_vt(v_t: ArrayLike, phys: DevicePhysics) -> ArrayLike:
    return phys.beta0 + phys.beta_state_coeff * (np.asarray(v_t, dtype=float) - phys.v_t_mid)


def beta_of_state(state: CellState, phys: DevicePhysics) -> float:
    """Subthreshold log slope of a programmed state (1/V)."""
    check_window(state.v_t, phys)
    return float(beta_of_vt(state.v_t, phys))


def exponential_current(v_t: ArrayLike, v_gs: ArrayLike, phys: DevicePhysics) -> np.ndarray:
    """Unclamped subthreshold current; broadcasting over v_t and v_gs."""
    v_t = np.asarray(v_t, dtype=float)
    return phys.i_ref * np.exp(beta_of_vt(v_t, phys) * (np.asarray(v_gs, dtype=float) - v_t))


def currents_for_grid(v_t: ArrayLike, v_gs: ArrayLike, phys: DevicePhysics) -> np.ndarray:
    """Clamped cell currents for broadcastable grids of states and gate voltages.

    Callers are expected to have validated the states against the window.
    """
    return np.clip(exponential_current(v_t, v_gs, phys), phys.i_floor, phys.i_sat)


def cell_current(state: CellState, bias: BiasPoint, phys: DevicePhysics) -> float:
    """Noiseless drain current of one cell at a bias point (A)."""
    check_window(state.v_t, phys)
    return float(currents_for_grid(state.v_t, bias.v_gs, phys))


def states_for_currents(targets: ArrayLike, v_gs: ArrayLike, phys: DevicePhysics) -> np.ndarray:
    """Closed-form inverse of the unclamped model.

    ln(I/i_ref) = (B + c*v_t) * (v_gs - v_t) with B = beta0 - c*v_t_mid is quadratic in
    v_t; the returned root is the one on the decreasing branch of I(v_t), written in a
    form that stays finite when c -> 0.
    """
    targets = np.asarray(targets, dtype=float)
    v_gs = np.asarray(v_gs, dtype=float)
    c = phys.beta_state_coeff
    b = phys.beta0 - c * phys.v_t_mid
    log_ratio = np.log(targets / phys.i_ref)
    p = b - c * v_gs
    q = log_ratio - b * v_gs
    disc = p * p - 4.0 * c * q
    with np.errstate(invalid="ignore", divide="ignore"):
        denom = p + np.sqrt(disc)
        v_t = np.where((disc >= 0) & (denom > 0), -2.0 * q / denom, np.nan)
    return v_t


def state_for_current(target: float, bias: BiasPoint, phys: DevicePhysics) -> CellState:
    """Memory state that draws `target` amperes at `bias`."""
    if not target > phys.i_floor:
        raise CurrentRangeError(
            f"target {target:.4e} A is not above i_floor={phys.i_floor:.4e} A"
        )
    if not target < phys.i_sat:
        raise CurrentRangeError(
            f"target {target:.4e} A is not below i_sat={phys.i_sat:.4e} A"
        )
    v_t = float(states_for_currents(target, bias.v_gs, phys))
    if math.isnan(v_t):
        raise DeviceDomainError(f"no memory state draws {target:.4e} A at v_gs={bias.v_gs} V")
    check_window(v_t, phys)
    return CellState(v_t=float(np.clip(v_t, phys.v_t_min, phys.v_t_max)))


def noise_psd(current: ArrayLike, freqs: np.ndarray, phys: DevicePhysics) -> np.ndarray:
    """One-sided current-noise PSD (A^2/Hz); scales with the square of the current."""
    scale = phys.noise_amp * (np.asarray(current, dtype=float) / phys.i_sat) ** 2
    return scale * np.asarray(freqs, dtype=float) ** (-phys.noise_exponent)


def noise_relative_sigma(phys: DevicePhysics, sample_rate: float, n_samples: int) -> float:
    """Relative RMS current fluctuation over the band [fs/n, fs/2].

    Because the PSD is proportional to I^2 the relative value is state independent.
    """
    if phys.noise_amp == 0:
        return 0.0
    f_low = sample_rate / n_samples
    f_high = sample_rate / 2.0
    gamma = phys.noise_exponent
    if math.isclose(gamma, 1.0):
        band = math.log(f_high / f_low)
    else:
        band = (f_low ** (1.0 - gamma) - f_high ** (1.0 - gamma)) / (gamma - 1.0)
    return math.sqrt(phys.noise_amp / phys.i_sat ** 2 * band)


def sample_noisy_current(
    state: CellState,
    bias: BiasPoint,
    phys: DevicePhysics,
    n_samples: int,
    sample_rate: float,
    seed: Optional[int] = None,
) -> np.ndarray:
    """Current trace with 1/f^gamma fluctuations around the noiseless current.

    White Gaussian spectrum shaped by sqrt(PSD) and inverted with irfft. The DC bin
    is zero so the trace mean equals the noiseless current.
    """
    if n_samples < 2:
        raise ValueError(f"n_samples must be >= 2, got {n_samples}")
    if sample_rate <= 0:
        raise ValueError(f"sample_rate must be positive, got {sample_rate}")
    i0 = cell_current(state, bias, phys)
    if phys.noise_amp == 0:
        return np.full(n_samples, i0)

    rng = np.random.default_rng(seed)
    freqs = np.fft.rfftfreq(n_samples, d=1.0 / sample_rate)
    psd = np.zeros_like(freqs)
    psd[1:] = noise_psd(i0, freqs[1:], phys)
    if n_samples % 2 == 0:
        psd[-1] = 0.0
    amplitude = np.sqrt(psd * sample_rate * n_samples / 2.0)
    white = rng.standard_normal(freqs.size) + 1j * rng.standard_normal(freqs.size)
    trace = np.fft.irfft(amplitude * white / np.sqrt(2.0), n=n_samples)
    return i0 + trace


def drift_shift(elapsed_seconds: float, phys: DevicePhysics, z: ArrayLike) -> ArrayLike:
    """v_t shift for standard-normal draws z after `elapsed_seconds`."""
    z = np.clip(z, -phys.drift_clip, phys.drift_clip)
    return phys.drift_rate * math.log10(1.0 + elapsed_seconds / phys.drift_t0) * z


def drift_states(
    v_t: np.ndarray, elapsed_seconds: float, phys: DevicePhysics, rng: np.random.Generator
) -> np.ndarray:
    """Vectorized retention drift of a grid of states, clamped to the window."""
    if elapsed_seconds < 0:
        raise DeviceDomainError(f"elapsed time must be >= 0, got {elapsed_seconds}")
    v_t = np.asarray(v_t, dtype=float)
    if elapsed_seconds == 0 or phys.drift_rate == 0:
        return v_t.copy()
    shifted = v_t + drift_shift(elapsed_seconds, phys, rng.standard_normal(v_t.shape))
    return np.clip(shifted, phys.v_t_min, phys.v_t_max)


def apply_retention_drift(
    state: CellState, elapsed_seconds: float, phys: DevicePhysics, seed: Optional[int] = None
) -> CellState:
    """State after retention drift; one seed fixes one sample path across elapsed times."""
    check_window(state.v_t, phys)
    drifted = drift_states(np.array([state.v_t]), elapsed_seconds, phys, np.random.default_rng(seed))
    return CellState(v_t=float(drifted[0]))


def retention_trace(
    state: CellState,
    times: Sequence[float],
    bias: BiasPoint,
    phys: DevicePhysics,
    seed: Optional[int] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Currents along one drift sample path and their relative change from t=0."""
    i0 = cell_current(state, bias, phys)
    currents = np.array(
        [cell_current(apply_retention_drift(state, t, phys, seed), bias, phys) for t in times]
    )
    return currents, currents / i0 - 1.0


def dynamic_range_decades(state: CellState, phys: DevicePhysics, swing: float = 1.5) -> float:
    """Decades of current covered by a gate sweep of `swing` volts ending at saturation onset."""
    beta = beta_of_state(state, phys)
    v_high = state.v_t + math.log(phys.i_sat / phys.i_ref) / beta
    sweep = np.linspace(v_high - swing, v_high, 301)
    currents = currents_for_grid(state.v_t, sweep, phys)
    return float(np.log10(currents.max() / currents.min()))
