"""Statistical models of the resistive-memory devices.

Three device populations matter to the simulator:

* pristine devices, never formed, with resistances in the tens of GOhm;
  their RC recharge realizes the delay lines. Delays follow a log-normal
  distribution (measured mean 22 ms, log-space sigma 0.5, observed range
  8.08..58.26 ms).
* LRS devices, SET-programmed in one of 8 levels inside the 8..50 kOhm band;
  they realize strong weights.
* HRS devices, RESET-programmed into the poorly controlled 60..1000 kOhm
  band; they realize weak weights.

Read-to-read conductance variability is modeled as additive Gaussian noise
whose std is a fraction of the largest absolute weight in a layer; training
redraws it per forward pass.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError

# Resistance bands (ohms); overridable through the experiment config.
LRS_BAND = (8e3, 50e3)
HRS_BAND = (60e3, 1e6)
PRISTINE_MIN_OHMS = 1e9

N_SET_LEVELS = 8
SET_JITTER_SIGMA_LOG = 0.05  # multiplicative jitter inside one SET sub-band

DEFAULT_CAPACITANCE_F = 1e-12  # C is not published; 1 pF puts RC in the tens of ms


class DeviceMode(enum.Enum):
    PRISTINE = "pristine"
    LRS = "lrs"
    HRS = "hrs"


@dataclass(frozen=True)
class DeviceState:
    """One RRAM device: mode, conductance (S), and SET level (LRS only)."""

    mode: DeviceMode
    conductance: float
    level: int | None = None

    def __post_init__(self):
        if not self.conductance > 0:
            raise DomainError("conductance must be positive")
        if self.mode is DeviceMode.LRS:
            if self.level is None or not 0 <= self.level < N_SET_LEVELS:
                raise DomainError(f"LRS level must be in [0, {N_SET_LEVELS - 1}]")
        elif self.level is not None:
            raise DomainError("level is only meaningful for LRS devices")

    @property
    def resistance(self) -> float:
        return 1.0 / self.conductance


def check_state_bands(state: DeviceState, lrs_band=LRS_BAND, hrs_band=HRS_BAND,
                      pristine_min=PRISTINE_MIN_OHMS) -> bool:
    """True iff the device's resistance lies inside its mode's band."""
    r = state.resistance
    if state.mode is DeviceMode.LRS:
        return lrs_band[0] <= r <= lrs_band[1]
    if state.mode is DeviceMode.HRS:
        return hrs_band[0] <= r <= hrs_band[1]
    return r >= pristine_min


@dataclass(frozen=True)
class DelayDistribution:
    """Log-normal delay model: delay = exp(N(mu, sigma^2)) seconds, clipped.

    mu and sigma parametrize the underlying normal over log-seconds and are
    dimensionless; clip bounds are in seconds.
    """

    mu: float
    sigma: float
    clip_min: float
    clip_max: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigError("delay distribution sigma must be > 0")
        if not 0 < self.clip_min < self.clip_max:
            raise ConfigError("delay clip bounds must satisfy 0 < min < max")

    @staticmethod
    def from_mean(mean_s: float, sigma: float, clip_min: float,
                  clip_max: float) -> "DelayDistribution":
        """Parametrize from the linear-space mean: exp(mu + sigma^2/2) = mean."""
        if not mean_s > 0:
            raise ConfigError("delay mean must be > 0")
        mu = math.log(mean_s) - 0.5 * sigma * sigma
        return DelayDistribution(mu=mu, sigma=sigma, clip_min=clip_min,
                                 clip_max=clip_max)

    @property
    def linear_mean(self) -> float:
        return math.exp(self.mu + 0.5 * self.sigma * self.sigma)


def measured_delay_distribution() -> DelayDistribution:
    """The device-calibrated delay model (22 ms mean, sigma 0.5, 8.08..58.26 ms)."""
    return DelayDistribution.from_mean(22e-3, 0.5, 8.08e-3, 58.26e-3)


@dataclass(frozen=True)
class NoiseModel:
    """Read-noise model: per-element std = relative_std * max|w| of the layer."""

    relative_std: float
    seed: int = 0

    def __post_init__(self):
        if self.relative_std < 0:
            raise ConfigError("noise relative_std must be >= 0")


def sample_delays(dist: DelayDistribution, n: int,
                  rng: np.random.Generator) -> np.ndarray:
    """Draw n delays (seconds) from the log-normal model, clipped to its range."""
    if n < 1:
        raise DomainError("n must be >= 1")
    raw = rng.lognormal(mean=dist.mu, sigma=dist.sigma, size=n)
    return np.clip(raw, dist.clip_min, dist.clip_max)


def resistance_from_delay(delay_s: float, capacitance_f: float) -> float:
    """Pristine resistance inferred from a measured delay: R = delay / C."""
    if not delay_s > 0:
        raise DomainError("delay must be positive")
    if not capacitance_f > 0:
        raise DomainError("capacitance must be positive")
    return delay_s / capacitance_f


def _set_level_edges(lrs_band=LRS_BAND) -> np.ndarray:
    # 8 log-spaced sub-bands; level 7 occupies the lowest-resistance band.
    return np.geomspace(lrs_band[0], lrs_band[1], N_SET_LEVELS + 1)


def program_set(level: int, rng: np.random.Generator,
                lrs_band=LRS_BAND) -> DeviceState:
    """SET a device to one of 8 LRS levels (7 = strongest, lowest resistance).

    The target resistance is the geometric center of the level's sub-band
    with multiplicative log-normal jitter, clipped to the sub-band.
    """
    if not 0 <= level < N_SET_LEVELS:
        raise DomainError(f"SET level must be in [0, {N_SET_LEVELS - 1}]")
    edges = _set_level_edges(lrs_band)
    lo, hi = edges[N_SET_LEVELS - 1 - level], edges[N_SET_LEVELS - level]
    center = math.sqrt(lo * hi)
    r = float(np.clip(center * math.exp(rng.normal(0.0, SET_JITTER_SIGMA_LOG)),
                      lo, hi))
    return DeviceState(DeviceMode.LRS, conductance=1.0 / r, level=level)


def set_level_center_ohms(level: int, lrs_band=LRS_BAND) -> float:
    """Nominal (median) resistance of a SET level, without jitter."""
    if not 0 <= level < N_SET_LEVELS:
        raise DomainError(f"SET level must be in [0, {N_SET_LEVELS - 1}]")
    edges = _set_level_edges(lrs_band)
    lo, hi = edges[N_SET_LEVELS - 1 - level], edges[N_SET_LEVELS - level]
    return math.sqrt(lo * hi)


def program_reset(rng: np.random.Generator, hrs_band=HRS_BAND) -> DeviceState:
    """RESET a device to HRS; resistance is log-uniform over the HRS band."""
    log_r = rng.uniform(math.log(hrs_band[0]), math.log(hrs_band[1]))
    return DeviceState(DeviceMode.HRS, conductance=1.0 / math.exp(log_r))


def hrs_center_ohms(hrs_band=HRS_BAND) -> float:
    """Geometric mid-band HRS resistance (the HRS draw's median)."""
    return math.sqrt(hrs_band[0] * hrs_band[1])


def apply_read_noise(weights: np.ndarray, model: NoiseModel,
                     rng: np.random.Generator | None = None) -> np.ndarray:
    """Return weights + N(0, sigma^2) i.i.d., sigma = relative_std * max|w|.

    The input array is left untouched. An all-zero layer has sigma = 0 and
    passes through unchanged.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.size == 0:
        raise DomainError("weight tensor must be non-empty")
    if rng is None:
        rng = np.random.default_rng(model.seed)
    sigma = model.relative_std * float(np.abs(weights).max())
    if sigma == 0.0:
        return weights.copy()
    return weights + rng.normal(0.0, sigma, size=weights.shape)


def fit_lognormal(samples) -> tuple[float, float]:
    """Maximum-likelihood log-normal fit: (mu, sigma) of the log-samples."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size < 2:
        raise DomainError("need at least 2 samples")
    if samples.min() <= 0:
        raise DomainError("samples must be positive")
    logs = np.log(samples)
    if logs.min() == logs.max():  # degenerate fit; keep sigma exactly 0
        return float(logs[0]), 0.0
    return float(logs.mean()), float(logs.std())
