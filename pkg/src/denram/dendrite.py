"""Behavioral model of the dendritic delay circuit.

An input pulse grounds the capacitor; it then recharges toward the rest
level through the delay device with time constant R_d * C, and the
threshold unit emits a spike at the first upward crossing of v_th after
the pulse ends. The closed form for that delay is

    delay = R_d * C * ln(v_ref / (v_ref - v_th))

which `simulate_rc_trace` cross-checks by explicit Euler integration.

At the network level the circuit is abstracted to an integer bin shift:
each input channel is replicated once per delay in its bank and shifted
in time, and the trainable weights read out coincidences in the expanded
raster via `dendritic_current`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .device import DEFAULT_CAPACITANCE_F, DelayDistribution, sample_delays
from .errors import DomainError
from .raster import SpikeRaster


@dataclass(frozen=True)
class AnalogCircuitParams:
    """Electrical operating point of one dendritic circuit."""

    v_ref: float = 0.6            # rest level the capacitor recharges to (V)
    v_th: float = 0.25            # threshold detected on the recharge (V)
    capacitance: float = DEFAULT_CAPACITANCE_F
    pulse_height: float = 1.2     # input spike amplitude (V), behavioral only
    pulse_width: float = 1e-6     # input spike width (s)

    def __post_init__(self):
        if not 0 < self.v_th < self.v_ref:
            raise DomainError("require 0 < v_th < v_ref")
        if not self.capacitance > 0:
            raise DomainError("capacitance must be positive")
        if not self.pulse_width > 0:
            raise DomainError("pulse_width must be positive")


def analog_delay(r_d: float, p: AnalogCircuitParams) -> float:
    """Closed-form recharge delay from pulse end to the v_th crossing."""
    if not r_d > 0:
        raise DomainError("delay resistance must be positive")
    return r_d * p.capacitance * math.log(p.v_ref / (p.v_ref - p.v_th))


def simulate_rc_trace(r_d: float, p: AnalogCircuitParams, input_spike_times,
                      dt_sim: float, t_end: float):
    """Integrate the capacitor voltage and detect delayed output spikes.

    Forward-Euler integration of dv/dt = (v_ref - v) / (R_d C) outside input
    pulses; during a pulse the capacitor is held at ground. Threshold
    crossings during a pulse are ignored; after each pulse end, the first
    upward v_th crossing emits one output spike (linearly interpolated
    between grid points). A new pulse arriving mid-recharge re-grounds the
    capacitor and re-arms the detector.

    Returns (t_grid, v_trace, output_spike_times).
    """
    if not r_d > 0:
        raise DomainError("delay resistance must be positive")
    if not 0 < dt_sim <= p.pulse_width / 10:
        raise DomainError("dt_sim must be positive and <= pulse_width / 10")
    rc = r_d * p.capacitance
    if dt_sim >= rc:
        raise DomainError("dt_sim must resolve the RC time constant")

    times = np.asarray(list(input_spike_times or []), dtype=np.float64)
    if times.size:
        if np.any(np.diff(times) < 0):
            raise DomainError("input spike times must be sorted ascending")
        if times[0] < 0:
            raise DomainError("input spike times must be non-negative")

    n = int(math.floor(t_end / dt_sim)) + 1
    t_grid = np.arange(n) * dt_sim

    # Merge overlapping pulse windows [t_k, t_k + pulse_width).
    windows: list[list[float]] = []
    for tk in times:
        if windows and tk < windows[-1][1]:
            windows[-1][1] = max(windows[-1][1], tk + p.pulse_width)
        else:
            windows.append([tk, tk + p.pulse_width])

    in_pulse = np.zeros(n, dtype=bool)
    for a, b in windows:
        in_pulse[(t_grid >= a) & (t_grid < b)] = True

    v = np.empty(n, dtype=np.float64)
    k = dt_sim / rc
    spikes: list[float] = []

    # Walk maximal runs of pulse / free samples; Euler iterates of the free
    # segments are evaluated in closed form, v_m = v_ref - (v_ref - v0)(1-k)^m.
    i = 0
    v_prev = p.v_ref
    armed = False
    while i < n:
        j = i
        while j < n and in_pulse[j] == in_pulse[i]:
            j += 1
        if in_pulse[i]:
            v[i:j] = 0.0
            v_prev = 0.0
            armed = True
        else:
            m = np.arange(1, j - i + 1, dtype=np.float64)
            v[i:j] = p.v_ref - (p.v_ref - v_prev) * (1.0 - k) ** m
            if armed:
                seg = v[i:j]
                above = np.nonzero(seg >= p.v_th)[0]
                if above.size:
                    idx = i + above[0]
                    v_lo = v[idx - 1] if idx > i else v_prev
                    t_lo = t_grid[idx - 1] if idx > i else t_grid[i] - dt_sim
                    frac = (p.v_th - v_lo) / (v[idx] - v_lo)
                    spikes.append(float(t_lo + frac * dt_sim))
                    armed = False
            v_prev = v[j - 1]
        i = j
    return t_grid, v, spikes


@dataclass(frozen=True)
class DelayBank:
    """Fixed per-channel delay populations and their integer bin shifts.

    delays: (n_channels, n_delays) seconds; shifts = round(delays / dt),
    ties to even. Sampled once, never trained.
    """

    delays: np.ndarray
    shifts: np.ndarray
    dt: float

    def __post_init__(self):
        delays = np.asarray(self.delays, dtype=np.float64)
        shifts = np.asarray(self.shifts, dtype=np.int64)
        if delays.ndim != 2 or delays.shape != shifts.shape:
            raise DomainError("delays and shifts must be matching 2-D arrays")
        if not self.dt > 0:
            raise DomainError("dt must be positive")
        if shifts.size and shifts.min() < 0:
            raise DomainError("shifts must be non-negative")
        if not np.array_equal(shifts, np.rint(delays / self.dt).astype(np.int64)):
            raise DomainError("shifts must equal round(delays / dt)")
        object.__setattr__(self, "delays", delays)
        object.__setattr__(self, "shifts", shifts)

    @property
    def n_channels(self) -> int:
        return self.delays.shape[0]

    @property
    def n_delays(self) -> int:
        return self.delays.shape[1]

    @property
    def max_shift(self) -> int:
        return int(self.shifts.max()) if self.shifts.size else 0

    @staticmethod
    def from_delays(delays, dt: float) -> "DelayBank":
        delays = np.asarray(delays, dtype=np.float64)
        shifts = np.rint(delays / dt).astype(np.int64)
        return DelayBank(delays, shifts, dt)

    @staticmethod
    def sample(dist: DelayDistribution, n_channels: int, n_delays: int,
               dt: float, rng: np.random.Generator) -> "DelayBank":
        flat = sample_delays(dist, n_channels * n_delays, rng)
        return DelayBank.from_delays(flat.reshape(n_channels, n_delays), dt)


def _check_bank_raster(raster: SpikeRaster, bank: DelayBank) -> None:
    if bank.n_channels != raster.n_channels:
        raise DomainError(
            f"bank has {bank.n_channels} channels, raster {raster.n_channels}")
    if bank.dt != raster.dt:
        raise DomainError(f"bin width mismatch: bank {bank.dt}, raster {raster.dt}")


def expand_with_delays(raster: SpikeRaster, bank: DelayBank) -> SpikeRaster:
    """Replicate each channel once per delay, shifted right by its bin shift.

    Output channel (i, j) sits at row i * n_delays + j and is input channel i
    shifted by shifts[i, j] bins, zero-padded at the start. The output spans
    n_steps + max(shifts) bins so no spike is truncated; total spike count is
    n_delays times the input count.
    """
    _check_bank_raster(raster, bank)
    c, d = bank.n_channels, bank.n_delays
    t = raster.n_steps
    out = np.zeros((c * d, t + bank.max_shift), dtype=np.int64)
    for i in range(c):
        row = raster.data[i]
        for j in range(d):
            s = bank.shifts[i, j]
            out[i * d + j, s:s + t] = row
    return SpikeRaster(out, raster.dt)


def expand_events(raster: SpikeRaster, bank: DelayBank):
    """Event-list twin of expand_with_delays for sparse inputs.

    Returns (events, n_channels_out, n_steps_out) where events rows are
    (expanded_channel, time_bin, count).
    """
    _check_bank_raster(raster, bank)
    d = bank.n_delays
    t_out = raster.n_steps + bank.max_shift
    base = raster.events()
    if base.size == 0:
        return np.zeros((0, 3), dtype=np.int64), bank.n_channels * d, t_out
    ch, tb, cnt = base[:, 0], base[:, 1], base[:, 2]
    rows = (ch[:, None] * d + np.arange(d)[None, :]).ravel()
    bins = (tb[:, None] + bank.shifts[ch]).ravel()
    counts = np.repeat(cnt, d)
    return np.stack([rows, bins, counts], axis=1), bank.n_channels * d, t_out


def dendritic_current(expanded: SpikeRaster, weights: np.ndarray) -> np.ndarray:
    """Weighted sum of the delayed spike trains: out[o, t] = sum_c w[c, o] x[c, t]."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 2 or weights.shape[0] != expanded.n_channels:
        raise DomainError(
            f"weights must be ({expanded.n_channels}, n_out), got {weights.shape}")
    return weights.T @ expanded.data.astype(np.float64)


def dendritic_current_from_events(events: np.ndarray, n_steps: int,
                                  weights: np.ndarray) -> np.ndarray:
    """Event-list twin of dendritic_current; must agree with the dense path.

    Events are scattered back to a dense count matrix and pushed through
    the same matmul, so the two paths match bit for bit regardless of
    event order.
    """
    weights = np.asarray(weights, dtype=np.float64)
    events = np.asarray(events, dtype=np.int64).reshape(-1, 3)
    dense = np.zeros((weights.shape[0], n_steps), dtype=np.float64)
    np.add.at(dense, (events[:, 0], events[:, 1]), events[:, 2])
    return weights.T @ dense
