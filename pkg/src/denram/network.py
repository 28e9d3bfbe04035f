"""Discrete-time spiking network models.

Two architectures share the LIF primitives here: the dendritic delay
network (delay bank + one trainable weight matrix + readout neurons) and
a recurrent SNN baseline of matched input/output shape. All dynamics are
pure functions of their inputs; no hidden global state.

Membrane update (reset to zero via the previous spike):

    v[t] = alpha * v[t-1] * (1 - s[t-1]) + i_in[t],   s[t] = v[t] >= theta

Readout neurons never reset in max-potential mode; the logit is the
maximum membrane value over time.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
from scipy.signal import lfilter

from .dendrite import (AnalogCircuitParams, DelayBank, dendritic_current,
                       expand_with_delays)
from .device import (hrs_center_ohms, resistance_from_delay,
                     set_level_center_ohms)
from .errors import DomainError, FormatError
from .raster import SpikeRaster


class ReadoutMode(Enum):
    MAX_POTENTIAL = "max_potential"
    SPIKE_COUNT = "spike_count"


@dataclass(frozen=True)
class LifParams:
    """Leaky integrate-and-fire constants for one layer."""

    alpha: float                 # per-bin decay, exp(-dt / tau_mem)
    v_threshold: float
    refractory_bins: int = 0

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise DomainError("alpha must lie in (0, 1)")
        if not self.v_threshold > 0:
            raise DomainError("v_threshold must be positive")
        if self.refractory_bins < 0:
            raise DomainError("refractory_bins must be >= 0")


def alpha_from_tau(dt: float, tau: float) -> float:
    """Per-bin leak factor exp(-dt / tau)."""
    if not (dt > 0 and tau > 0):
        raise DomainError("dt and tau must be positive")
    return math.exp(-dt / tau)


def lif_forward(currents: np.ndarray, p: LifParams):
    """Run LIF neurons over input currents (n_neurons, n_steps).

    Returns (spikes uint8, potentials float64) of the same shape. The stored
    potential is the pre-reset value; reset is applied through the next
    step's (1 - s) factor. After a spike the neuron cannot fire again for
    refractory_bins bins (membrane keeps integrating).
    """
    i_in = np.asarray(currents, dtype=np.float64)
    if i_in.ndim != 2:
        raise DomainError("currents must be 2-D (n_neurons, n_steps)")
    n, t_steps = i_in.shape
    spikes = np.zeros((n, t_steps), dtype=np.uint8)
    potentials = np.zeros((n, t_steps), dtype=np.float64)
    v = np.zeros(n)
    s_prev = np.zeros(n)
    refr = np.zeros(n, dtype=np.int64)
    for t in range(t_steps):
        v = p.alpha * v * (1.0 - s_prev) + i_in[:, t]
        s = (v >= p.v_threshold) & (refr == 0)
        refr = np.maximum(refr - 1, 0)
        refr[s] = p.refractory_bins
        potentials[:, t] = v
        spikes[:, t] = s
        s_prev = s.astype(np.float64)
    return spikes, potentials


def leaky_readout(currents: np.ndarray, alpha_out: float) -> np.ndarray:
    """Non-spiking leaky integrator u[t] = alpha_out * u[t-1] + i_in[t]."""
    if not 0 < alpha_out < 1:
        raise DomainError("alpha_out must lie in (0, 1)")
    i_in = np.asarray(currents, dtype=np.float64)
    return lfilter([1.0], [1.0, -alpha_out], i_in, axis=-1)


@dataclass(frozen=True)
class ForwardResult:
    logits: np.ndarray
    potentials: np.ndarray
    spikes: np.ndarray | None = None


@dataclass(frozen=True)
class DenramModel:
    """Delay bank + trainable weights + readout layer."""

    bank: DelayBank
    weights: np.ndarray          # (n_in * n_delays, n_out)
    lif: LifParams
    alpha_out: float
    readout_mode: ReadoutMode = ReadoutMode.MAX_POTENTIAL
    shared_bank: bool = True     # one physical delay line per input channel
    delay_seed: int | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        expect = self.bank.n_channels * self.bank.n_delays
        if w.ndim != 2 or w.shape[0] != expect:
            raise DomainError(f"weights must be ({expect}, n_out), got {w.shape}")
        if not 0 < self.alpha_out < 1:
            raise DomainError("alpha_out must lie in (0, 1)")
        object.__setattr__(self, "weights", w)

    @property
    def n_in(self) -> int:
        return self.bank.n_channels

    @property
    def n_delays(self) -> int:
        return self.bank.n_delays

    @property
    def n_out(self) -> int:
        return self.weights.shape[1]

    def with_weights(self, weights: np.ndarray) -> "DenramModel":
        return replace(self, weights=np.asarray(weights, dtype=np.float64))


def denram_forward(model: DenramModel, raster: SpikeRaster) -> ForwardResult:
    """Expand, weight, integrate; logits per readout mode.

    MAX_POTENTIAL: logit[o] = max_t u[o, t] of the non-resetting integrator.
    SPIKE_COUNT: logit[o] = total LIF output spikes of neuron o.
    """
    expanded = expand_with_delays(raster, model.bank)
    i_in = dendritic_current(expanded, model.weights)
    if model.readout_mode is ReadoutMode.MAX_POTENTIAL:
        u = leaky_readout(i_in, model.alpha_out)
        return ForwardResult(logits=u.max(axis=1), potentials=u)
    spikes, potentials = lif_forward(i_in, model.lif)
    return ForwardResult(logits=spikes.sum(axis=1).astype(np.float64),
                         potentials=potentials, spikes=spikes)


@dataclass(frozen=True)
class SrnnModel:
    """Recurrent LIF baseline: input, recurrent, and readout weight matrices."""

    w_in: np.ndarray             # (n_in, n_hidden)
    w_rec: np.ndarray            # (n_hidden, n_hidden)
    w_out: np.ndarray            # (n_hidden, n_out)
    lif_hidden: LifParams
    alpha_out: float

    def __post_init__(self):
        w_in = np.asarray(self.w_in, dtype=np.float64)
        w_rec = np.asarray(self.w_rec, dtype=np.float64)
        w_out = np.asarray(self.w_out, dtype=np.float64)
        h = w_in.shape[1] if w_in.ndim == 2 else -1
        if w_rec.shape != (h, h):
            raise DomainError("w_rec must be (n_hidden, n_hidden)")
        if w_out.ndim != 2 or w_out.shape[0] != h:
            raise DomainError("w_out must be (n_hidden, n_out)")
        if not 0 < self.alpha_out < 1:
            raise DomainError("alpha_out must lie in (0, 1)")
        object.__setattr__(self, "w_in", w_in)
        object.__setattr__(self, "w_rec", w_rec)
        object.__setattr__(self, "w_out", w_out)

    @property
    def n_in(self) -> int:
        return self.w_in.shape[0]

    @property
    def n_hidden(self) -> int:
        return self.w_in.shape[1]

    @property
    def n_out(self) -> int:
        return self.w_out.shape[1]


def srnn_forward(model: SrnnModel, raster: SpikeRaster) -> ForwardResult:
    """Recurrent LIF layer feeding a max-potential leaky readout.

    With w_rec = 0 this reduces exactly to lif_forward on w_in.T @ x followed
    by leaky_readout on w_out.T @ spikes (same update order, same arithmetic).
    """
    if raster.n_channels != model.n_in:
        raise DomainError(
            f"model expects {model.n_in} channels, raster has {raster.n_channels}")
    x = raster.data.astype(np.float64)
    i_ff = model.w_in.T @ x
    p = model.lif_hidden
    n_h, t_steps = model.n_hidden, raster.n_steps
    spikes = np.zeros((n_h, t_steps), dtype=np.uint8)
    v = np.zeros(n_h)
    s_prev = np.zeros(n_h)
    refr = np.zeros(n_h, dtype=np.int64)
    for t in range(t_steps):
        v = p.alpha * v * (1.0 - s_prev) + i_ff[:, t] + model.w_rec.T @ s_prev
        s = (v >= p.v_threshold) & (refr == 0)
        refr = np.maximum(refr - 1, 0)
        refr[s] = p.refractory_bins
        spikes[:, t] = s
        s_prev = s.astype(np.float64)
    u = leaky_readout(model.w_out.T @ spikes.astype(np.float64), model.alpha_out)
    return ForwardResult(logits=u.max(axis=1), potentials=u, spikes=spikes)


# --- coincidence detection experiment -------------------------------------

@dataclass(frozen=True)
class CoincidenceResult:
    fired: bool
    peak_potential: float
    spike_times_s: list


def coincidence_weights(n_delays: int, selected: int, lrs_level: int = 7) -> np.ndarray:
    """Deterministic per-circuit conductances: LRS on one delay, HRS elsewhere."""
    if not 0 <= selected < n_delays:
        raise DomainError("selected delay index out of range")
    w = np.full(n_delays, 1.0 / hrs_center_ohms())
    w[selected] = 1.0 / set_level_center_ohms(lrs_level)
    return w


def coincidence_experiment(delays_s, weights, lag_s: float,
                           lif: LifParams | None = None, dt: float = 1e-3,
                           tau_mem: float = 20e-3,
                           in2_weight: float | None = None) -> CoincidenceResult:
    """Two-input coincidence detector on one readout neuron.

    IN1 spikes at t = 0 and fans out over `delays_s` with per-circuit
    conductance `weights`; IN2 spikes at t = lag_s through a single undelayed
    circuit of conductance `in2_weight` (defaults to the strongest SET level).
    When `lif` is omitted the threshold is calibrated midway between the
    current of an LRS-weighted coincident pair and an HRS-weighted one, so
    only an aligned low-resistance branch can fire the neuron.
    """
    delays = np.asarray(delays_s, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if delays.ndim != 1 or delays.shape != weights.shape:
        raise DomainError("delays and weights must be matching 1-D arrays")
    if lag_s < 0:
        raise DomainError("lag must be non-negative")
    g_lrs = 1.0 / set_level_center_ohms(7)
    g_hrs = 1.0 / hrs_center_ohms()
    if in2_weight is None:
        in2_weight = g_lrs
    if lif is None:
        theta = in2_weight + 0.5 * (g_lrs + g_hrs)
        lif = LifParams(alpha=alpha_from_tau(dt, tau_mem), v_threshold=theta)

    d = delays.size
    lag_bin = int(round(lag_s / dt))
    n_steps = max(int(round(delays.max() / dt)), lag_bin) + int(round(4 * tau_mem / dt))
    data = np.zeros((2, n_steps), dtype=np.int64)
    data[0, 0] = 1
    data[1, lag_bin] = 1
    raster = SpikeRaster(data, dt)

    # Channel 2 contributes one undelayed reference circuit; its remaining
    # bank slots stay pristine (zero weight).
    bank = DelayBank.from_delays(np.vstack([delays, np.zeros(d)]), dt)
    w = np.zeros((2 * d, 1))
    w[:d, 0] = weights
    w[d, 0] = in2_weight
    model = DenramModel(bank=bank, weights=w, lif=lif, alpha_out=lif.alpha,
                        readout_mode=ReadoutMode.SPIKE_COUNT)
    out = denram_forward(model, raster)
    spike_bins = np.nonzero(out.spikes[0])[0]
    return CoincidenceResult(fired=bool(out.spikes.sum() > 0),
                             peak_potential=float(out.potentials.max()),
                             spike_times_s=[float(b * dt) for b in spike_bins])


def delay_line_resistances(delays_s, p=None, capacitance: float | None = None) -> np.ndarray:
    """Programming targets for a delay bank: R = delay / (C ln(v_ref/(v_ref-v_th)))."""
    if p is None:
        p = AnalogCircuitParams() if capacitance is None else \
            AnalogCircuitParams(capacitance=capacitance)
    factor = math.log(p.v_ref / (p.v_ref - p.v_th))
    return np.asarray([
        resistance_from_delay(d / factor, p.capacitance) for d in np.ravel(delays_s)
    ])


# --- checkpoint serialization ----------------------------------------------

_CKPT_MAGIC = b"DENRAM-CKPT v1\n"


def _array_entries(named):
    return [[name, arr.dtype.str, list(arr.shape)] for name, arr in named]


def save_checkpoint(model, path) -> None:
    """Binary checkpoint: magic line, JSON header line, raw little-endian arrays."""
    if isinstance(model, DenramModel):
        arrays = [("delays", model.bank.delays), ("shifts", model.bank.shifts),
                  ("weights", model.weights)]
        header = {
            "kind": "denram",
            "dt": model.bank.dt,
            "lif": {"alpha": model.lif.alpha, "v_threshold": model.lif.v_threshold,
                    "refractory_bins": model.lif.refractory_bins},
            "alpha_out": model.alpha_out,
            "readout_mode": model.readout_mode.value,
            "shared_bank": model.shared_bank,
            "delay_seed": model.delay_seed,
            "arrays": _array_entries(arrays),
        }
    elif isinstance(model, SrnnModel):
        arrays = [("w_in", model.w_in), ("w_rec", model.w_rec),
                  ("w_out", model.w_out)]
        header = {
            "kind": "srnn",
            "lif": {"alpha": model.lif_hidden.alpha,
                    "v_threshold": model.lif_hidden.v_threshold,
                    "refractory_bins": model.lif_hidden.refractory_bins},
            "alpha_out": model.alpha_out,
            "arrays": _array_entries(arrays),
        }
    else:
        raise DomainError(f"cannot checkpoint object of type {type(model).__name__}")
    buf = io.BytesIO()
    buf.write(_CKPT_MAGIC)
    buf.write(json.dumps(header, sort_keys=True).encode() + b"\n")
    for _, arr in arrays:
        buf.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path):
    """Inverse of save_checkpoint; rejects files without the magic prefix."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(_CKPT_MAGIC):
        raise FormatError("not a checkpoint file (bad magic)")
    nl = blob.index(b"\n", len(_CKPT_MAGIC))
    try:
        header = json.loads(blob[len(_CKPT_MAGIC):nl].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint header: {exc}") from exc
    offset = nl + 1
    arrays = {}
    for name, dtype_str, shape in header["arrays"]:
        dtype = np.dtype(dtype_str)
        count = int(np.prod(shape)) if shape else 1
        end = offset + count * dtype.itemsize
        if end > len(blob):
            raise FormatError("truncated checkpoint payload")
        arrays[name] = np.frombuffer(blob[offset:end], dtype=dtype).reshape(shape).copy()
        offset = end
    lif = LifParams(**header["lif"])
    if header["kind"] == "denram":
        bank = DelayBank(arrays["delays"], arrays["shifts"], header["dt"])
        return DenramModel(bank=bank, weights=arrays["weights"], lif=lif,
                           alpha_out=header["alpha_out"],
                           readout_mode=ReadoutMode(header["readout_mode"]),
                           shared_bank=header["shared_bank"],
                           delay_seed=header["delay_seed"])
    if header["kind"] == "srnn":
        return SrnnModel(w_in=arrays["w_in"], w_rec=arrays["w_rec"],
                         w_out=arrays["w_out"], lif_hidden=lif,
                         alpha_out=header["alpha_out"])
    raise FormatError(f"unknown checkpoint kind {header['kind']!r}")
