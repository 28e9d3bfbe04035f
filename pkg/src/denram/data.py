"""Spike encoding, dataset I/O, and synthetic task generators.

The on-disk event-raster format (ERAS) is owned here and is bit-exact:
a text header `ERAS v1 n_channels=<int> dt=<float> n_steps=<int>
n_classes=<int>`, then per sample a `# sample <id> label=<int>` line,
`channel,time_bin,count` event lines, and a terminating blank line. A
binary twin (magic `ERASB1\\0`) carries identical content; the loader
accepts either.

ECG records enter as plain CSV exports (sample index + lead value, and
sample index + beat symbol for annotations) rather than the clinical
binary format; the signal is delta-modulated into UP/DOWN channels and
cut into fixed windows around the annotated beats.
"""

from __future__ import annotations

import logging
import re
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, FormatError
from .raster import SpikeRaster

log = logging.getLogger(__name__)

NORMAL_SYMBOLS = frozenset("LRN")
ANOMALY_SYMBOLS = frozenset(["e", "j", "A", "a", "J", "S", "V", "E", "F",
                             "/", "f", "Q"])


@dataclass
class LabeledRasterSet:
    """Samples of (SpikeRaster, class index) sharing dt and channel count."""

    samples: list
    n_classes: int
    split: str = ""

    def __post_init__(self):
        if self.n_classes < 1:
            raise DomainError("n_classes must be >= 1")
        self.samples = list(self.samples)
        for raster, label in self.samples:
            if not isinstance(raster, SpikeRaster):
                raise DomainError("samples must contain SpikeRaster objects")
            if not 0 <= int(label) < self.n_classes:
                raise DomainError(f"label {label} out of range [0, {self.n_classes})")
        if self.samples:
            r0 = self.samples[0][0]
            for raster, _ in self.samples:
                if raster.dt != r0.dt:
                    raise DomainError("all rasters must share dt")
                if raster.n_channels != r0.n_channels:
                    raise DomainError("all rasters must share n_channels")

    @property
    def n_samples(self) -> int:
        return len(self.samples)

    @property
    def dt(self) -> float:
        if not self.samples:
            raise DomainError("empty set has no dt")
        return self.samples[0][0].dt

    @property
    def n_channels(self) -> int:
        if not self.samples:
            raise DomainError("empty set has no channel count")
        return self.samples[0][0].n_channels

    @property
    def labels(self) -> np.ndarray:
        return np.asarray([y for _, y in self.samples], dtype=np.int64)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)


@dataclass(frozen=True)
class DeltaModParams:
    delta: float               # signal units per spike
    initial: float = 0.0       # reconstruction start value

    def __post_init__(self):
        if not self.delta > 0:
            raise DomainError("delta must be positive")


def delta_modulate(signal, p: DeltaModParams, dt: float = 1.0) -> SpikeRaster:
    """Encode a real series into UP/DOWN spike counts against a tracker.

    Per sample the tracker emits UP spikes (channel 0) while it trails the
    signal by at least delta, stepping up by delta each time, and DOWN
    spikes (channel 1) symmetrically; multiple spikes per bin appear as
    counts. A ramp rising by exactly delta per step therefore emits one UP
    spike per step.
    """
    x = np.asarray(signal, dtype=np.float64).ravel()
    if x.size == 0:
        raise DomainError("signal must be non-empty")
    data = np.zeros((2, x.size), dtype=np.int64)
    r = p.initial
    for t in range(x.size):
        gap = x[t] - r
        if gap >= p.delta:
            k = int(np.floor(gap / p.delta))
            data[0, t] = k
            r += k * p.delta
        elif -gap >= p.delta:
            k = int(np.floor(-gap / p.delta))
            data[1, t] = k
            r -= k * p.delta
    return SpikeRaster(data, dt)


# --- ERAS event raster files --------------------------------------------------

_ERAS_HEADER = re.compile(
    r"^ERAS v1 n_channels=(\d+) dt=(\S+) n_steps=(\d+) n_classes=(\d+)$")
_ERAS_SAMPLE = re.compile(r"^# sample (\d+) label=(-?\d+)$")
_BIN_MAGIC = b"ERASB1\x00"


def _uniform_steps(dataset: LabeledRasterSet) -> int:
    steps = {r.n_steps for r, _ in dataset.samples}
    if len(steps) > 1:
        raise DomainError("serialization requires rasters of equal n_steps")
    return steps.pop() if steps else 0


def save_raster_dataset(dataset: LabeledRasterSet, path, binary: bool = False) -> None:
    if dataset.n_samples == 0:
        raise DomainError("refusing to serialize an empty dataset")
    n_steps = _uniform_steps(dataset)
    if binary:
        _save_binary(dataset, path, n_steps)
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"ERAS v1 n_channels={dataset.n_channels} dt={dataset.dt!r} "
                 f"n_steps={n_steps} n_classes={dataset.n_classes}\n")
        for i, (raster, label) in enumerate(dataset.samples):
            fh.write(f"# sample {i} label={label}\n")
            for ch, tb, cnt in raster.events():
                fh.write(f"{ch},{tb},{cnt}\n")
            fh.write("\n")


def _save_binary(dataset: LabeledRasterSet, path, n_steps: int) -> None:
    with open(path, "wb") as fh:
        fh.write(_BIN_MAGIC)
        fh.write(struct.pack("<IdIII", dataset.n_channels, dataset.dt,
                             n_steps, dataset.n_classes, dataset.n_samples))
        for i, (raster, label) in enumerate(dataset.samples):
            ev = raster.events()
            fh.write(struct.pack("<IiI", i, int(label), len(ev)))
            for ch, tb, cnt in ev:
                fh.write(struct.pack("<IIq", ch, tb, cnt))


def load_raster_dataset(path, max_steps: int | None = None) -> LabeledRasterSet:
    """Load an ERAS file (text or binary), optionally truncating in time.

    With max_steps set, events at bins >= max_steps are dropped and every
    raster is cut (or zero-padded) to exactly max_steps bins.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob.startswith(_BIN_MAGIC):
        header, raw_samples = _parse_binary(blob)
    else:
        try:
            text = blob.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{path}: not an event raster file") from exc
        header, raw_samples = _parse_text(text, path)
    n_channels, dt, n_steps, n_classes = header
    t_out = n_steps if max_steps is None else max_steps
    samples = []
    for label, events in raw_samples:
        data = np.zeros((n_channels, t_out), dtype=np.int64)
        for ch, tb, cnt in events:
            if tb < t_out:
                data[ch, tb] += cnt
        samples.append((SpikeRaster(data, dt), label))
    try:
        return LabeledRasterSet(samples, n_classes=n_classes)
    except DomainError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def _parse_text(text: str, path):
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()  # final newline ends a line, it is not a blank line
    m = _ERAS_HEADER.match(lines[0]) if lines else None
    if m is None:
        raise FormatError(f"{path}:1: bad or missing ERAS header")
    n_channels, n_steps, n_classes = int(m.group(1)), int(m.group(3)), int(m.group(4))
    try:
        dt = float(m.group(2))
    except ValueError as exc:
        raise FormatError(f"{path}:1: bad dt value {m.group(2)!r}") from exc
    raw = []
    current: list | None = None
    label = 0
    for ln, line in enumerate(lines[1:], start=2):
        if line == "":
            if current is not None:
                raw.append((label, current))
                current = None
            continue
        if line.startswith("#"):
            if current is not None:
                raise FormatError(f"{path}:{ln}: sample header inside open sample")
            sm = _ERAS_SAMPLE.match(line)
            if sm is None:
                raise FormatError(f"{path}:{ln}: malformed sample header")
            label = int(sm.group(2))
            current = []
            continue
        if current is None:
            raise FormatError(f"{path}:{ln}: event line outside a sample")
        parts = line.split(",")
        if len(parts) != 3:
            raise FormatError(f"{path}:{ln}: expected channel,time_bin,count")
        try:
            ch, tb, cnt = int(parts[0]), int(parts[1]), int(parts[2])
        except ValueError as exc:
            raise FormatError(f"{path}:{ln}: non-integer event field") from exc
        if not 0 <= ch < n_channels:
            raise FormatError(f"{path}:{ln}: channel {ch} out of range")
        if not 0 <= tb < n_steps:
            raise FormatError(f"{path}:{ln}: time_bin {tb} out of range")
        if cnt < 1:
            raise FormatError(f"{path}:{ln}: count must be >= 1")
        current.append((ch, tb, cnt))
    if current is not None:
        raise FormatError(f"{path}: last sample not blank-line terminated")
    return (n_channels, dt, n_steps, n_classes), raw


def _parse_binary(blob: bytes):
    off = len(_BIN_MAGIC)
    head_fmt = "<IdIII"
    head_size = struct.calcsize(head_fmt)
    if len(blob) < off + head_size:
        raise FormatError("truncated binary raster header")
    n_channels, dt, n_steps, n_classes, n_samples = struct.unpack_from(
        head_fmt, blob, off)
    off += head_size
    raw = []
    for _ in range(n_samples):
        if len(blob) < off + 12:
            raise FormatError("truncated binary sample header")
        _, label, n_events = struct.unpack_from("<IiI", blob, off)
        off += 12
        events = []
        for _ in range(n_events):
            if len(blob) < off + 16:
                raise FormatError("truncated binary event record")
            ch, tb, cnt = struct.unpack_from("<IIq", blob, off)
            off += 16
            if ch >= n_channels or tb >= n_steps or cnt < 1:
                raise FormatError("binary event out of range")
            events.append((ch, tb, cnt))
        raw.append((label, events))
    return (n_channels, dt, n_steps, n_classes), raw


# --- ECG ingestion --------------------------------------------------------------

def _read_csv_rows(path, n_fields: int):
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != n_fields:
                raise FormatError(f"{path}:{ln}: expected {n_fields} fields")
            try:
                int(parts[0])
            except ValueError:
                if ln == 1:
                    continue            # column header
                raise FormatError(f"{path}:{ln}: bad sample index {parts[0]!r}")
            rows.append((ln, parts))
    return rows


def load_ecg_segments(record_file, annotation_file, window: int = 180,
                      p: DeltaModParams | None = None, dt: float = 1.0 / 360.0):
    """Cut delta-modulated beat windows from an ECG record export.

    The record CSV holds (sample index, lead value) rows; annotations hold
    (sample index, beat symbol). Beats with symbols outside both label
    groups are skipped (counted in a warning). The beats are split into
    equal-size train/test halves by time order.

    Returns (train: LabeledRasterSet, test: LabeledRasterSet).
    """
    values = []
    for ln, parts in _read_csv_rows(record_file, 2):
        try:
            values.append(float(parts[1]))
        except ValueError as exc:
            raise FormatError(f"{record_file}:{ln}: bad sample value") from exc
    if not values:
        raise FormatError(f"{record_file}: no samples")
    values = np.asarray(values)
    beats = []
    for ln, parts in _read_csv_rows(annotation_file, 2):
        beats.append((int(parts[0]), parts[1]))
    beats.sort(key=lambda b: b[0])

    if p is None:
        q1, q3 = np.percentile(values, [25, 75])
        p = DeltaModParams(delta=0.1 * float(q3 - q1), initial=float(values[0]))
    full = delta_modulate(values, p, dt)

    segments = []
    skipped = 0
    for pos, sym in beats:
        if not 0 <= pos < values.size:
            raise DomainError(f"beat position {pos} outside record "
                              f"of {values.size} samples")
        if sym in NORMAL_SYMBOLS:
            label = 0
        elif sym in ANOMALY_SYMBOLS:
            label = 1
        else:
            skipped += 1
            continue
        start = pos - window // 2
        seg = np.zeros((2, window), dtype=np.int64)
        lo, hi = max(start, 0), min(start + window, values.size)
        seg[:, lo - start:hi - start] = full.data[:, lo:hi]
        segments.append((SpikeRaster(seg, dt), label))
    if skipped:
        log.warning("skipped %d beats with unknown annotation symbols", skipped)
    half = len(segments) // 2
    train = LabeledRasterSet(segments[:half], n_classes=2, split="train")
    test = LabeledRasterSet(segments[half:], n_classes=2, split="test")
    return train, test


# --- channel sub-sampling and splits -----------------------------------------------

def subsample_channels(dataset: LabeledRasterSet, group_size: int,
                       n_groups: int = 3) -> LabeledRasterSet:
    """Augment by cutting each raster into disjoint channel blocks.

    The channel axis is divided into n_groups consecutive blocks of
    floor(n/n_groups) channels; each block is truncated to group_size if
    larger and zero-padded up to group_size if smaller, so groups never
    share channels. Every sample yields n_groups samples.
    """
    n = dataset.n_channels
    if group_size < 1:
        raise DomainError("group_size must be >= 1")
    if group_size > n:
        raise DomainError(f"group_size {group_size} exceeds {n} channels")
    block = n // n_groups
    if block < 1:
        raise DomainError(f"cannot form {n_groups} groups from {n} channels")
    width = min(block, group_size)
    out = []
    for raster, label in dataset.samples:
        for g in range(n_groups):
            start = g * block
            data = np.zeros((group_size, raster.n_steps), dtype=np.int64)
            data[:width] = raster.data[start:start + width]
            out.append((SpikeRaster(data, raster.dt), label))
    return LabeledRasterSet(out, n_classes=dataset.n_classes, split=dataset.split)


def split_train_val(dataset: LabeledRasterSet, fraction: float = 0.8,
                    seed: int = 0):
    """Seeded stratified split; per-class counts within one of proportional."""
    if dataset.n_samples < 2:
        raise DomainError("need at least 2 samples to split")
    if not 0 < fraction < 1:
        raise DomainError("fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    labels = dataset.labels
    train_idx, val_idx = [], []
    for c in range(dataset.n_classes):
        idx = np.flatnonzero(labels == c)
        rng.shuffle(idx)
        k = int(np.floor(fraction * idx.size + 0.5))
        train_idx.extend(idx[:k])
        val_idx.extend(idx[k:])
    train_idx = np.asarray(train_idx, dtype=np.int64)
    val_idx = np.asarray(val_idx, dtype=np.int64)
    rng.shuffle(train_idx)
    rng.shuffle(val_idx)
    train = [dataset.samples[i] for i in train_idx]
    val = [dataset.samples[i] for i in val_idx]
    return (LabeledRasterSet(train, dataset.n_classes, "train"),
            LabeledRasterSet(val, dataset.n_classes, "val"))


# --- synthetic tasks ------------------------------------------------------------------

def synth_coincidence_dataset(n_samples: int, lags_s, jitter_s: float,
                              dt: float, n_steps: int,
                              rng: np.random.Generator) -> LabeledRasterSet:
    """Two-channel lag classification: ch1 fires lag_class after ch0.

    Channel 0 spikes at a random t0, channel 1 at t0 + lag + U(-jitter,
    jitter); the label is the index of the lag. Classes remain separable
    as long as jitter < half the smallest lag gap (enforced).
    """
    lags = np.asarray(lags_s, dtype=np.float64)
    if lags.ndim != 1 or lags.size < 1:
        raise DomainError("need at least one lag")
    if len(set(lags.tolist())) != lags.size:
        raise DomainError("lags must be distinct")
    if jitter_s < 0:
        raise DomainError("jitter must be >= 0")
    if lags.size > 1:
        gap = np.min(np.diff(np.sort(lags)))
        if not jitter_s < gap / 2:
            raise DomainError("jitter must be < min lag gap / 2")
    t_total = n_steps * dt
    t0_max = t_total - lags.max() - jitter_s - dt
    if t0_max <= 0:
        raise DomainError("window too short for the requested lags")
    samples = []
    for k in range(n_samples):
        label = k % lags.size
        t0 = rng.uniform(0.0, t0_max)
        t1 = t0 + lags[label] + rng.uniform(-jitter_s, jitter_s)
        data = np.zeros((2, n_steps), dtype=np.int64)
        data[0, int(t0 / dt)] += 1
        data[1, int(max(t1, 0.0) / dt)] += 1
        samples.append((SpikeRaster(data, dt), label))
    return LabeledRasterSet(samples, n_classes=int(lags.size))


def synth_lag_pattern_dataset(n_samples: int, n_channels: int, lags_s,
                              dt: float, n_steps: int,
                              rng: np.random.Generator, n_pairs: int = 3,
                              background_hz: float = 0.0) -> LabeledRasterSet:
    """Multichannel lag classification with shared spatial structure.

    A fixed set of channel pairs (a_m, b_m) is drawn once per dataset; in
    every sample each pair fires a at a random bin and b lag_class bins
    later, so classes differ only in timing, never in which channels are
    active. Optional Poisson background spikes act as distractors.
    """
    lags = np.asarray(lags_s, dtype=np.float64)
    if lags.ndim != 1 or lags.size < 1:
        raise DomainError("need at least one lag")
    if n_channels < 2 * n_pairs:
        raise DomainError("need at least 2 * n_pairs channels")
    lag_bins = np.rint(lags / dt).astype(np.int64)
    if lag_bins.max() >= n_steps - 1:
        raise DomainError("window too short for the requested lags")
    chans = rng.permutation(n_channels)[:2 * n_pairs]
    pairs = [(int(chans[2 * m]), int(chans[2 * m + 1])) for m in range(n_pairs)]
    t0_hi = n_steps - int(lag_bins.max()) - 1
    samples = []
    for k in range(n_samples):
        label = k % lags.size
        data = np.zeros((n_channels, n_steps), dtype=np.int64)
        for a, b in pairs:
            t0 = int(rng.integers(0, t0_hi))
            data[a, t0] += 1
            data[b, t0 + lag_bins[label]] += 1
        if background_hz > 0:
            data += rng.poisson(background_hz * dt, size=data.shape)
        samples.append((SpikeRaster(data, dt), label))
    return LabeledRasterSet(samples, n_classes=int(lags.size))
