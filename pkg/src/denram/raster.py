"""Binned spike rasters, the universal input format of the simulator.

A raster holds integer spike counts on a (channel x time-step) grid with a
fixed bin width in seconds. Multiple spikes per bin are allowed as counts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class SpikeRaster:
    """Spike counts per (channel, time bin).

    data: integer array (n_channels, n_steps), entries >= 0
    dt:   seconds per bin
    """

    data: np.ndarray
    dt: float

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise DomainError("raster data must be 2-D (channels x steps)")
        if not np.issubdtype(data.dtype, np.integer):
            if not np.all(data == np.floor(data)):
                raise DomainError("raster entries must be integers")
            data = data.astype(np.int64)
        if data.size and data.min() < 0:
            raise DomainError("raster entries must be non-negative")
        if not self.dt > 0:
            raise DomainError("raster dt must be positive")
        object.__setattr__(self, "data", np.ascontiguousarray(data, dtype=np.int64))

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_steps(self) -> int:
        return self.data.shape[1]

    @property
    def total_spikes(self) -> int:
        return int(self.data.sum())

    def events(self) -> np.ndarray:
        """Return the event-list view: rows of (channel, time_bin, count)."""
        ch, tb = np.nonzero(self.data)
        return np.stack([ch, tb, self.data[ch, tb]], axis=1)

    @staticmethod
    def from_events(events, n_channels: int, n_steps: int, dt: float) -> "SpikeRaster":
        """Build a raster from (channel, time_bin, count) rows.

        Counts for repeated (channel, bin) pairs accumulate. Events outside
        the grid raise DomainError.
        """
        data = np.zeros((n_channels, n_steps), dtype=np.int64)
        events = np.asarray(events, dtype=np.int64).reshape(-1, 3)
        if events.size:
            ch, tb, cnt = events[:, 0], events[:, 1], events[:, 2]
            if ch.min() < 0 or ch.max() >= n_channels:
                raise DomainError("event channel index out of range")
            if tb.min() < 0 or tb.max() >= n_steps:
                raise DomainError("event time bin out of range")
            if cnt.min() < 0:
                raise DomainError("event count must be non-negative")
            np.add.at(data, (ch, tb), cnt)
        return SpikeRaster(data, dt)


def rasterize_events(channels, times_s, dt: float, n_channels: int,
                     n_steps: int) -> SpikeRaster:
    """Bin continuous-time events into a raster.

    Each event at time t lands in bin floor(t / dt); events at or beyond
    n_steps bins are dropped (duration truncation).
    """
    if not dt > 0:
        raise DomainError("dt must be positive")
    channels = np.asarray(channels, dtype=np.int64)
    times_s = np.asarray(times_s, dtype=np.float64)
    if channels.shape != times_s.shape:
        raise DomainError("channels and times must have the same length")
    if times_s.size and times_s.min() < 0:
        raise DomainError("event times must be non-negative")
    bins = np.floor(times_s / dt).astype(np.int64)
    keep = bins < n_steps
    data = np.zeros((n_channels, n_steps), dtype=np.int64)
    if keep.any():
        ch = channels[keep]
        if ch.size and (ch.min() < 0 or ch.max() >= n_channels):
            raise DomainError("event channel index out of range")
        np.add.at(data, (ch, bins[keep]), 1)
    return SpikeRaster(data, dt)
