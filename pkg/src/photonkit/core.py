"""Shared domain types: time-tag streams, correlation histograms and the
deterministic random-source contract used by the simulation and analysis layers.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator, NamedTuple, Optional

import numpy as np

# TCSPC hardware tick, 4 ps
DEFAULT_RESOLUTION = 4e-12

# internal tick arithmetic is signed 64-bit
MAX_TICKS = 2**63 - 1


class StreamError(ValueError):
    """Raised on invalid or incompatible time-tag streams."""


class TimeTag(NamedTuple):
    channel: int
    ticks: int


@dataclass(frozen=True)
class TimeTagStream:
    """Ordered multi-channel detection events at a fixed tick resolution.

    Tags are stored as parallel numpy arrays (``channels``, ``ticks``).  A
    finalized stream is sorted by (ticks, channel); use :func:`sort_stream`
    to establish that order explicitly.
    """

    channels: np.ndarray
    ticks: np.ndarray
    resolution: float = DEFAULT_RESOLUTION
    channel_count: int = 2
    duration: Optional[float] = None

    def __post_init__(self):
        channels = np.asarray(self.channels, dtype=np.uint16)
        ticks = np.asarray(self.ticks)
        if channels.shape != ticks.shape or channels.ndim != 1:
            raise StreamError("channels and ticks must be 1-d arrays of equal length")
        if self.resolution <= 0:
            raise StreamError("resolution must be positive")
        if self.channel_count < 1:
            raise StreamError("channel_count must be >= 1")
        if ticks.size:
            if np.any(ticks < 0) or np.any(ticks > MAX_TICKS):
                raise StreamError("ticks out of range [0, 2**63 - 1]")
            if np.any(channels >= self.channel_count):
                raise StreamError("channel index >= channel_count")
        ticks = ticks.astype(np.int64)
        min_duration = float(ticks[-1] if ticks.size else 0) * self.resolution
        duration = self.duration
        if duration is None:
            duration = min_duration
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "ticks", ticks)
        object.__setattr__(self, "duration", float(duration))

    def __len__(self) -> int:
        return self.ticks.size

    def __iter__(self) -> Iterator[TimeTag]:
        for ch, t in zip(self.channels, self.ticks):
            yield TimeTag(int(ch), int(t))

    @property
    def is_sorted(self) -> bool:
        if len(self) < 2:
            return True
        d = np.diff(self.ticks)
        if np.any(d < 0):
            return False
        ties = d == 0
        if np.any(ties):
            dch = np.diff(self.channels.astype(np.int32))
            if np.any(dch[ties] < 0):
                return False
        return True

    def channel_ticks(self, channel: int) -> np.ndarray:
        if channel < 0 or channel >= self.channel_count:
            raise StreamError(f"unknown channel {channel}")
        return self.ticks[self.channels == channel]

    def times(self) -> np.ndarray:
        """Tag times in seconds."""
        return self.ticks * self.resolution

    @classmethod
    def from_times(cls, times, channel: int = 0, resolution: float = DEFAULT_RESOLUTION,
                   channel_count: Optional[int] = None, duration: Optional[float] = None
                   ) -> "TimeTagStream":
        """Quantize event times in seconds onto the tick grid of one channel."""
        times = np.asarray(times, dtype=float)
        ticks = np.rint(times / resolution).astype(np.int64)
        ticks.sort()
        channels = np.full(ticks.shape, channel, dtype=np.uint16)
        if channel_count is None:
            channel_count = channel + 1
        return cls(channels, ticks, resolution, channel_count, duration)


def sort_stream(s: TimeTagStream) -> TimeTagStream:
    """Stable sort by (ticks, channel ascending); idempotent."""
    order = np.lexsort((s.channels, s.ticks))
    return replace(s, channels=s.channels[order], ticks=s.ticks[order])


def merge_streams(a: TimeTagStream, b: TimeTagStream) -> TimeTagStream:
    """Merge two sorted streams into one sorted stream.

    Channel indices are kept as-is; the caller is responsible for assigning
    non-colliding channels when the inputs represent distinct detectors.
    """
    if a.resolution != b.resolution:
        raise StreamError(
            f"resolution mismatch: {a.resolution} vs {b.resolution}")
    channels = np.concatenate([a.channels, b.channels])
    ticks = np.concatenate([a.ticks, b.ticks])
    order = np.lexsort((channels, ticks))
    return TimeTagStream(
        channels[order], ticks[order],
        resolution=a.resolution,
        channel_count=max(a.channel_count, b.channel_count),
        duration=max(a.duration, b.duration),
    )


@dataclass
class CorrelationHistogram:
    """Binned coincidences with bin centers symmetric about zero delay.

    ``counts`` are raw pair counts; when ``normalization`` is set,
    ``normalized`` gives counts / normalization.  ``sigma`` is the per-bin
    one-standard-deviation uncertainty in raw counts.
    """

    bin_width: float
    centers: np.ndarray
    counts: np.ndarray
    mode: str
    normalization: Optional[float] = None
    sigma: Optional[np.ndarray] = None

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=float)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.bin_width <= 0:
            raise ValueError("bin_width must be positive")
        if self.centers.shape != self.counts.shape:
            raise ValueError("centers and counts length mismatch")
        if np.any(self.counts < 0):
            raise ValueError("counts must be non-negative")
        if self.normalization is not None and self.normalization <= 0:
            raise ValueError("normalization must be positive")

    @property
    def normalized(self) -> np.ndarray:
        if self.normalization is None:
            raise ValueError("histogram has no normalization")
        return self.counts / self.normalization

    @property
    def normalized_sigma(self) -> np.ndarray:
        if self.normalization is None or self.sigma is None:
            raise ValueError("histogram has no normalization/sigma")
        return self.sigma / self.normalization

    def value_at_zero(self) -> float:
        """Normalized value of the bin whose center is closest to zero delay."""
        i = int(np.argmin(np.abs(self.centers)))
        return float(self.normalized[i])


_MIX = 0x9E3779B97F4A7C15  # splitmix64 increment, used to derive sub-streams


@dataclass(frozen=True)
class RandomSource:
    """Counter-based random source: identical (seed, stream_id) pairs yield
    identical sample sequences on any platform or degree of parallelism."""

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        return np.random.Generator(
            np.random.Philox(key=[self.seed & (2**64 - 1),
                                  self.stream_id & (2**64 - 1)]))

    def child(self, index: int) -> "RandomSource":
        new_id = (self.stream_id * _MIX + index + 1) & (2**64 - 1)
        return RandomSource(self.seed, new_id)
