"""Correlation histograms from time-tag streams.

The streaming correlator uses a windowed two-pointer sweep (vectorized with
searchsorted) and is integer-exact; ``brute_force_correlate`` enumerates all
pairs and exists purely as an independent validation oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CorrelationHistogram, StreamError, TimeTagStream

_CHUNK_PAIRS = 4_000_000


@dataclass(frozen=True)
class CorrelationRequest:
    channel_a: int
    channel_b: int
    mode: str = "full"
    bin_width: float = 256e-12
    max_delay: float = 1e-6

    def __post_init__(self):
        if self.mode not in ("full", "start_stop"):
            raise ValueError("mode must be 'full' or 'start_stop'")
        if self.bin_width <= 0:
            raise ValueError("bin_width must be positive")
        if self.max_delay < self.bin_width:
            raise ValueError("max_delay must be >= bin_width")

    @property
    def n_side_bins(self) -> int:
        return int(np.floor(self.max_delay / self.bin_width + 1e-9))


def _result_mode(stream_mode: str, same_channel: bool) -> str:
    if stream_mode == "start_stop":
        return "start_stop"
    return "full_autocorrelation" if same_channel else "cross_correlation"


def _bin_indices(diff_ticks: np.ndarray, resolution: float, bin_width: float
                 ) -> np.ndarray:
    # bin k covers [(k-1/2) w, (k+1/2) w): zero delay is a bin center
    return np.floor(diff_ticks * (resolution / bin_width) + 0.5).astype(np.int64)


def correlate(stream: TimeTagStream, req: CorrelationRequest) -> CorrelationHistogram:
    """Histogram of inter-channel delays.

    Positive delay means channel_b clicks after channel_a.  ``full`` mode
    counts every ordered (a, b) pair within the delay window (excluding the
    self-pair in autocorrelation); ``start_stop`` counts only the first b
    click after each a click.
    """
    if not stream.is_sorted:
        raise StreamError("stream must be sorted before correlation")
    ta = stream.channel_ticks(req.channel_a)
    tb = stream.channel_ticks(req.channel_b)
    same = req.channel_a == req.channel_b
    K = req.n_side_bins
    if req.mode == "start_stop":
        centers = np.arange(0, K + 1) * req.bin_width
        counts = np.zeros(K + 1, dtype=np.int64)
        if ta.size and tb.size:
            j = np.searchsorted(tb, ta, side="right")
            ok = j < tb.size
            d = tb[j[ok]] - ta[ok]
            k = _bin_indices(d, stream.resolution, req.bin_width)
            k = k[(k >= 0) & (k <= K)]
            counts += np.bincount(k, minlength=K + 1).astype(np.int64)
        return CorrelationHistogram(req.bin_width, centers, counts, "start_stop")

    centers = np.arange(-K, K + 1) * req.bin_width
    counts = np.zeros(2 * K + 1, dtype=np.int64)
    if ta.size and tb.size:
        window = (K + 0.5) * req.bin_width / stream.resolution + 1.0
        per_a = max(1, int(np.ceil(2.0 * window * tb.size
                                   / max(tb[-1] - tb[0], 1))))
        chunk = max(1, _CHUNK_PAIRS // per_a)
        for start in range(0, ta.size, chunk):
            tac = ta[start:start + chunk]
            lo = np.searchsorted(tb, tac - window, side="left")
            hi = np.searchsorted(tb, tac + window, side="right")
            n = hi - lo
            total = int(n.sum())
            if total == 0:
                continue
            idx = np.repeat(hi - np.cumsum(n), n) + np.arange(total)
            d = tb[idx] - np.repeat(tac, n)
            k = _bin_indices(d, stream.resolution, req.bin_width)
            k = k[np.abs(k) <= K]
            counts += np.bincount(k + K, minlength=2 * K + 1).astype(np.int64)
        if same:
            counts[K] -= ta.size  # remove zero-lag self pairs
    return CorrelationHistogram(req.bin_width, centers, counts,
                                _result_mode(req.mode, same))


def brute_force_correlate(stream: TimeTagStream, req: CorrelationRequest,
                          row_chunk: int = 512) -> CorrelationHistogram:
    """O(n^2) oracle: enumerate every ordered pair and bin its delay."""
    ta = stream.channel_ticks(req.channel_a)
    tb = stream.channel_ticks(req.channel_b)
    same = req.channel_a == req.channel_b
    K = req.n_side_bins
    if req.mode == "start_stop":
        centers = np.arange(0, K + 1) * req.bin_width
        counts = np.zeros(K + 1, dtype=np.int64)
        for t0 in ta:
            later = tb[tb > t0]
            if later.size == 0:
                continue
            k = int(_bin_indices(np.array([later.min() - t0]),
                                 stream.resolution, req.bin_width)[0])
            if 0 <= k <= K:
                counts[k] += 1
        return CorrelationHistogram(req.bin_width, centers, counts, "start_stop")

    centers = np.arange(-K, K + 1) * req.bin_width
    counts = np.zeros(2 * K + 1, dtype=np.int64)
    for start in range(0, ta.size, row_chunk):
        block = ta[start:start + row_chunk]
        d = tb[None, :] - block[:, None]
        k = _bin_indices(d.ravel(), stream.resolution, req.bin_width)
        if same:
            # drop i == j self pairs
            rows = np.arange(block.size)
            mask = np.ones(d.shape, dtype=bool)
            mask[rows, start + rows] = False
            k = k[mask.ravel()]
        k = k[np.abs(k) <= K]
        counts += np.bincount(k + K, minlength=2 * K + 1).astype(np.int64)
    return CorrelationHistogram(req.bin_width, centers, counts,
                                _result_mode(req.mode, same))


def merge_histograms(a: CorrelationHistogram, b: CorrelationHistogram
                     ) -> CorrelationHistogram:
    """Elementwise sum of two partial histograms over identical bins."""
    if a.bin_width != b.bin_width or a.mode != b.mode \
            or not np.array_equal(a.centers, b.centers):
        raise ValueError("histograms have incompatible binning")
    return CorrelationHistogram(a.bin_width, a.centers, a.counts + b.counts, a.mode)


def normalize_cw(h: CorrelationHistogram, norm_window_start: float = 500e-9
                 ) -> CorrelationHistogram:
    """Normalize to the mean coincidence rate at long delays.

    The normalization constant is the mean of all bins with
    |delay| > norm_window_start; the per-bin uncertainty is the standard
    deviation of those plateau bins.
    """
    if h.centers.min() > -norm_window_start or h.centers.max() < norm_window_start:
        raise ValueError("histogram does not extend beyond the normalization window")
    plateau = h.counts[np.abs(h.centers) > norm_window_start]
    if plateau.size < 10:
        raise ValueError(f"insufficient plateau bins ({plateau.size} < 10)")
    norm = float(plateau.mean())
    if norm <= 0:
        raise ValueError("plateau mean must be positive")
    sigma = np.full(h.counts.shape, float(plateau.std(ddof=0)))
    return CorrelationHistogram(h.bin_width, h.centers, h.counts, h.mode,
                                normalization=norm, sigma=sigma)


def pulsed_g2_zero(h: CorrelationHistogram, rep_period: float
                   ) -> tuple[float, float]:
    """g2(0) of a pulsed histogram from peak areas.

    The center-peak area (window of one repetition period around zero) is
    divided by the mean area of the side peaks; the uncertainty is the
    relative standard deviation of the side-peak areas.
    """
    if rep_period <= 0:
        raise ValueError("rep_period must be positive")
    half = 0.5 * rep_period
    edge_lo = h.centers.min() - 0.5 * h.bin_width
    edge_hi = h.centers.max() + 0.5 * h.bin_width
    m = np.rint(h.centers / rep_period).astype(int)
    m_max = int(min(np.floor((edge_hi - half) / rep_period),
                    np.floor((-edge_lo - half) / rep_period)))
    side = []
    for k in range(-m_max, m_max + 1):
        if k == 0:
            continue
        side.append(h.counts[m == k].sum())
    if len(side) < 4:
        raise ValueError(f"fewer than 4 side peaks ({len(side)})")
    side = np.asarray(side, dtype=float)
    center = float(h.counts[m == 0].sum())
    mean_side = side.mean()
    if mean_side <= 0:
        raise ValueError("side-peak areas must be positive")
    g2_0 = center / mean_side
    sigma = float(side.std(ddof=1) / mean_side)
    return g2_0, sigma


def write_histogram_csv(h: CorrelationHistogram, path) -> None:
    """Write as CSV: '# key=value' metadata lines then
    'delay_ns,counts,normalized,sigma' records (empty fields when absent)."""
    with open(path, "w") as fh:
        fh.write(f"# bin_width_ns={h.bin_width * 1e9:.9g}\n")
        fh.write(f"# mode={h.mode}\n")
        if h.normalization is not None:
            fh.write(f"# normalization={h.normalization:.9g}\n")
        fh.write("delay_ns,counts,normalized,sigma\n")
        for i, (c, n) in enumerate(zip(h.centers, h.counts)):
            norm = f"{n / h.normalization:.9g}" if h.normalization else ""
            sig = f"{h.sigma[i]:.9g}" if h.sigma is not None else ""
            fh.write(f"{c * 1e9:.9g},{n},{norm},{sig}\n")


def read_histogram_csv(path) -> CorrelationHistogram:
    meta = {}
    centers, counts, sigmas = [], [], []
    with open(path) as fh:
        header_seen = False
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                meta[key.strip()] = value.strip()
                continue
            if not header_seen:
                if line != "delay_ns,counts,normalized,sigma":
                    raise ValueError(f"bad histogram CSV header {line!r}")
                header_seen = True
                continue
            parts = line.split(",")
            centers.append(float(parts[0]) * 1e-9)
            counts.append(int(parts[1]))
            sigmas.append(float(parts[3]) if len(parts) > 3 and parts[3] else np.nan)
    if "bin_width_ns" not in meta:
        raise ValueError("histogram CSV missing bin_width_ns metadata")
    sigma = np.asarray(sigmas)
    sigma = None if np.all(np.isnan(sigma)) else np.nan_to_num(sigma)
    norm = float(meta["normalization"]) if "normalization" in meta else None
    return CorrelationHistogram(
        float(meta["bin_width_ns"]) * 1e-9, np.asarray(centers),
        np.asarray(counts, dtype=np.int64), meta.get("mode", "full_autocorrelation"),
        normalization=norm, sigma=sigma)
