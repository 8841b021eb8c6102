"""Windowing and FFT-based features.

Two features are produced per window of ``N`` channels by ``D_L`` samples:

* feature I: half-spectrum FFT magnitudes of every channel, concatenated
  channel-major and capped at 10 (length ``N * D_L / 2``);
* feature II: for every channel, the normalized frequencies where the
  cumulative periodogram energy crosses 25 %, 50 % and 75 % (length ``3 N``).

Batch helpers (``*_batch``) take stacked windows of shape ``(W, N, D_L)`` and
are what the engine uses; the single-window functions wrap them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSpectrum, InsufficientData, InvalidData, InvalidParameter

FEATURE_CAP = 10.0
QUARTILES = (0.25, 0.50, 0.75)


@dataclass(frozen=True)
class RawStream:
    samples: np.ndarray  # (N, M)
    sample_rate_hz: float

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim == 1:
            samples = samples[None, :]
        if samples.ndim != 2 or samples.shape[0] < 1:
            raise InvalidParameter(f"samples must be an N x M matrix, got shape {samples.shape}")
        if not self.sample_rate_hz > 0:
            raise InvalidParameter("sample_rate_hz must be positive")
        object.__setattr__(self, "samples", samples)

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def length(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class TimeSeriesWindow:
    data: np.ndarray  # (N, D_L)
    window_index: int

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def length(self) -> int:
        return self.data.shape[1]


def _check_window_length(d_l: int) -> None:
    if d_l <= 0 or d_l % 2 or d_l < 4:
        raise InvalidParameter(f"window length must be even and >= 4, got {d_l}")


def window_array(stream: RawStream, d_l: int) -> np.ndarray:
    """Non-overlapping windows as an array of shape (W, N, d_l); the remainder is dropped."""
    _check_window_length(d_l)
    n, m = stream.samples.shape
    if m < d_l:
        raise InsufficientData(f"stream has {m} samples per channel, need at least {d_l}")
    count = m // d_l
    head = stream.samples[:, : count * d_l]
    return head.reshape(n, count, d_l).transpose(1, 0, 2).copy()


def make_windows(stream: RawStream, d_l: int) -> list[TimeSeriesWindow]:
    return [TimeSeriesWindow(w, i) for i, w in enumerate(window_array(stream, d_l))]


def _as_batch(windows) -> np.ndarray:
    if isinstance(windows, TimeSeriesWindow):
        windows = windows.data[None]
    elif isinstance(windows, (list, tuple)) and windows and isinstance(windows[0], TimeSeriesWindow):
        windows = np.stack([w.data for w in windows])
    arr = np.asarray(windows, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise InvalidParameter(f"expected windows of shape (W, N, D_L), got {arr.shape}")
    _check_window_length(arr.shape[-1])
    if not np.all(np.isfinite(arr)):
        raise InvalidData("window contains non-finite samples")
    return arr


def fft_half_magnitudes_batch(windows) -> np.ndarray:
    """|DFT| bins 0 .. D_L/2 - 1 of every channel; shape (W, N, D_L/2)."""
    arr = _as_batch(windows)
    half = arr.shape[-1] // 2
    return np.abs(np.fft.rfft(arr, axis=-1)[..., :half])


def fft_half_magnitudes(window: TimeSeriesWindow | np.ndarray) -> np.ndarray:
    return fft_half_magnitudes_batch(window)[0]


def cap_magnitudes(magnitudes: np.ndarray, mode: str = "clip") -> np.ndarray:
    """Bound magnitudes to [0, 10].

    ``clip`` caps each entry independently; ``rescale`` divides every channel
    whose peak exceeds 10 so that the peak lands on 10.
    """
    if mode == "clip":
        return np.clip(magnitudes, 0.0, FEATURE_CAP)
    if mode == "rescale":
        peak = magnitudes.max(axis=-1, keepdims=True)
        scale = np.where(peak > FEATURE_CAP, FEATURE_CAP / np.where(peak > 0, peak, 1.0), 1.0)
        return magnitudes * scale
    raise InvalidParameter(f"unknown cap mode {mode!r}")


def feature_i_batch(windows, cap: str = "clip") -> np.ndarray:
    mags = fft_half_magnitudes_batch(windows)
    w = mags.shape[0]
    return cap_magnitudes(mags, cap).reshape(w, -1)


def extract_feature_i(window: TimeSeriesWindow | np.ndarray, cap: str = "clip") -> np.ndarray:
    return feature_i_batch(window, cap)[0]


def periodogram(channel_magnitudes: np.ndarray) -> np.ndarray:
    """Normalized power spectrum: squared magnitudes divided by their sum (last axis)."""
    power = np.square(np.asarray(channel_magnitudes, dtype=np.float64))
    total = power.sum(axis=-1, keepdims=True)
    if np.any(total <= 0) or not np.all(np.isfinite(total)):
        raise DegenerateSpectrum("channel has zero spectral energy")
    return power / total


def energy_quartiles(magnitudes: np.ndarray) -> np.ndarray:
    """Quartile crossing frequencies of the cumulative periodogram.

    Bin ``i`` is taken to span ``[i, i + 1)`` in bin units with its energy spread
    evenly, so the cumulative curve is piecewise linear through
    ``(0, 0), (1, c_0), ..., (K, 1)``.  Crossings are returned as fractions of
    ``K = D_L / 2`` (i.e. of Nyquist).  Works over any leading axes; the last axis
    is frequency and the output's last axis has length 3.
    """
    psd = periodogram(magnitudes)
    k = psd.shape[-1]
    cum = np.cumsum(psd, axis=-1)
    out = np.empty(psd.shape[:-1] + (len(QUARTILES),))
    for j, q in enumerate(QUARTILES):
        idx = np.minimum(np.sum(cum < q, axis=-1), k - 1)
        hi = np.take_along_axis(cum, idx[..., None], axis=-1)[..., 0]
        prev_idx = np.maximum(idx - 1, 0)
        lo = np.where(idx > 0, np.take_along_axis(cum, prev_idx[..., None], axis=-1)[..., 0], 0.0)
        step = hi - lo
        frac = np.where(step > 0, (q - lo) / np.where(step > 0, step, 1.0), 0.0)
        out[..., j] = (idx + np.clip(frac, 0.0, 1.0)) / k
    return out


def feature_ii_batch(windows) -> np.ndarray:
    mags = fft_half_magnitudes_batch(windows)
    return energy_quartiles(mags).reshape(mags.shape[0], -1)


def extract_feature_ii(window: TimeSeriesWindow | np.ndarray) -> np.ndarray:
    return feature_ii_batch(window)[0]


def feature_ii_from_feature_i(f1: np.ndarray, n: int, d_l: int) -> np.ndarray:
    """Rebuild feature II from (possibly generated) feature I vectors.

    ``f1`` may be one vector or a batch ``(B, n * d_l / 2)``.
    """
    f1 = np.asarray(f1, dtype=np.float64)
    single = f1.ndim == 1
    batch = f1[None] if single else f1
    _check_window_length(d_l)
    if batch.shape[-1] != n * d_l // 2:
        raise InvalidParameter(f"feature I length {batch.shape[-1]} != {n} * {d_l} / 2")
    out = energy_quartiles(batch.reshape(batch.shape[0], n, d_l // 2)).reshape(batch.shape[0], -1)
    return out[0] if single else out
