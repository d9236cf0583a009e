"""Objective evaluation: log-mel extraction, DTW alignment, MCD.

The DTW dynamic program is the one hand-written hot loop in this package; a
compiled kernel is used when available and a pure-Python implementation is
selected as a fallback at import time (see benchmarks/bench_dtw.py for the
comparison).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.fft import dct

try:
    from ._dtw_core import dtw_path as _dtw_path

    HAVE_COMPILED_DTW = True
except ImportError:  # pragma: no cover - depends on the build environment
    from ._dtw_py import dtw_path as _dtw_path

    HAVE_COMPILED_DTW = False

from ._dtw_py import dtw_path as dtw_path_python

MCD_CONST = 10.0 * math.sqrt(2.0) / math.log(10.0)
MCD_NUM_COEFFS = 13  # cepstral coefficients 1..13, c0 excluded


@dataclass(frozen=True)
class MelParams:
    sample_rate: int = 24000
    n_mels: int = 80
    win_length: int = 1024
    hop_length: int = 256
    fmin: float = 0.0
    fmax: Optional[float] = None  # None -> Nyquist
    floor: float = 1e-5


def mel_frame_count(num_samples: int, params: MelParams) -> int:
    """Frames start every hop_length samples from 0 while inside the signal."""
    return -(-num_samples // params.hop_length)


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(params: MelParams) -> np.ndarray:
    """Triangular filters on the HTK mel scale, peak-normalized to 1."""
    n_fft = params.win_length
    fmax = params.fmax if params.fmax is not None else params.sample_rate / 2.0
    mel_points = np.linspace(
        _hz_to_mel(params.fmin), _hz_to_mel(fmax), params.n_mels + 2
    )
    hz_points = _mel_to_hz(mel_points)
    bins = np.fft.rfftfreq(n_fft, d=1.0 / params.sample_rate)
    fb = np.zeros((params.n_mels, bins.size))
    for m in range(params.n_mels):
        left, center, right = hz_points[m], hz_points[m + 1], hz_points[m + 2]
        up = (bins - left) / max(center - left, 1e-12)
        down = (right - bins) / max(right - center, 1e-12)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb


def mel_spectrogram(waveform, params: MelParams = MelParams()) -> np.ndarray:
    """Log-mel power spectrogram, shape (frames, n_mels), floored at params.floor."""
    wave = np.asarray(waveform, dtype=np.float64)
    if wave.ndim != 1 or wave.size == 0:
        raise ValueError("expected a non-empty mono waveform")
    F = mel_frame_count(wave.size, params)
    padded = np.zeros((F - 1) * params.hop_length + params.win_length)
    padded[: wave.size] = wave
    idx = (
        np.arange(params.win_length)[None, :]
        + params.hop_length * np.arange(F)[:, None]
    )
    frames = padded[idx] * np.hanning(params.win_length)[None, :]
    power = np.abs(np.fft.rfft(frames, axis=1)) ** 2
    mel_power = power @ mel_filterbank(params).T
    return np.log(np.maximum(mel_power, params.floor))


def dtw(cost):
    """Minimum-cost monotone alignment through a non-negative cost matrix.

    Returns (path, total_cost) where path is an (L, 2) index array from (0,0)
    to (n-1, m-1) using steps (1,1), (1,0), (0,1).
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.size == 0:
        raise ValueError("cost matrix must be 2-D and non-empty")
    if not np.isfinite(cost).all() or cost.min() < 0:
        raise ValueError("cost entries must be finite and non-negative")
    return _dtw_path(cost)


def mel_cepstra(log_mel: np.ndarray) -> np.ndarray:
    """Cepstral coefficients 1..13 of each log-mel frame (orthonormal DCT-II)."""
    log_mel = np.asarray(log_mel, dtype=np.float64)
    if log_mel.ndim != 2:
        raise ValueError("expected a (frames, mels) matrix")
    if log_mel.shape[1] < MCD_NUM_COEFFS + 1:
        raise ValueError(
            f"need at least {MCD_NUM_COEFFS + 1} mel bins, got {log_mel.shape[1]}"
        )
    return dct(log_mel, type=2, norm="ortho", axis=1)[:, 1 : MCD_NUM_COEFFS + 1]


def mcd(mel_a, mel_b) -> float:
    """Mel-cepstral distortion in dB along the DTW-optimal frame alignment."""
    mel_a = np.asarray(mel_a, dtype=np.float64)
    mel_b = np.asarray(mel_b, dtype=np.float64)
    if mel_a.ndim != 2 or mel_b.ndim != 2:
        raise ValueError("expected (frames, mels) matrices")
    if mel_a.shape[1] != mel_b.shape[1]:
        raise ValueError(
            f"mel bin mismatch: {mel_a.shape[1]} vs {mel_b.shape[1]}"
        )
    ca = mel_cepstra(mel_a)
    cb = mel_cepstra(mel_b)
    diff = ca[:, None, :] - cb[None, :, :]
    dist = MCD_CONST * np.sqrt((diff**2).sum(axis=2))
    path, total = dtw(dist)
    return float(total / path.shape[0])
