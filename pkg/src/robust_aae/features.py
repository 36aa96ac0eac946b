"""MFCC front end with an explicit reverse-mode pass.

The forward returns the features together with a cache; ``mfcc_backward``
maps a feature-space gradient back to waveform samples.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .audio import AudioClip, InputTooShortError, frame_count, frame_signal, hann, overlap_add


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = 16000
    frame_len: int = 400  # 25 ms
    hop: int = 160  # 10 ms
    n_fft: int = 512
    n_mels: int = 40
    n_ceps: int = 20
    fmin: float = 0.0
    fmax: float | None = None
    log_floor: float = 1e-10

    def n_frames(self, n_samples: int) -> int:
        return frame_count(n_samples, self.frame_len, self.hop)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


@lru_cache(maxsize=16)
def mel_filterbank(cfg: FeatureConfig) -> np.ndarray:
    """Triangular HTK-style filters, shape ``(n_mels, n_fft // 2 + 1)``."""
    fmax = cfg.fmax if cfg.fmax is not None else cfg.sample_rate / 2
    n_bins = cfg.n_fft // 2 + 1
    freqs = np.arange(n_bins) * cfg.sample_rate / cfg.n_fft
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(fmax), cfg.n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs[None, :] - lo) / (mid - lo)
    down = (hi - freqs[None, :]) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(up, down))
    fb.setflags(write=False)
    return fb


@lru_cache(maxsize=16)
def dct_matrix(n_ceps: int, n_mels: int) -> np.ndarray:
    """Orthonormal DCT-II rows, shape ``(n_ceps, n_mels)``."""
    k = np.arange(n_ceps)[:, None]
    n = np.arange(n_mels)[None, :]
    d = np.cos(np.pi * k * (2 * n + 1) / (2 * n_mels)) * np.sqrt(2.0 / n_mels)
    d[0] /= np.sqrt(2.0)
    d.setflags(write=False)
    return d


def mfcc_forward(samples: np.ndarray, cfg: FeatureConfig = FeatureConfig()):
    """MFCCs of ``samples[..., L]`` -> ``(features[..., T, n_ceps], cache)``."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.shape[-1] < cfg.frame_len:
        raise InputTooShortError(
            f"input too short: {samples.shape[-1]} samples < frame length {cfg.frame_len}")
    win = hann(cfg.frame_len)
    frames = frame_signal(samples, cfg.frame_len, cfg.hop)
    spec = np.fft.rfft(frames * win, cfg.n_fft, axis=-1)
    power = spec.real ** 2 + spec.imag ** 2
    fb = mel_filterbank(cfg)
    mel = power @ fb.T + cfg.log_floor
    feats = np.log(mel) @ dct_matrix(cfg.n_ceps, cfg.n_mels).T
    cache = (spec, mel, samples.shape[-1], cfg)
    return feats, cache


def mfcc_backward(dfeats: np.ndarray, cache) -> np.ndarray:
    spec, mel, n_samples, cfg = cache
    dlogmel = dfeats @ dct_matrix(cfg.n_ceps, cfg.n_mels)
    dpower = (dlogmel / mel) @ mel_filterbank(cfg)
    dspec = 2.0 * spec * dpower
    dframes = rfft_adjoint(dspec, cfg.n_fft)[..., :cfg.frame_len] * hann(cfg.frame_len)
    return overlap_add(dframes, cfg.hop, n_samples)


def rfft_adjoint(g: np.ndarray, n: int) -> np.ndarray:
    """Adjoint of ``np.fft.rfft(x, n)`` for real ``x``.

    ``g`` holds dL/dRe + i dL/dIm per bin; the result is dL/dx (length ``n``).
    """
    g = g.copy()
    g[..., 1:n // 2] *= 0.5  # interior bins appear twice in irfft's Hermitian sum
    if n % 2:
        g[..., n // 2] *= 0.5
    return np.fft.irfft(g, n, axis=-1) * n


def mfcc(clip: AudioClip, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    if clip.sample_rate != cfg.sample_rate:
        raise ValueError(f"expected {cfg.sample_rate} Hz audio, got {clip.sample_rate}")
    return mfcc_forward(clip.samples, cfg)[0]
