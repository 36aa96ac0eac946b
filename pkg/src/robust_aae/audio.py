"""Signal-processing primitives shared by every other module.

Everything here is a pure function of its inputs. Arrays are float64 unless
noted; batched helpers accept any leading dimensions.
"""

from __future__ import annotations

import csv
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import fft as sp_fft

SPL_ANCHOR_DB = 96.0
SPL_FLOOR_DB = -200.0
WAV_SCALE = 32768.0


class InputTooShortError(ValueError):
    """Raised when a clip does not contain a single analysis frame."""


class InfiniteSNRError(ValueError):
    """Raised by :func:`snr_db` when the noise is identically zero."""


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("AudioClip holds mono audio only")
        if not np.all(np.isfinite(samples)):
            raise ValueError("AudioClip samples must be finite")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def clamped(self) -> "AudioClip":
        return AudioClip(np.clip(self.samples, -1.0, 1.0), self.sample_rate)

    def with_samples(self, samples) -> "AudioClip":
        return AudioClip(samples, self.sample_rate)


@dataclass(frozen=True)
class Spectrogram:
    """Complex STFT frames, shape ``(n_frames, frame_len // 2 + 1)``."""

    frames: np.ndarray
    frame_len: int
    hop: int
    window: str = "hann"

    @property
    def power(self) -> np.ndarray:
        return self.frames.real ** 2 + self.frames.imag ** 2

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class SplGrid:
    """Normalized sound pressure levels in dB.

    ``offset_db`` is the constant that was added to the raw log-power values;
    reusing it for another signal keeps both on the same absolute scale.
    """

    values: np.ndarray
    offset_db: float


def _require_same_rate(a: AudioClip, b: AudioClip):
    if a.sample_rate != b.sample_rate:
        raise ValueError(f"sample rates differ: {a.sample_rate} vs {b.sample_rate}")


def hann(n: int) -> np.ndarray:
    """Periodic Hann window (the DFT-even variant used for STFT analysis)."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_count(n_samples: int, frame_len: int, hop: int) -> int:
    if n_samples < frame_len:
        return 0
    return (n_samples - frame_len) // hop + 1


def frame_signal(x: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    """Strided view of ``x[..., L]`` as ``[..., n_frames, frame_len]`` (no padding)."""
    n = frame_count(x.shape[-1], frame_len, hop)
    if n == 0:
        raise InputTooShortError(
            f"input too short: {x.shape[-1]} samples < frame length {frame_len}")
    windows = np.lib.stride_tricks.sliding_window_view(x, frame_len, axis=-1)
    return windows[..., ::hop, :][..., :n, :]


def overlap_add(frames: np.ndarray, hop: int, n_samples: int) -> np.ndarray:
    """Adjoint of :func:`frame_signal`: sums frame values back onto samples."""
    *lead, n_frames, frame_len = frames.shape
    total = max(n_samples, n_frames * hop + frame_len)
    out = np.zeros((*lead, total), dtype=frames.dtype)
    # frame_len / hop is small (2-3), so looping over hop-sized chunks is cheap
    for start in range(0, frame_len, hop):
        stop = min(start + hop, frame_len)
        # frame t covers samples [t*hop + start, t*hop + stop)
        block = out[..., start:start + n_frames * hop].reshape(*lead, n_frames, hop)
        block[..., :stop - start] += frames[..., :, start:stop]
    return out[..., :n_samples]


def _check_frame_params(frame_len: int, hop: int):
    if frame_len <= 0 or frame_len & (frame_len - 1):
        raise ValueError(f"frame_len must be a power of two, got {frame_len}")
    if not 0 < hop <= frame_len:
        raise ValueError(f"hop must satisfy 0 < hop <= frame_len, got {hop}")


def stft(clip: AudioClip, frame_len: int = 512, hop: int = 256) -> Spectrogram:
    """Hann-windowed short-time Fourier transform without padding."""
    _check_frame_params(frame_len, hop)
    frames = frame_signal(clip.samples, frame_len, hop)
    spec = np.fft.rfft(frames * hann(frame_len), axis=-1)
    return Spectrogram(spec, frame_len, hop, "hann")


def istft(spec: Spectrogram, n_samples: int | None = None) -> np.ndarray:
    """Least-squares inverse of :func:`stft` (synthesis windowing, squared-window normalization).

    Samples not covered by any frame, or where the window sum vanishes, are zero.
    """
    win = hann(spec.frame_len)
    if n_samples is None:
        n_samples = (spec.n_frames - 1) * spec.hop + spec.frame_len
    frames = np.fft.irfft(spec.frames, n=spec.frame_len, axis=-1) * win
    num = overlap_add(frames, spec.hop, n_samples)
    den = overlap_add(np.broadcast_to(win ** 2, frames.shape), spec.hop, n_samples)
    out = np.zeros(n_samples)
    ok = den > 1e-8
    out[ok] = num[ok] / den[ok]
    return out


def power_to_db(power: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(power)


def spl_normalize(spec: Spectrogram) -> SplGrid:
    """Log-power grid with its global maximum mapped to 96 dB SPL.

    Zero-power cells (and an all-zero input) sit at the -200 dB floor.
    """
    power = spec.power
    if power.size == 0:
        raise ValueError("empty spectrogram")
    db = power_to_db(power)
    peak = db.max()
    offset = SPL_ANCHOR_DB - peak if np.isfinite(peak) else 0.0
    values = np.maximum(db + offset, SPL_FLOOR_DB)
    return SplGrid(values, float(offset))


# -- convolution --------------------------------------------------------------

def _fft_len(n: int) -> int:
    return sp_fft.next_fast_len(max(n, 1), real=True)


def convolve_truncated(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Linear convolution of ``x[..., L]`` with ``h[..., K]`` cut to length ``L``.

    ``h`` may be 1-D (shared) or batched like ``x``.
    """
    L = x.shape[-1]
    K = h.shape[-1]
    if K == 0:
        raise ValueError("empty impulse response")
    n = _fft_len(L + K - 1)
    y = sp_fft.irfft(sp_fft.rfft(x, n, axis=-1) * sp_fft.rfft(h, n, axis=-1), n, axis=-1)
    return y[..., :L]


def convolve_truncated_adjoint(g: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`convolve_truncated` with respect to ``x``.

    ``dx[n] = sum_m g[n + m] h[m]`` (cross-correlation restricted to the output window).
    """
    L = g.shape[-1]
    K = h.shape[-1]
    n = _fft_len(L + K - 1)
    # correlate by conjugating the kernel spectrum; g is zero-padded so no wrap-around
    spec = sp_fft.rfft(g, n, axis=-1) * np.conj(sp_fft.rfft(h, n, axis=-1))
    return sp_fft.irfft(spec, n, axis=-1)[..., :L]


def convolve(clip: AudioClip, rir) -> AudioClip:
    """Convolve ``clip`` with an impulse response, keeping the original length."""
    taps = np.asarray(getattr(rir, "taps", rir), dtype=np.float64)
    rate = getattr(rir, "sample_rate", clip.sample_rate)
    if rate != clip.sample_rate:
        raise ValueError(f"sample rates differ: {clip.sample_rate} vs {rate}")
    if taps.size == 0:
        raise ValueError("empty impulse response")
    return clip.with_samples(convolve_truncated(clip.samples, taps))


# -- metrics ------------------------------------------------------------------

def rms(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.sqrt(np.mean(x ** 2)))


def snr_db(signal: AudioClip, noise: AudioClip) -> float:
    """``20 log10(rms(signal) / rms(noise))``."""
    _require_same_rate(signal, noise)
    if len(signal) != len(noise):
        raise ValueError("signal and noise must have equal length")
    n = rms(noise.samples)
    if n == 0.0:
        raise InfiniteSNRError("infinite SNR: noise is identically zero")
    s = rms(signal.samples)
    if s == 0.0:
        return float("-inf")
    return 20.0 * np.log10(s / n)


# -- I/O ----------------------------------------------------------------------

def read_wav(path) -> AudioClip:
    """Read 16-bit PCM mono WAV into [-1, 1] floats."""
    with wave.open(str(path), "rb") as fh:
        if fh.getsampwidth() != 2:
            raise ValueError(f"{path}: only 16-bit PCM is supported")
        if fh.getnchannels() != 1:
            raise ValueError(f"{path}: only mono audio is supported")
        rate = fh.getframerate()
        raw = fh.readframes(fh.getnframes())
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / WAV_SCALE
    return AudioClip(data, rate)


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    ints = np.round(np.asarray(samples, dtype=np.float64) * WAV_SCALE)
    return np.clip(ints, -32768, 32767).astype("<i2")


def write_wav(path, clip: AudioClip):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(clip.sample_rate)
        fh.writeframes(to_pcm16(clip.samples).tobytes())


def write_grid_csv(path, grid: np.ndarray, header: list[str] | None = None, fmt: str = "%.6f"):
    """Dump a 2-D array (frames x columns) as CSV for inspection."""
    grid = np.atleast_2d(np.asarray(grid))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if header is not None:
            writer.writerow(header)
        for row in grid:
            writer.writerow([fmt % v for v in row])
