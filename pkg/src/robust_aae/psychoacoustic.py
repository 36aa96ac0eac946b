"""Simultaneous-masking threshold (MPEG-1 psychoacoustic model 1) and the
differentiable perceptual loss built on it.

The threshold of an utterance is computed once; the loss compares the level
of a perturbation against it on the same absolute (96 dB anchored) scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio import AudioClip, SPL_FLOOR_DB, frame_signal, hann, overlap_add, power_to_db, spl_normalize, stft
from .features import rfft_adjoint

FRAME_LEN = 512
HOP = 256

# Critical band edges in Hz (model 1 table); the last band is cut at Nyquist.
CRITICAL_BAND_EDGES = np.array([
    0, 100, 200, 300, 400, 510, 630, 770, 920, 1080, 1270, 1480, 1720, 2000,
    2320, 2700, 3150, 3700, 4400, 5300, 6400, 7700, 9500, 12000, 15500, 22050,
], dtype=np.float64)

TONAL = "tonal"
NOISE = "noise"


@dataclass(frozen=True)
class Masker:
    bin: int
    spl: float
    kind: str
    bark: float


@dataclass(frozen=True)
class MaskingThresholdGrid:
    thresholds: np.ndarray  # (n_frames, n_bins) dB SPL
    offset_db: float  # SPL normalization of the analysed audio
    n_samples: int
    sample_rate: int = 16000
    frame_len: int = FRAME_LEN
    hop: int = HOP
    maskers: tuple = field(default=(), compare=False, repr=False)

    @property
    def n_frames(self) -> int:
        return self.thresholds.shape[0]


def bark(f):
    """Zwicker's Hz -> Bark mapping."""
    f = np.asarray(f, dtype=np.float64)
    return 13.0 * np.arctan(0.00076 * f) + 3.5 * np.arctan((f / 7500.0) ** 2)


def bin_frequencies(frame_len: int = FRAME_LEN, sample_rate: int = 16000) -> np.ndarray:
    return np.arange(frame_len // 2 + 1) * sample_rate / frame_len


def quiet_threshold(freqs) -> np.ndarray:
    """Absolute threshold of hearing in dB SPL; +inf outside (20 Hz, 18 kHz)."""
    f = np.atleast_1d(np.asarray(freqs, dtype=np.float64))
    out = np.full(f.shape, np.inf)
    ok = (f > 20.0) & (f < 18000.0)
    k = f[ok] / 1000.0
    out[ok] = 3.64 * k ** -0.8 - 6.5 * np.exp(-0.6 * (k - 3.3) ** 2) + 1e-3 * k ** 4
    return out


def _tonal_offsets(k: int) -> np.ndarray | None:
    """Neighbourhood a spectral peak must dominate by 7 dB to count as tonal."""
    if 2 < k < 63:
        return np.array([2])
    if 63 <= k < 127:
        return np.array([2, 3])
    if 127 <= k <= 250:
        return np.arange(2, 7)
    return None


def _power_sum_db(levels) -> float:
    levels = np.asarray(levels, dtype=np.float64)
    if levels.size == 0:
        return -np.inf
    return float(power_to_db(np.sum(10.0 ** (levels / 10.0))))


def find_tonal_maskers(frame: np.ndarray, sample_rate: int = 16000) -> list[Masker]:
    """Local maxima that stand >= 7 dB above their neighbourhood.

    The masker level is the power sum of the peak and its two neighbours.
    """
    frame = np.asarray(frame, dtype=np.float64)
    n_bins = frame.shape[0]
    barks = bark(bin_frequencies(2 * (n_bins - 1), sample_rate))
    found = []
    for k in range(3, n_bins - 1):
        if not (frame[k] > frame[k - 1] and frame[k] >= frame[k + 1]):
            continue
        offs = _tonal_offsets(k)
        if offs is None or k + offs[-1] >= n_bins:
            continue
        if np.all(frame[k] - frame[k + offs] >= 7.0) and np.all(frame[k] - frame[k - offs] >= 7.0):
            spl = _power_sum_db(frame[k - 1:k + 2])
            found.append(Masker(k, spl, TONAL, float(barks[k])))
    return found


def _band_bins(n_bins: int, sample_rate: int) -> list[np.ndarray]:
    freqs = bin_frequencies(2 * (n_bins - 1), sample_rate)
    bands = []
    for lo, hi in zip(CRITICAL_BAND_EDGES[:-1], CRITICAL_BAND_EDGES[1:]):
        idx = np.nonzero((freqs >= lo) & (freqs < hi) & (np.arange(n_bins) > 0))[0]
        if lo < sample_rate / 2 <= hi:
            idx = np.nonzero((freqs >= lo) & (np.arange(n_bins) > 0))[0]
        if idx.size:
            bands.append(idx)
    return bands


def find_noise_maskers(frame: np.ndarray, tonal: list[Masker], sample_rate: int = 16000) -> list[Masker]:
    """One masker per critical band from the energy not claimed by tonal components."""
    frame = np.asarray(frame, dtype=np.float64)
    n_bins = frame.shape[0]
    barks = bark(bin_frequencies(2 * (n_bins - 1), sample_rate))
    excluded = np.zeros(n_bins, dtype=bool)
    for m in tonal:
        offs = _tonal_offsets(m.bin)
        reach = np.concatenate([[0, 1], offs if offs is not None else []]).astype(int)
        for j in reach:
            for idx in (m.bin - j, m.bin + j):
                if 0 <= idx < n_bins:
                    excluded[idx] = True
    maskers = []
    for idx in _band_bins(n_bins, sample_rate):
        keep = idx[~excluded[idx]]
        keep = keep[frame[keep] > SPL_FLOOR_DB]  # floor cells carry no energy
        spl = max(_power_sum_db(frame[keep]), SPL_FLOOR_DB)
        centre = int(np.round(np.exp(np.mean(np.log(idx)))))
        maskers.append(Masker(centre, spl, NOISE, float(barks[centre])))
    return maskers


def decimate_maskers(maskers: list[Masker], quiet: np.ndarray) -> list[Masker]:
    """Drop maskers below the threshold in quiet, then thin out any pair closer than 0.5 Bark."""
    kept = sorted((m for m in maskers if m.spl >= quiet[m.bin]), key=lambda m: (m.bin, m.kind != TONAL))
    changed = True
    while changed:
        changed = False
        for i in range(len(kept) - 1):
            a, b = kept[i], kept[i + 1]
            if b.bark - a.bark < 0.5:
                # louder wins; on a tie the tonal (then lower) masker survives
                loser = b if (a.spl, a.kind == TONAL) >= (b.spl, b.kind == TONAL) else a
                kept.remove(loser)
                changed = True
                break
    return kept


def spreading_function(dz: np.ndarray, level: np.ndarray) -> np.ndarray:
    """Model-1 spreading function in dB; -inf outside [-3, 8) Bark."""
    dz, level = np.broadcast_arrays(np.asarray(dz, float), np.asarray(level, float))
    sf = np.full(dz.shape, -np.inf)
    a = (dz >= -3) & (dz < -1)
    sf[a] = 17.0 * dz[a] - 0.4 * level[a] + 11.0
    b = (dz >= -1) & (dz < 0)
    sf[b] = (0.4 * level[b] + 6.0) * dz[b]
    c = (dz >= 0) & (dz < 1)
    sf[c] = -17.0 * dz[c]
    d = (dz >= 1) & (dz < 8)
    sf[d] = (0.15 * level[d] - 17.0) * dz[d] - 0.15 * level[d]
    return sf


def individual_thresholds(maskers: list[Masker], bin_barks: np.ndarray) -> np.ndarray:
    """Per-masker threshold curves, shape ``(len(maskers), n_bins)``."""
    if not maskers:
        return np.empty((0, bin_barks.shape[0]))
    z = np.array([m.bark for m in maskers])[:, None]
    p = np.array([m.spl for m in maskers])[:, None]
    tonal = np.array([m.kind == TONAL for m in maskers])[:, None]
    index = np.where(tonal, -6.025 - 0.275 * z, -2.025 - 0.175 * z)
    return p + index + spreading_function(bin_barks[None, :] - z, np.broadcast_to(p, (p.shape[0], bin_barks.shape[0])))


def global_threshold(maskers: list[Masker], quiet: np.ndarray, bin_barks: np.ndarray) -> np.ndarray:
    """Power sum of the quiet threshold and every individual masking curve."""
    if not maskers:
        return np.array(quiet, dtype=np.float64)
    curves = individual_thresholds(maskers, bin_barks)
    with np.errstate(over="ignore"):
        total = 10.0 ** (quiet / 10.0) + np.sum(10.0 ** (curves / 10.0), axis=0)
    return power_to_db(total)


def frame_maskers(frame: np.ndarray, quiet: np.ndarray, sample_rate: int = 16000) -> list[Masker]:
    tonal = find_tonal_maskers(frame, sample_rate)
    noise = find_noise_maskers(frame, tonal, sample_rate)
    return decimate_maskers(tonal + noise, quiet)


def compute_threshold_grid(clip: AudioClip, frame_len: int = FRAME_LEN, hop: int = HOP) -> MaskingThresholdGrid:
    """Global masking threshold of ``clip`` for every analysis frame."""
    spl = spl_normalize(stft(clip, frame_len, hop))
    freqs = bin_frequencies(frame_len, clip.sample_rate)
    quiet = quiet_threshold(freqs)
    barks = bark(freqs)
    rows, per_frame = [], []
    for frame in spl.values:
        maskers = frame_maskers(frame, quiet, clip.sample_rate)
        per_frame.append(tuple(maskers))
        rows.append(global_threshold(maskers, quiet, barks))
    thresholds = np.array(rows)
    thresholds.setflags(write=False)
    return MaskingThresholdGrid(thresholds, spl.offset_db, len(clip), clip.sample_rate,
                                frame_len, hop, tuple(per_frame))


def loss_mask(grid: MaskingThresholdGrid, max_fraction: float = 0.95) -> np.ndarray:
    """Bins that take part in the loss (everything up to 95 % of Nyquist)."""
    freqs = bin_frequencies(grid.frame_len, grid.sample_rate)
    return freqs <= max_fraction * grid.sample_rate / 2


def perturbation_spl(samples: np.ndarray, grid: MaskingThresholdGrid):
    """SPL of ``samples`` on the grid's absolute scale; returns (spl, spectrum)."""
    if samples.shape[-1] != grid.n_samples:
        raise ValueError(f"perturbation length {samples.shape[-1]} does not match the "
                         f"threshold grid ({grid.n_samples} samples)")
    frames = frame_signal(samples, grid.frame_len, grid.hop)
    spec = np.fft.rfft(frames * hann(grid.frame_len), axis=-1)
    power = spec.real ** 2 + spec.imag ** 2
    return power_to_db(power) + grid.offset_db, spec


def perceptual_loss_and_grad(delta, grid: MaskingThresholdGrid, mode: str = "excess"):
    """Mean over (frame, bin) of the level above the masking threshold, and its gradient.

    ``mode="excess"`` averages ``max(0, SPL - threshold)``; ``mode="level"``
    averages the SPL of the cells that exceed the threshold (zero elsewhere).
    """
    samples = np.asarray(getattr(delta, "samples", delta), dtype=np.float64)
    spl, spec = perturbation_spl(samples, grid)
    cols = loss_mask(grid)
    thr = grid.thresholds[:, cols]
    level = spl[:, cols]
    above = level > thr
    n_cells = level.size
    if mode == "excess":
        value = np.sum(np.where(above, level - thr, 0.0)) / n_cells
    elif mode == "level":
        value = np.sum(np.where(above, level, 0.0)) / n_cells
    else:
        raise ValueError(f"unknown perceptual loss mode {mode!r}")
    dspl = np.zeros_like(spl)
    dspl[:, cols] = above / n_cells
    power = spec.real ** 2 + spec.imag ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        dpower = np.where(dspl > 0, dspl * (10.0 / np.log(10.0)) / power, 0.0)
    dframes = rfft_adjoint(2.0 * spec * dpower, grid.frame_len) * hann(grid.frame_len)
    grad = overlap_add(dframes, grid.hop, samples.shape[-1])
    return float(value), grad


def perceptual_loss(delta, grid: MaskingThresholdGrid, mode: str = "excess") -> float:
    return perceptual_loss_and_grad(delta, grid, mode)[0]


def masker_rows(grid: MaskingThresholdGrid) -> list[list]:
    """Flat (frame, bin, hz, bark, kind, spl) rows for CSV export."""
    freqs = bin_frequencies(grid.frame_len, grid.sample_rate)
    rows = []
    for t, maskers in enumerate(grid.maskers):
        for m in maskers:
            rows.append([t, m.bin, float(freqs[m.bin]), round(m.bark, 6), m.kind, round(m.spl, 6)])
    return rows
