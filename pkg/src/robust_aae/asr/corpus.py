"""Desk corpus: a directory loader and a bundled synthetic speech-like fallback.

The synthesizer renders each letter as a short voiced segment through two
letter-specific formant resonators, mixed with band-limited noise for
consonants. Speaker traits (pitch, vocal-tract scale, rate, level) are drawn
per utterance, so the recognizer has to learn letter identity rather than a
single waveform.
"""

from __future__ import annotations

import csv
import string
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import butter, lfilter, sosfilt

from ..audio import AudioClip, read_wav
from .vocab import normalize_text

SAMPLE_RATE = 16000
MAX_SECONDS = 2.0

WORDS = (
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
    "please", "open", "close", "the", "door", "window", "turn", "on", "off", "light",
    "call", "home", "stop", "go", "and",
)

# two formant grids give every letter its own (F1, F2) pair
_F1 = (300.0, 450.0, 600.0, 750.0)
_F2 = (1000.0, 1300.0, 1600.0, 1900.0, 2200.0, 2500.0, 2800.0)
_VOWELS = set("aeiou")


@dataclass(frozen=True)
class LetterVoice:
    f1: float
    f2: float
    noise_hz: float | None


LETTERS = {
    ch: LetterVoice(_F1[i % 4], _F2[i // 4], None if ch in _VOWELS else 2000.0 + 650.0 * (i % 8))
    for i, ch in enumerate(string.ascii_lowercase)
}


@dataclass(frozen=True)
class Utterance:
    clip: AudioClip
    text: str
    uid: str = ""


def _resonator(freq, bandwidth, fs):
    r = np.exp(-np.pi * bandwidth / fs)
    theta = 2 * np.pi * freq / fs
    a = [1.0, -2 * r * np.cos(theta), r * r]
    return [1.0 - r], a


def _envelope(n, ramp):
    env = np.ones(n)
    ramp = min(ramp, n // 2)
    if ramp > 0:
        rise = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        env[:ramp] = rise
        env[n - ramp:] = rise[::-1]
    return env


def _letter(ch, n, f0, scale, phase, rng, fs):
    voice = LETTERS[ch]
    t = np.arange(n)
    # glottal source: pulse train with slight per-letter pitch drift
    f0_track = f0 * (1.0 + rng.uniform(-0.04, 0.04) * t / n)
    ph = phase + np.cumsum(f0_track) / fs
    source = (ph % 1.0) - 0.5
    source = np.diff(np.concatenate([[source[0]], source]))
    out = source
    for freq, bw in ((voice.f1, 90.0), (voice.f2, 120.0), (2900.0, 180.0)):
        jitter = rng.uniform(0.97, 1.03)
        b, a = _resonator(freq * scale * jitter, bw, fs)
        out = lfilter(b, a, out)
    out /= np.max(np.abs(out)) + 1e-12
    if voice.noise_hz is not None:
        centre = voice.noise_hz * scale
        sos = butter(2, [centre * 0.85, min(centre * 1.15, fs / 2 - 100)], btype="band", fs=fs, output="sos")
        noise = sosfilt(sos, rng.standard_normal(n))
        noise /= np.max(np.abs(noise)) + 1e-12
        out = 0.6 * out + 0.5 * noise
    return out * _envelope(n, int(0.012 * fs)), ph[-1] % 1.0


def synthesize(text: str, rng: np.random.Generator, fs: int = SAMPLE_RATE) -> np.ndarray:
    """Render ``text`` with a freshly drawn speaker."""
    text = normalize_text(text)
    f0 = rng.uniform(90.0, 220.0)
    scale = rng.uniform(0.93, 1.07)
    rate = rng.uniform(0.9, 1.1)
    pieces = [np.zeros(int(rng.uniform(0.04, 0.12) * fs))]
    phase = 0.0
    for wi, word in enumerate(text.split()):
        if wi:
            pieces.append(np.zeros(int(rng.uniform(0.07, 0.12) * fs)))
        for li, ch in enumerate(word):
            if li:
                pieces.append(np.zeros(int(rng.uniform(0.004, 0.012) * fs)))
            n = int(rng.uniform(0.055, 0.08) * rate * fs)
            seg, phase = _letter(ch, n, f0, scale, phase, rng, fs)
            pieces.append(seg * rng.uniform(0.7, 1.0))
    pieces.append(np.zeros(int(rng.uniform(0.04, 0.12) * fs)))
    x = np.concatenate(pieces)
    x += 10 ** (-55 / 20) * rng.standard_normal(x.size)
    return x * (rng.uniform(0.3, 0.7) / np.max(np.abs(x)))


def random_text(rng: np.random.Generator, min_words: int = 1, max_words: int = 4) -> str:
    k = int(rng.integers(min_words, max_words + 1))
    return " ".join(WORDS[i] for i in rng.integers(len(WORDS), size=k))


def synthetic_corpus(n: int, seed: int, max_seconds: float = MAX_SECONDS,
                     min_words: int = 1, max_words: int = 4) -> list[Utterance]:
    """``n`` utterances of 1-4 random words, each no longer than ``max_seconds``."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        text = random_text(rng, min_words, max_words)
        x = synthesize(text, rng)
        if x.size <= max_seconds * SAMPLE_RATE:
            out.append(Utterance(AudioClip(x, SAMPLE_RATE), text, f"syn{len(out):05d}"))
    return out


def load_directory(path) -> list[Utterance]:
    """Read ``manifest.tsv`` (``file<TAB>text``) or ``name.wav`` + ``name.txt`` pairs."""
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    manifest = root / "manifest.tsv"
    if manifest.exists():
        with open(manifest, newline="") as fh:
            rows = [(r[0], r[1]) for r in csv.reader(fh, delimiter="\t") if r and not r[0].startswith("#")]
    else:
        rows = [(p.name, p.with_suffix(".txt").read_text()) for p in sorted(root.glob("*.wav"))
                if p.with_suffix(".txt").exists()]
    if not rows:
        raise FileNotFoundError(f"no labelled utterances in {root}")
    return [Utterance(read_wav(root / name), normalize_text(text), Path(name).stem) for name, text in rows]
