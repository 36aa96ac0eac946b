"""Fixtures-as-functions shared by the unit and acceptance suites."""

import numpy as np

from robust_aae.audio import AudioClip, spl_normalize, stft


def tone_frame(freq=1000.0, level=96.0):
    """SPL row of a Hann-windowed tone whose total (3-bin) power sits at ``level``."""
    n = 4096
    x = np.sin(2 * np.pi * freq * np.arange(n) / 16000)
    row = spl_normalize(stft(AudioClip(x))).values[4]
    k = int(np.argmax(row))
    total = 10 * np.log10(np.sum(10 ** (row[k - 1:k + 2] / 10)))
    return np.maximum(row + level - total, -200.0)
