"""Independent reference implementations used to cross-check the package.

These are deliberately naive (enumeration, recursion, explicit sums) and share
no code with ``robust_aae``.
"""

import itertools
import math
from functools import lru_cache

import numpy as np


def ctc_bruteforce(logits, labels, blank=0):
    """-log of the summed probability of every frame path that collapses to ``labels``."""
    logits = np.asarray(logits, dtype=np.float64)
    probs = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)
    n_frames, n_sym = probs.shape
    total = 0.0
    for path in itertools.product(range(n_sym), repeat=n_frames):
        collapsed = [k for i, k in enumerate(path) if (i == 0 or k != path[i - 1]) and k != blank]
        if collapsed == list(labels):
            total += math.prod(probs[t, k] for t, k in enumerate(path))
    return -math.log(total)


def levenshtein(a, b):
    """Recursive word edit distance."""
    a, b = tuple(a), tuple(b)

    @lru_cache(maxsize=None)
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return d(len(a), len(b))


def quiet_threshold_db(f_hz):
    k = f_hz / 1000.0
    return 3.64 * k ** -0.8 - 6.5 * math.exp(-0.6 * (k - 3.3) ** 2) + 1e-3 * k ** 4


def direct_convolution(x, h):
    out = np.zeros(len(x))
    for n in range(len(x)):
        for m in range(min(len(h), n + 1)):
            out[n] += h[m] * x[n - m]
    return out


def dft(x):
    n = len(x)
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) @ x


def directional_derivative(f, x, v, h=1e-6):
    return (f(x + h * v) - f(x - h * v)) / (2 * h)


def relative_error(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


# Values frozen from the oracles above (quiet threshold at 1 kHz and 3.3 kHz).
QUIET_1K = 3.369066526
QUIET_3K3 = -4.980884944
