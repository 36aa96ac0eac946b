"""Word-level edit distance and word error rate."""

from __future__ import annotations

import numpy as np


def _words(seq):
    return seq.split() if isinstance(seq, str) else list(seq)


def edit_distance(reference, hypothesis) -> int:
    """Minimum substitutions + deletions + insertions turning reference into hypothesis."""
    ref, hyp = _words(reference), _words(hypothesis)
    prev = np.arange(len(hyp) + 1)
    for i, r in enumerate(ref, 1):
        cur = np.empty_like(prev)
        cur[0] = i
        for j, h in enumerate(hyp, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return int(prev[-1])


def wer(reference, hypothesis) -> float:
    """Word error rate in percent; insertions can push it above 100."""
    ref = _words(reference)
    if not ref:
        raise ValueError("reference must contain at least one word")
    return 100.0 * edit_distance(ref, hypothesis) / len(ref)
