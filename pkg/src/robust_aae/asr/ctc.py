"""Connectionist temporal classification loss, computed in log space."""

from __future__ import annotations

import numpy as np
from numba import njit

from .vocab import BLANK


class InfeasibleTargetError(ValueError):
    """The target needs more frames than the logits provide."""


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


@njit(cache=True)
def _lse(a, b):
    if a == -np.inf:
        return b
    if b == -np.inf:
        return a
    if a > b:
        return a + np.log1p(np.exp(b - a))
    return b + np.log1p(np.exp(a - b))


@njit(cache=True)
def _ctc_single(logp, labels, blank):
    """Negative log-likelihood and d(nll)/d(logp) occupancy for one sequence."""
    n_frames, n_sym = logp.shape
    n_states = 2 * labels.shape[0] + 1
    ext = np.full(n_states, blank)
    for i in range(labels.shape[0]):
        ext[2 * i + 1] = labels[i]
    alpha = np.full((n_frames, n_states), -np.inf)
    beta = np.full((n_frames, n_states), -np.inf)
    alpha[0, 0] = logp[0, blank]
    if n_states > 1:
        alpha[0, 1] = logp[0, ext[1]]
    for t in range(1, n_frames):
        for s in range(n_states):
            a = alpha[t - 1, s]
            if s > 0:
                a = _lse(a, alpha[t - 1, s - 1])
            if s > 1 and ext[s] != blank and ext[s] != ext[s - 2]:
                a = _lse(a, alpha[t - 1, s - 2])
            if a != -np.inf:
                alpha[t, s] = a + logp[t, ext[s]]
    # beta excludes the emission at t itself
    beta[n_frames - 1, n_states - 1] = 0.0
    if n_states > 1:
        beta[n_frames - 1, n_states - 2] = 0.0
    for t in range(n_frames - 2, -1, -1):
        for s in range(n_states):
            b = beta[t + 1, s] + logp[t + 1, ext[s]]
            if s + 1 < n_states:
                b = _lse(b, beta[t + 1, s + 1] + logp[t + 1, ext[s + 1]])
            if s + 2 < n_states and ext[s + 2] != blank and ext[s + 2] != ext[s]:
                b = _lse(b, beta[t + 1, s + 2] + logp[t + 1, ext[s + 2]])
            beta[t, s] = b
    loglik = alpha[n_frames - 1, n_states - 1]
    if n_states > 1:
        loglik = _lse(loglik, alpha[n_frames - 1, n_states - 2])
    occ = np.zeros((n_frames, n_sym))
    for t in range(n_frames):
        for s in range(n_states):
            v = alpha[t, s] + beta[t, s]
            if v != -np.inf:
                occ[t, ext[s]] += np.exp(v - loglik)
    return -loglik, occ


def ctc_loss_and_grad(logits: np.ndarray, targets, lengths=None, blank: int = BLANK):
    """Mean CTC loss over a batch and its gradient with respect to the logits.

    ``logits`` is ``(T, V)`` or ``(B, T, V)``; ``targets`` a token sequence or a
    list of them; ``lengths`` optional valid frame counts (padding is ignored).
    Returns ``(mean_loss, dlogits, per_item_losses)``.
    """
    single = logits.ndim == 2
    if single:
        logits = logits[None]
        targets = [targets]
    batch, n_frames, _ = logits.shape
    if lengths is None:
        lengths = [n_frames] * batch
    if len(targets) != batch:
        raise ValueError(f"{len(targets)} targets for a batch of {batch}")
    logp = log_softmax(logits)
    dlogits = np.zeros_like(logits)
    losses = np.empty(batch)
    for b in range(batch):
        labels = np.asarray(getattr(targets[b], "token_ids", targets[b]), dtype=np.int64)
        n = int(lengths[b])
        repeats = int(np.sum(labels[1:] == labels[:-1])) if labels.size else 0
        if labels.size + repeats > n:
            raise InfeasibleTargetError(
                f"target of {labels.size} tokens needs {labels.size + repeats} frames, got {n}")
        nll, occ = _ctc_single(np.ascontiguousarray(logp[b, :n]), labels, blank)
        losses[b] = nll
        dlogits[b, :n] = (np.exp(logp[b, :n]) - occ) / batch
    loss = float(losses.mean())
    if single:
        return loss, dlogits[0], losses
    return loss, dlogits, losses


def ctc_loss(logits, target, blank: int = BLANK) -> float:
    return ctc_loss_and_grad(logits, target, blank=blank)[0]


def greedy_decode(logits: np.ndarray, blank: int = BLANK) -> list[int]:
    """Best path: per-frame argmax, merge repeats, drop blanks."""
    best = np.argmax(logits, axis=-1)
    out = []
    prev = -1
    for k in best:
        if k != prev and k != blank:
            out.append(int(k))
        prev = k
    return out
