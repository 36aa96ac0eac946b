"""Recurrent acoustic model over MFCCs with an explicit backward pass.

Layout: fixed feature standardization, two stacked tanh recurrent layers and a
linear read-out to the character vocabulary. Every operation is batched over a
leading axis so the eight transformed copies of an attack step run together.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..audio import AudioClip
from ..features import FeatureConfig, mfcc_backward, mfcc_forward
from .ctc import ctc_loss_and_grad, greedy_decode
from .vocab import SYMBOLS, TranscriptionTarget, decode

CHECKPOINT_FORMAT = "robust-aae-victim"
CHECKPOINT_VERSION = 1
PARAM_NAMES = ("W1", "U1", "b1", "W2", "U2", "b2", "Wo", "bo")


def rnn_forward(x, W, U, b):
    """``h_t = tanh(x_t W + h_{t-1} U + b)`` for ``x`` of shape ``(B, T, D)``."""
    batch, n_frames, _ = x.shape
    pre = x @ W + b
    h = np.empty((batch, n_frames, W.shape[1]))
    prev = np.zeros((batch, W.shape[1]))
    for t in range(n_frames):
        prev = np.tanh(pre[:, t] + prev @ U)
        h[:, t] = prev
    return h


def rnn_backward(dh, x, h, W, U):
    """Gradients ``(dx, dW, dU, db)`` of :func:`rnn_forward`."""
    batch, n_frames, hidden = h.shape
    dpre = np.empty_like(h)
    carry = np.zeros((batch, hidden))
    Ut = U.T
    for t in range(n_frames - 1, -1, -1):
        g = (dh[:, t] + carry) * (1.0 - h[:, t] ** 2)
        dpre[:, t] = g
        carry = g @ Ut
    flat = dpre.reshape(-1, hidden)
    h_prev = np.concatenate([np.zeros((batch, 1, hidden)), h[:, :-1]], axis=1)
    dW = x.reshape(-1, x.shape[-1]).T @ flat
    dU = h_prev.reshape(-1, hidden).T @ flat
    db = flat.sum(axis=0)
    dx = dpre @ W.T
    return dx, dW, dU, db


@dataclass
class VictimModel:
    params: dict
    feat_mean: np.ndarray
    feat_std: np.ndarray
    feature_config: FeatureConfig = field(default_factory=FeatureConfig)
    vocabulary: tuple = SYMBOLS

    @classmethod
    def init(cls, rng: np.random.Generator, hidden: int = 128,
             feature_config: FeatureConfig = FeatureConfig()) -> "VictimModel":
        n_in = feature_config.n_ceps
        n_out = len(SYMBOLS)

        def orthogonal(n):
            q, r = np.linalg.qr(rng.standard_normal((n, n)))
            return q * np.sign(np.diag(r))

        params = {
            "W1": rng.standard_normal((n_in, hidden)) / np.sqrt(n_in),
            "U1": 0.9 * orthogonal(hidden),
            "b1": np.zeros(hidden),
            "W2": rng.standard_normal((hidden, hidden)) / np.sqrt(hidden),
            "U2": 0.9 * orthogonal(hidden),
            "b2": np.zeros(hidden),
            "Wo": rng.standard_normal((hidden, n_out)) / np.sqrt(hidden),
            "bo": np.zeros(n_out),
        }
        return cls(params, np.zeros(n_in), np.ones(n_in), feature_config)

    @property
    def hidden(self) -> int:
        return self.params["U1"].shape[0]

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    # -- forward / backward ---------------------------------------------------

    def forward(self, samples: np.ndarray):
        """Logits ``[..., T, V]`` for waveform(s) ``[..., L]`` plus a backward cache."""
        samples = np.asarray(samples, dtype=np.float64)
        single = samples.ndim == 1
        batch = samples[None] if single else samples
        feats, fcache = mfcc_forward(batch, self.feature_config)
        p = self.params
        z = (feats - self.feat_mean) / self.feat_std
        h1 = rnn_forward(z, p["W1"], p["U1"], p["b1"])
        h2 = rnn_forward(h1, p["W2"], p["U2"], p["b2"])
        logits = h2 @ p["Wo"] + p["bo"]
        cache = (single, fcache, z, h1, h2)
        return (logits[0] if single else logits), cache

    def logits(self, samples) -> np.ndarray:
        return self.forward(getattr(samples, "samples", samples))[0]

    def backward(self, dlogits: np.ndarray, cache, input_grad: bool = True, param_grad: bool = False):
        """Returns ``(d samples or None, {name: grad} or None)``."""
        single, fcache, z, h1, h2 = cache
        if single:
            dlogits = dlogits[None]
        p = self.params
        dh2 = dlogits @ p["Wo"].T
        dh1, dW2, dU2, db2 = rnn_backward(dh2, h1, h2, p["W2"], p["U2"])
        dz, dW1, dU1, db1 = rnn_backward(dh1, z, h1, p["W1"], p["U1"])
        grads = None
        if param_grad:
            width = h2.shape[-1]
            grads = {
                "W1": dW1, "U1": dU1, "b1": db1, "W2": dW2, "U2": dU2, "b2": db2,
                "Wo": h2.reshape(-1, width).T @ dlogits.reshape(-1, dlogits.shape[-1]),
                "bo": dlogits.reshape(-1, dlogits.shape[-1]).sum(axis=0),
            }
        dx = None
        if input_grad:
            dx = mfcc_backward(dz / self.feat_std, fcache)
            if single:
                dx = dx[0]
        return dx, grads

    # -- convenience ----------------------------------------------------------

    def n_frames(self, n_samples: int) -> int:
        return self.feature_config.n_frames(n_samples)

    def transcribe(self, clip) -> str:
        return decode(greedy_decode(self.logits(clip)))

    def transcribe_batch(self, samples: np.ndarray) -> list[str]:
        return [decode(greedy_decode(row)) for row in self.logits(samples)]

    def loss(self, clip, target: TranscriptionTarget) -> float:
        return ctc_loss_and_grad(self.logits(clip), target.token_ids)[0]

    def input_gradient(self, clip, target: TranscriptionTarget) -> np.ndarray:
        """d CTC / d samples for a single clip."""
        samples = getattr(clip, "samples", clip)
        logits, cache = self.forward(samples)
        _, dlogits, _ = ctc_loss_and_grad(logits, target.token_ids)
        return self.backward(dlogits, cache)[0]

    # -- persistence ----------------------------------------------------------

    def descriptor(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "architecture": {"type": "rnn-tanh", "layers": 2, "hidden": self.hidden,
                             "n_inputs": self.feature_config.n_ceps},
            "features": self.feature_config.__dict__,
            "vocabulary": list(self.vocabulary),
        }

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        arrays = {f"param/{k}": v for k, v in self.params.items()}
        arrays["norm/mean"] = self.feat_mean
        arrays["norm/std"] = self.feat_std
        arrays["descriptor"] = np.array(json.dumps(self.descriptor(), sort_keys=True))
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path) -> "VictimModel":
        with np.load(Path(path), allow_pickle=False) as data:
            desc = json.loads(str(data["descriptor"]))
            if desc.get("format") != CHECKPOINT_FORMAT:
                raise ValueError(f"{path}: not a victim checkpoint")
            if desc.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"{path}: unsupported checkpoint version {desc.get('version')}")
            params = {k: data[f"param/{k}"].copy() for k in PARAM_NAMES}
            mean, std = data["norm/mean"].copy(), data["norm/std"].copy()
        cfg = FeatureConfig(**desc["features"])
        return cls(params, mean, std, cfg, tuple(desc["vocabulary"]))


def as_samples(clip) -> np.ndarray:
    return clip.samples if isinstance(clip, AudioClip) else np.asarray(clip, dtype=np.float64)
