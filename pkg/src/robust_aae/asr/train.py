"""Minibatch CTC training with momentum SGD."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..features import FeatureConfig, mfcc_forward
from ..metrics import edit_distance
from .ctc import ctc_loss_and_grad, greedy_decode
from .model import VictimModel
from .vocab import TranscriptionTarget, decode

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """Training finished without reaching the required held-out WER."""

    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class TrainConfig:
    hidden: int = 128
    epochs: int = 30
    batch_size: int = 16
    learning_rate: float = 0.02
    momentum: float = 0.9
    lr_decay: float = 0.93  # per epoch
    clip_norm: float = 5.0
    gain_range: tuple = (0.5, 2.0)
    held_out: float = 0.1
    max_wer: float = 10.0
    seed: int = 0


def corpus_wer(model: VictimModel, utterances, batch_size: int = 32) -> float:
    """Corpus-level WER: total word errors over total reference words."""
    errors = words = 0
    for i in range(0, len(utterances), batch_size):
        chunk = utterances[i:i + batch_size]
        for u, hyp in zip(chunk, transcribe_many(model, [u.clip.samples for u in chunk])):
            errors += edit_distance(u.text, hyp)
            words += len(u.text.split())
    return 100.0 * errors / max(words, 1)


def transcribe_many(model: VictimModel, signals) -> list[str]:
    """Transcribe clips of differing lengths by right-padding into one batch."""
    padded, lengths = _pad(signals)
    logits = model.logits(padded)
    frames = [model.n_frames(n) for n in lengths]
    return [decode(greedy_decode(logits[b, :frames[b]])) for b in range(len(signals))]


def _pad(signals):
    lengths = [s.shape[0] for s in signals]
    out = np.zeros((len(signals), max(lengths)))
    for b, s in enumerate(signals):
        out[b, :s.shape[0]] = s
    return out, lengths


def feature_stats(utterances, cfg: FeatureConfig):
    feats = np.concatenate([mfcc_forward(u.clip.samples, cfg)[0] for u in utterances])
    return feats.mean(axis=0), feats.std(axis=0) + 1e-8


def split(utterances, held_out: float, seed: int):
    order = np.random.default_rng(seed).permutation(len(utterances))
    n_test = int(round(held_out * len(utterances)))
    test = [utterances[i] for i in sorted(order[:n_test])]
    train = [utterances[i] for i in sorted(order[n_test:])]
    return train, test


def train(utterances, cfg: TrainConfig = TrainConfig(), check: bool = True):
    """Fit a victim model; returns ``(model, report)``.

    Raises :class:`TrainingError` when ``check`` is set and the held-out WER
    stays above ``cfg.max_wer``.
    """
    rng = np.random.default_rng(cfg.seed)
    train_set, test_set = split(utterances, cfg.held_out, cfg.seed)
    if not train_set:
        raise ValueError("empty training set")
    model = VictimModel.init(rng, cfg.hidden)
    model.feat_mean, model.feat_std = feature_stats(train_set, model.feature_config)
    targets = [TranscriptionTarget.from_text(u.text) for u in train_set]
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    lr = cfg.learning_rate
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train_set))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            gains = np.exp(rng.uniform(*np.log(cfg.gain_range), size=len(idx)))
            batch, lengths = _pad([train_set[i].clip.samples * g for i, g in zip(idx, gains)])
            logits, cache = model.forward(batch)
            frames = [model.n_frames(n) for n in lengths]
            loss, dlogits, _ = ctc_loss_and_grad(logits, [targets[i] for i in idx], frames)
            _, grads = model.backward(dlogits, cache, input_grad=False, param_grad=True)
            norm = np.sqrt(sum(np.sum(g * g) for g in grads.values()))
            scale = min(1.0, cfg.clip_norm / (norm + 1e-12))
            for k, g in grads.items():
                velocity[k] = cfg.momentum * velocity[k] - lr * scale * g
                model.params[k] += velocity[k]
            total += loss * len(idx)
        lr *= cfg.lr_decay
        history.append(total / len(train_set))
        log.info("epoch %d loss %.4f", epoch + 1, history[-1])
    report = {
        "train_loss": history,
        "train_wer": corpus_wer(model, train_set),
        "held_out_wer": corpus_wer(model, test_set) if test_set else None,
        "n_train": len(train_set),
        "n_held_out": len(test_set),
        "n_parameters": model.n_parameters(),
    }
    if check and test_set and report["held_out_wer"] > cfg.max_wer:
        raise TrainingError(
            f"did not converge: held-out WER {report['held_out_wer']:.2f}% > {cfg.max_wer}%", report)
    return model, report
