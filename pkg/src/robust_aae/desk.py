"""The bundled desk-scale setup: synthetic corpus, trained victim, attack clips.

Everything is derived from fixed seeds so that any two runs build the same
model and pick the same clips.
"""

from __future__ import annotations

from dataclasses import dataclass

from .asr.corpus import Utterance, synthetic_corpus
from .asr.model import VictimModel
from .asr.train import TrainConfig, train

TRAIN_SEED = 0
ATTACK_SEED = 777


@dataclass(frozen=True)
class DeskConfig:
    n_train: int = 1000
    epochs: int = 15
    n_attack: int = 50
    min_attack_seconds: float = 1.2
    train_seed: int = TRAIN_SEED
    attack_seed: int = ATTACK_SEED


def train_victim(cfg: DeskConfig = DeskConfig(), check: bool = True):
    """Train the victim on the synthetic corpus; returns ``(model, report)``."""
    data = synthetic_corpus(cfg.n_train, cfg.train_seed)
    return train(data, TrainConfig(epochs=cfg.epochs, seed=cfg.train_seed), check=check)


def attack_clips(model: VictimModel, cfg: DeskConfig = DeskConfig(), n: int | None = None) -> list[Utterance]:
    """First ``n`` fresh utterances (2-4 words, long enough) that the model transcribes correctly."""
    n = cfg.n_attack if n is None else n
    picked = []
    batch = 0
    while len(picked) < n:
        pool = synthetic_corpus(4 * n, cfg.attack_seed + batch, min_words=2)
        for u in pool:
            if u.clip.duration >= cfg.min_attack_seconds and model.transcribe(u.clip) == u.text:
                picked.append(Utterance(u.clip, u.text, f"clip{len(picked):02d}"))
                if len(picked) == n:
                    break
        batch += 1
    return picked
