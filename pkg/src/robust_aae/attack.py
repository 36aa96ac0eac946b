"""Targeted audio adversarial examples with room simulation and a hearing model.

One optimisation loop covers all four variants. Each step clips the
perturbation, optionally pushes eight copies of the adversarial clip through
random noise, a room response and a time offset, evaluates the CTC loss plus a
weighted size penalty, and takes a projected gradient step. The penalty weight
grows while the attack keeps succeeding and shrinks (never below its start
value) while it keeps failing.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .asr.ctc import ctc_loss_and_grad, greedy_decode
from .asr.model import VictimModel
from .asr.vocab import TranscriptionTarget, decode
from .audio import AudioClip, InfiniteSNRError, convolve_truncated, convolve_truncated_adjoint, snr_db
from .psychoacoustic import MaskingThresholdGrid, compute_threshold_grid, perceptual_loss_and_grad
from .rir import Rir, RirPool, draw

VARIANTS = ("base", "robust", "psychoacoustic", "combined")
DEFAULT_LR = {"base": 0.002, "robust": 0.002, "psychoacoustic": 0.001, "combined": 0.001}


@dataclass(frozen=True)
class AttackConfig:
    variant: str = "base"
    epsilon: float | None = None  # None: derived from snr_floor_db and the clip peak
    snr_floor_db: float = 10.0
    learning_rate: float | None = None  # None: variant default
    min_iterations: int = 5000
    max_iterations: int | None = None
    alpha_init: float = 0.3
    alpha_factor: float = 1.1
    inc_streak: int = 15
    dec_streak: int = 100
    eot_copies: int = 8
    success_votes: int = 5
    noise_sigma: float = 0.001
    max_offset: int = 160
    ref_length: int = 16000
    rir_pool: RirPool = field(default_factory=RirPool.dynamic)
    perceptual_mode: str = "excess"
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.alpha_factor > 1:
            raise ValueError("alpha_factor must exceed 1")
        if not 0 < self.inc_streak < self.dec_streak:
            raise ValueError("streaks must satisfy 0 < inc_streak < dec_streak")
        if self.alpha_init < 0:
            raise ValueError("alpha_init must be non-negative")
        if self.min_iterations < 1:
            raise ValueError("min_iterations must be at least 1")
        if self.max_iterations is not None and self.max_iterations < self.min_iterations:
            raise ValueError("max_iterations must be >= min_iterations")
        if self.eot_copies < 1 or not 1 <= self.success_votes <= self.eot_copies:
            raise ValueError("need 1 <= success_votes <= eot_copies")
        if self.noise_sigma < 0 or self.max_offset < 0 or self.ref_length <= 0:
            raise ValueError("noise_sigma, max_offset must be >= 0 and ref_length > 0")
        if self.learning_rate is not None and not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")

    @property
    def uses_eot(self) -> bool:
        return self.variant in ("robust", "combined")

    @property
    def uses_psychoacoustic(self) -> bool:
        return self.variant in ("psychoacoustic", "combined")

    @property
    def lr(self) -> float:
        return self.learning_rate if self.learning_rate is not None else DEFAULT_LR[self.variant]

    def epsilon_for(self, x: np.ndarray) -> float:
        if self.epsilon is not None:
            return self.epsilon
        eps = float(np.max(np.abs(x))) * 10 ** (-self.snr_floor_db / 20)
        if eps <= 0:
            raise ValueError("cannot derive epsilon from a silent clip")
        return eps


@dataclass(frozen=True)
class AlphaState:
    alpha: float
    streak: int = 0


def update_alpha(state: AlphaState, success: bool, cfg: AttackConfig) -> AlphaState:
    """Advance the success/failure streak and rescale alpha when it completes."""
    if success:
        streak = state.streak + 1 if state.streak > 0 else 1
    else:
        streak = state.streak - 1 if state.streak < 0 else -1
    alpha = state.alpha
    if streak >= cfg.inc_streak:
        alpha, streak = alpha * cfg.alpha_factor, 0
    elif streak <= -cfg.dec_streak:
        alpha, streak = max(alpha / cfg.alpha_factor, cfg.alpha_init), 0
    return AlphaState(alpha, streak)


def beta(len_x: int, len_ref: int) -> float:
    if len_x <= 0 or len_ref <= 0:
        raise ValueError("lengths must be positive")
    return float(np.sqrt(len_ref / len_x))


def clip_perturbation(delta: np.ndarray, epsilon: float) -> np.ndarray:
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    return np.clip(delta, -epsilon, epsilon)


def shift_right(x: np.ndarray, k: int) -> np.ndarray:
    """Delay by ``k`` samples along the last axis, zero head, truncated tail."""
    if k < 0:
        raise ValueError("offset must be non-negative")
    out = np.zeros_like(x)
    n = x.shape[-1]
    if k < n:
        out[..., k:] = x[..., :n - k]
    return out


def shift_left(g: np.ndarray, k: int) -> np.ndarray:
    """Adjoint of :func:`shift_right`."""
    out = np.zeros_like(g)
    n = g.shape[-1]
    if k < n:
        out[..., :n - k] = g[..., k:]
    return out


def apply_offset(clip: AudioClip, k: int) -> AudioClip:
    return clip.with_samples(shift_right(clip.samples, int(k)))


# -- transformation stack -------------------------------------------------------

@dataclass(frozen=True)
class TransformDraw:
    """Everything random about one transformed copy."""

    rir: Rir
    noise: np.ndarray
    offset: int


def draw_transforms(n: int, length: int, pool: RirPool, noise_sigma: float, max_offset: int,
                    rng: np.random.Generator) -> list[TransformDraw]:
    draws = []
    for _ in range(n):
        rir = draw(pool, rng)
        noise = noise_sigma * rng.standard_normal(length) if noise_sigma > 0 else np.zeros(length)
        offset = int(rng.integers(0, max_offset + 1))
        draws.append(TransformDraw(rir, noise, offset))
    return draws


def _stack_taps(draws):
    width = max(len(d.rir) for d in draws)
    taps = np.zeros((len(draws), width))
    for i, d in enumerate(draws):
        taps[i, :len(d.rir)] = d.rir.taps
    return taps


def apply_transforms(adv: np.ndarray, draws: list[TransformDraw], max_offset: int) -> np.ndarray:
    """Noise -> room -> zero prefix of ``max_offset`` -> random delay; rows of length L + max_offset."""
    noisy = adv[None, :] + np.stack([d.noise for d in draws])
    wet = convolve_truncated(noisy, _stack_taps(draws))
    padded = np.concatenate([np.zeros((len(draws), max_offset)), wet], axis=1)
    return np.stack([shift_right(row, d.offset) for row, d in zip(padded, draws)])


def transforms_adjoint(grad: np.ndarray, draws: list[TransformDraw], max_offset: int) -> np.ndarray:
    """Sum over copies of the gradient pulled back to the untransformed clip."""
    unshifted = np.stack([shift_left(row, d.offset) for row, d in zip(grad, draws)])
    wet = unshifted[:, max_offset:]
    return convolve_truncated_adjoint(wet, _stack_taps(draws)).sum(axis=0)


def eot_transform(adv: AudioClip, pool: RirPool, cfg: AttackConfig, rng: np.random.Generator):
    """``cfg.eot_copies`` transformed clips plus the draws that made them."""
    draws = draw_transforms(cfg.eot_copies, len(adv), pool, cfg.noise_sigma, cfg.max_offset, rng)
    rows = apply_transforms(adv.samples, draws, cfg.max_offset)
    return [adv.with_samples(r) for r in rows], draws


# -- loss -------------------------------------------------------------------------

@dataclass
class LossEval:
    loss: float
    model_loss: float
    penalty: float
    grad: np.ndarray
    logits: np.ndarray  # (copies, T, V); one row for clean variants
    frames: int


def l2_and_grad(delta: np.ndarray):
    norm = float(np.linalg.norm(delta))
    return norm, (delta / norm if norm > 0 else np.zeros_like(delta))


def compound_loss(model: VictimModel, x: np.ndarray, delta: np.ndarray, target: TranscriptionTarget,
                  cfg: AttackConfig, alpha: float, beta_: float, grid: MaskingThresholdGrid | None = None,
                  draws: list[TransformDraw] | None = None) -> LossEval:
    """Model loss (clean or averaged over transformed copies) plus alpha*beta*penalty."""
    adv = x + delta
    if cfg.uses_eot:
        if draws is None:
            raise ValueError(f"variant {cfg.variant} needs transformation draws")
        inputs = apply_transforms(adv, draws, cfg.max_offset)
    else:
        inputs = adv[None, :]
    logits, cache = model.forward(inputs)
    model_loss, dlogits, _ = ctc_loss_and_grad(logits, [target.token_ids] * len(inputs))
    dinputs, _ = model.backward(dlogits, cache)
    grad = transforms_adjoint(dinputs, draws, cfg.max_offset) if cfg.uses_eot else dinputs[0]
    weight = alpha * beta_
    if cfg.uses_psychoacoustic:
        if grid is None:
            raise ValueError(f"variant {cfg.variant} needs a masking threshold grid")
        penalty, pgrad = perceptual_loss_and_grad(delta, grid, cfg.perceptual_mode)
    else:
        penalty, pgrad = l2_and_grad(delta)
    if weight:
        grad = grad + weight * pgrad
    return LossEval(model_loss + weight * penalty, model_loss, penalty, grad, logits, logits.shape[1])


def success_check(cfg: AttackConfig, logits: np.ndarray, target: TranscriptionTarget):
    """``(success, matches)``: exact match on the clean clip, or enough matching copies."""
    hyps = [decode(greedy_decode(row)) for row in logits]
    matches = sum(h == target.text for h in hyps)
    needed = cfg.success_votes if cfg.uses_eot else 1
    return matches >= needed, matches, hyps


# -- driver -------------------------------------------------------------------------

TRACE_FIELDS = ("iteration", "loss", "model_loss", "penalty", "alpha", "streak", "success",
                "per_rir_count", "max_abs_delta")


@dataclass
class AttackResult:
    best_delta: np.ndarray
    iterations_run: int
    success_found: bool
    per_rir_success_count: int
    final_alpha: float
    snr_db: float
    perceptual_loss: float
    l2_norm: float
    transcript_clean: str
    transcripts_transformed: list
    best_iteration: int
    first_success_iteration: int | None
    epsilon: float
    trace: list = field(default_factory=list, repr=False)

    def adversarial(self, x: AudioClip) -> AudioClip:
        return x.with_samples(x.samples + self.best_delta)

    def summary(self) -> dict:
        return {
            "iterations_run": self.iterations_run,
            "success_found": self.success_found,
            "per_rir_success_count": self.per_rir_success_count,
            "final_alpha": self.final_alpha,
            "snr_db": self.snr_db,
            "perceptual_loss": self.perceptual_loss,
            "l2_norm": self.l2_norm,
            "transcript_clean": self.transcript_clean,
            "transcripts_transformed": list(self.transcripts_transformed),
            "best_iteration": self.best_iteration,
            "first_success_iteration": self.first_success_iteration,
            "epsilon": self.epsilon,
        }


def iteration_rng(seed: int, iteration: int) -> np.random.Generator:
    return np.random.default_rng([seed, iteration])


def run_attack(x: AudioClip, target, model: VictimModel, cfg: AttackConfig) -> AttackResult:
    """Optimise a perturbation so that ``model`` transcribes ``x + delta`` as ``target``."""
    if isinstance(target, str):
        target = TranscriptionTarget.from_text(target)
    samples = x.samples
    eps = cfg.epsilon_for(samples)
    beta_ = beta(len(samples), cfg.ref_length)
    grid = compute_threshold_grid(x)
    lr = cfg.lr
    limit = cfg.max_iterations or cfg.min_iterations

    delta = np.zeros_like(samples)
    state = AlphaState(cfg.alpha_init, 0)
    best = None  # (count, -perceptibility) ordering key
    best_delta = delta.copy()
    best_iter = 0
    best_hyps = []
    first_success = None
    trace = []
    it = 0
    while it < limit and (it < cfg.min_iterations or first_success is None):
        it += 1
        delta = clip_perturbation(delta, eps)
        draws = None
        if cfg.uses_eot:
            draws = draw_transforms(cfg.eot_copies, len(samples), cfg.rir_pool, cfg.noise_sigma,
                                    cfg.max_offset, iteration_rng(cfg.seed, it))
        ev = compound_loss(model, samples, delta, target, cfg, state.alpha, beta_, grid, draws)
        success, count, hyps = success_check(cfg, ev.logits, target)
        if success and first_success is None:
            first_success = it
        cost = ev.penalty if cfg.uses_psychoacoustic else l2_and_grad(delta)[0]
        key = (count, -cost)
        if best is None or key > best:
            best, best_delta, best_iter, best_hyps = key, delta.copy(), it, hyps
        state = update_alpha(state, success, cfg)
        trace.append((it, ev.loss, ev.model_loss, ev.penalty, state.alpha, state.streak,
                      int(success), count, float(np.max(np.abs(delta)))))
        delta = clip_perturbation(delta - lr * ev.grad, eps)

    if best[0] == 0:
        # nothing ever matched: report the final iterate
        best_delta, best_iter = delta, it
        best_hyps = []
    adv = samples + best_delta
    clean = model.transcribe(adv)
    l2 = float(np.linalg.norm(best_delta))
    try:
        snr = snr_db(x, AudioClip(best_delta, x.sample_rate))
    except InfiniteSNRError:
        snr = float("inf")
    return AttackResult(
        best_delta=best_delta,
        iterations_run=it,
        success_found=first_success is not None,
        per_rir_success_count=int(best[0]),
        final_alpha=state.alpha,
        snr_db=snr,
        perceptual_loss=perceptual_loss_and_grad(best_delta, grid, cfg.perceptual_mode)[0],
        l2_norm=l2,
        transcript_clean=clean,
        transcripts_transformed=best_hyps if cfg.uses_eot else [],
        best_iteration=best_iter,
        first_success_iteration=first_success,
        epsilon=eps,
        trace=trace,
    )


def write_trace(path, result: AttackResult):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_FIELDS)
        for row in result.trace:
            w.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in row])


def with_overrides(cfg: AttackConfig, **kw) -> AttackConfig:
    return replace(cfg, **kw)
