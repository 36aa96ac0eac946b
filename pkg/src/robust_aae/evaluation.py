"""Metrics and experiment harnesses for simulated over-the-air evaluation.

Attacks are judged by playing the adversarial clip through freshly simulated
rooms (seeded separately from anything the attack saw) and measuring the word
error rate of the transcription against the attacker's target phrase.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .asr.model import VictimModel
from .asr.train import transcribe_many
from .asr.vocab import TranscriptionTarget
from .attack import AttackConfig, AttackResult, apply_transforms, draw_transforms, run_attack
from .audio import AudioClip
from .metrics import edit_distance, wer
from .rir import ONE_ROOM, VARIOUS_ROOMS, RirPool, RoomRanges

log = logging.getLogger(__name__)

__all__ = ["wer", "edit_distance", "EvalRecord", "Environment", "simulate_environment",
           "evaluate_adversarial", "evaluate_attack", "evaluate_corpus", "run_table", "sweep_reverberation", "compare_pools"]

# separates evaluation draws from attack-time draws, which use [seed, iteration]
EVAL_DOMAIN = 0xE7A1

TARGETS = {
    "S1": "please open the door",
    "S2": "turn off the light and close the window",
    "S3": "please close the door and turn on the light",
    "S4": "please turn off the light and open the window and call home seven",
}


@dataclass(frozen=True)
class Environment:
    """How evaluation copies are produced."""

    pool: RirPool = field(default_factory=RirPool.dynamic)
    noise_sigma: float = 0.001
    max_offset: int = 160
    n_transforms: int = 10


@dataclass
class EvalRecord:
    example_id: str
    variant: str
    target_id: str
    wer_to_target: float
    snr_db: float
    success_found: bool
    exact_match_rate: float
    perceptual_loss: float = float("nan")
    transcripts: list = field(default_factory=list)
    rooms: list = field(default_factory=list)

    def row(self) -> dict:
        d = asdict(self)
        d["transcripts"] = " | ".join(self.transcripts)
        d["rooms"] = json.dumps(self.rooms, sort_keys=True)
        return d


def eval_rng(seed: int, example_id: int, index: int) -> np.random.Generator:
    return np.random.default_rng([EVAL_DOMAIN, seed, example_id, index])


def simulate_environment(adv: AudioClip, env: Environment = Environment(), seed: int = 0,
                         example_id: int = 0):
    """``env.n_transforms`` transformed copies and a log of the rooms used.

    Copy ``k`` depends only on ``(seed, example_id, k)``.
    """
    if env.n_transforms < 1:
        raise ValueError("need at least one transformation")
    copies, draws = [], []
    for k in range(env.n_transforms):
        d = draw_transforms(1, len(adv), env.pool, env.noise_sigma, env.max_offset,
                            eval_rng(seed, example_id, k))
        copies.append(adv.with_samples(apply_transforms(adv.samples, d, env.max_offset)[0]))
        draws.append(d[0])
    return copies, draws


def _room_log(draw) -> dict:
    cfg = draw.rir.config
    return {"offset": draw.offset, "room": cfg.to_dict() if cfg else None}


def evaluate_adversarial(adv: AudioClip, target, model: VictimModel, env: Environment = Environment(),
                         seed: int = 0, example_id: int = 0, uid: str = "", variant: str = "",
                         target_id: str = "", snr: float = float("nan"), success_found: bool = False,
                         perceptual_loss: float = float("nan")) -> EvalRecord:
    """Mean target-WER of ``adv`` over simulated copies; attack metadata is passed through."""
    if isinstance(target, str):
        target = TranscriptionTarget.from_text(target)
    copies, draws = simulate_environment(adv, env, seed, example_id)
    hyps = transcribe_many(model, [c.samples for c in copies])
    wers = [wer(target.words, h) for h in hyps]
    return EvalRecord(
        example_id=uid or str(example_id),
        variant=variant,
        target_id=target_id,
        wer_to_target=float(np.mean(wers)),
        snr_db=snr,
        success_found=success_found,
        exact_match_rate=float(np.mean([h == target.text for h in hyps])),
        perceptual_loss=perceptual_loss,
        transcripts=hyps,
        rooms=[_room_log(d) for d in draws],
    )


def evaluate_attack(x: AudioClip, result: AttackResult, target, model: VictimModel,
                    env: Environment = Environment(), seed: int = 0, example_id: int = 0,
                    uid: str = "", variant: str = "", target_id: str = "") -> EvalRecord:
    """Mean target-WER over simulated copies of ``x + best_delta``."""
    return evaluate_adversarial(result.adversarial(x), target, model, env, seed, example_id, uid, variant,
                                target_id, result.snr_db, result.success_found, result.perceptual_loss)


def evaluate_corpus(records, successful_only: bool = False) -> list[dict]:
    """Aggregate per (variant, target): mean WER, mean SNR of successful attacks, rates.

    Means are taken in a fixed (sorted) order so the table does not depend on
    the order of ``records``.
    """
    groups = {}
    for r in records:
        groups.setdefault((r.variant, r.target_id), []).append(r)
    table = []
    for (variant, target_id), rs in sorted(groups.items()):
        rs = sorted(rs, key=lambda r: r.example_id)
        ok = [r for r in rs if r.success_found]
        pool = ok if successful_only else rs
        snrs = sorted(r.snr_db for r in ok if np.isfinite(r.snr_db))
        table.append({
            "variant": variant,
            "target": target_id,
            "n": len(rs),
            "n_evaluated": len(pool),
            "n_success": len(ok),
            "wer": _mean(sorted(r.wer_to_target for r in pool)),
            "snr_db": _mean(snrs),
            "success_pct": 100.0 * len(ok) / len(rs),
            "correct_pct": 100.0 * _mean(sorted(r.exact_match_rate for r in pool)) if pool else float("nan"),
            "perceptual_loss": _mean(sorted(r.perceptual_loss for r in ok)),
        })
    return table


def _mean(values) -> float:
    values = list(values)
    return float(np.sum(values) / len(values)) if values else float("nan")


def pooled(table, key: str = "wer", by: str = "variant", weight: str | None = None) -> dict:
    """Average a table column over targets.

    Rows are weighted by the number of examples behind the column: successful
    attacks for SNR and perceptual loss, evaluated attacks otherwise.
    """
    if weight is None:
        weight = "n_success" if key in ("snr_db", "perceptual_loss") else "n_evaluated"
    out = {}
    for row in table:
        if row[weight] and np.isfinite(row[key]):
            acc = out.setdefault(row[by], [0.0, 0])
            acc[0] += row[key] * row[weight]
            acc[1] += row[weight]
    return {k: s / n for k, (s, n) in sorted(out.items())}


# -- harnesses ----------------------------------------------------------------------

@dataclass(frozen=True)
class Task:
    uid: str
    index: int
    clip: AudioClip
    target_id: str
    target: str
    label: str  # variant / pool / interval name used in the table
    cfg: AttackConfig


def attack_seed(master: int, index: int, target_id: str) -> int:
    """Per-attack seed derived from the master seed, example index and target."""
    return int(np.random.SeedSequence([master, index, int.from_bytes(target_id.encode(), "little")])
               .generate_state(1)[0])


def _run_task(task: Task, model: VictimModel, env: Environment, eval_seed: int):
    result = run_attack(task.clip, task.target, model, task.cfg)
    record = evaluate_attack(task.clip, result, task.target, model, env, eval_seed, task.index,
                             task.uid, task.label, task.target_id)
    return record, result


def _worker(args):
    return _run_task(*args)


def run_tasks(tasks, model: VictimModel, env: Environment, eval_seed: int, jobs: int = 1,
              on_result=None):
    """Run attacks + evaluation; results come back in task order regardless of ``jobs``."""
    payload = [(t, model, env, eval_seed) for t in tasks]
    out = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            for task, res in zip(tasks, ex.map(_worker, payload)):
                out.append(res)
                if on_result:
                    on_result(task, *res)
    else:
        for task, args in zip(tasks, payload):
            res = _worker(args)
            out.append(res)
            if on_result:
                on_result(task, *res)
            log.info("%s %s %s: success=%s wer=%.1f", task.label, task.uid, task.target_id,
                     res[1].success_found, res[0].wer_to_target)
    return out


def run_table(utterances, targets: dict, variants, base: AttackConfig, model: VictimModel,
              env: Environment = Environment(), seed: int = 0, jobs: int = 1, on_result=None):
    """Every variant against every (clip, target) pair; returns the EvalRecords."""
    tasks = []
    for variant in variants:
        for tid, text in targets.items():
            for i, u in enumerate(utterances):
                cfg = replace(base, variant=variant, seed=attack_seed(seed, i, tid))
                tasks.append(Task(u.uid, i, u.clip, tid, text, variant, cfg))
    return [rec for rec, _ in run_tasks(tasks, model, env, seed, jobs, on_result)]


def interval_label(lo: float, hi: float) -> str:
    return f"[{lo:g},{hi:g}]"


def sweep_reverberation(utterances, target: str, intervals, base: AttackConfig, model: VictimModel,
                        true_rt60: float = 0.45, ranges: RoomRanges = RoomRanges(),
                        env: Environment = Environment(), seed: int = 0, jobs: int = 1,
                        target_id: str = "S1"):
    """Robust attacks trained on each rt60 interval, evaluated in rooms with rt60 = ``true_rt60``."""
    for lo, hi in intervals:
        if not 0.2 <= lo <= hi <= 0.8:
            raise ValueError(f"interval [{lo}, {hi}] outside [0.2, 0.8]")
    eval_env = replace(env, pool=replace(env.pool, ranges=ranges.with_rt60(true_rt60, true_rt60)))
    tasks = []
    for lo, hi in intervals:
        pool = RirPool.dynamic(ranges.with_rt60(lo, hi), absorption=base.rir_pool.absorption)
        for i, u in enumerate(utterances):
            cfg = replace(base, variant="robust", rir_pool=pool, seed=attack_seed(seed, i, target_id))
            tasks.append(Task(u.uid, i, u.clip, target_id, target, interval_label(lo, hi), cfg))
    records = [rec for rec, _ in run_tasks(tasks, model, eval_env, seed, jobs)]
    return records, _label_table(records, "interval", [interval_label(*iv) for iv in intervals])


POOL_SPECS = ("dynamic", "32-one-room", "32-various", "128-one-room", "128-various")


def build_pool(spec: str, ranges: RoomRanges, seed: int, absorption: str = "calibrated") -> RirPool:
    if spec == "dynamic":
        return RirPool.dynamic(ranges, absorption=absorption)
    size, _, mode = spec.partition("-")
    room_mode = {"one-room": ONE_ROOM, "various": VARIOUS_ROOMS}[mode]
    rng = np.random.default_rng([seed, int(size), 0 if room_mode == ONE_ROOM else 1])
    return RirPool.fixed(ranges, int(size), room_mode, rng, absorption=absorption)


def compare_pools(utterances, target: str, pool_specs, base: AttackConfig, model: VictimModel,
                  ranges: RoomRanges = RoomRanges(), env: Environment = Environment(), seed: int = 0,
                  jobs: int = 1, target_id: str = "S1"):
    """Robust attacks trained with each RIR pool; WER over successfully generated attacks only."""
    unknown = set(pool_specs) - set(POOL_SPECS)
    if unknown:
        raise ValueError(f"unknown pool specs {sorted(unknown)}")
    tasks = []
    for spec in pool_specs:
        pool = build_pool(spec, ranges, seed, base.rir_pool.absorption)
        for i, u in enumerate(utterances):
            cfg = replace(base, variant="robust", rir_pool=pool, seed=attack_seed(seed, i, target_id))
            tasks.append(Task(u.uid, i, u.clip, target_id, target, spec, cfg))
    records = [rec for rec, _ in run_tasks(tasks, model, env, seed, jobs)]
    return records, _label_table(records, "pool", list(pool_specs), successful_only=True)


def _label_table(records, column: str, order, successful_only: bool = False):
    rows = {r["variant"]: r for r in evaluate_corpus(records, successful_only)}
    table = []
    for label in order:
        r = dict(rows[label])
        r[column] = r.pop("variant")
        table.append(r)
    return table


# -- output -------------------------------------------------------------------------

RECORD_FIELDS = ("example_id", "variant", "target_id", "wer_to_target", "snr_db", "success_found",
                 "exact_match_rate", "perceptual_loss", "transcripts", "rooms")


def write_records(path, records):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RECORD_FIELDS)
        w.writeheader()
        for r in records:
            w.writerow(r.row())


def read_records(path) -> list[EvalRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(EvalRecord(
                example_id=row["example_id"], variant=row["variant"], target_id=row["target_id"],
                wer_to_target=float(row["wer_to_target"]), snr_db=float(row["snr_db"]),
                success_found=row["success_found"] == "True",
                exact_match_rate=float(row["exact_match_rate"]),
                perceptual_loss=float(row["perceptual_loss"]),
                transcripts=row["transcripts"].split(" | ") if row["transcripts"] else [],
                rooms=json.loads(row["rooms"]) if row["rooms"] else [],
            ))
    return out


def write_table(path, table, columns=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = columns or list(table[0])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in table:
            w.writerow([f"{row[c]:.4f}" if isinstance(row[c], float) else row[c] for c in columns])
