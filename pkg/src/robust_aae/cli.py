"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure (including missing files), 2 usage
error, 3 invalid configuration. Every command writes ``run_config.txt`` with
the fully resolved settings next to its outputs; feeding that file back with
``--config`` reproduces the run.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as C
from .asr.corpus import Utterance, load_directory, synthetic_corpus
from .asr.model import VictimModel
from .asr.train import TrainingError, train
from .asr.vocab import TranscriptionTarget
from .attack import run_attack, write_trace
from .audio import AudioClip, read_wav, write_grid_csv, write_wav
from .desk import attack_clips
from .evaluation import (
    TARGETS, attack_seed, compare_pools, evaluate_adversarial, evaluate_corpus, pooled, read_records,
    run_table, sweep_reverberation, write_records, write_table,
)
from .psychoacoustic import compute_threshold_grid, masker_rows, perceptual_loss
from .rir import DecayRangeError, generate_rir, measure_rt60, sample_room, save_rir

log = logging.getLogger("robust_aae")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE, EXIT_CONFIG = 0, 1, 2, 3
RUN_CONFIG = "run_config.txt"


class UsageError(Exception):
    pass


def _json(path: Path, data):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _load_model(cfg) -> VictimModel:
    if not cfg["model"]:
        raise UsageError("a model checkpoint is required (--model or model = ... in the config)")
    path = Path(cfg["model"])
    if not path.is_file():
        raise FileNotFoundError(f"model checkpoint not found: {path}")
    return VictimModel.load(path)


def _target(cfg):
    """``(target_id, text)``; ids S1-S4 name the bundled phrases."""
    text = cfg["attack.target"]
    if text in TARGETS:
        return text, TARGETS[text]
    text = TranscriptionTarget.from_text(text).text
    ids = {v: k for k, v in TARGETS.items()}
    return ids.get(text, "custom"), text


# -- commands ------------------------------------------------------------------------------

def cmd_train_victim(cfg, out: Path, jobs: int):
    if cfg["data.dir"]:
        data = load_directory(cfg["data.dir"])
    else:
        data = synthetic_corpus(cfg["data.n_train"], cfg["data.train_seed"])
    try:
        model, report = train(data, C.train_config(cfg), check=cfg["train.check"])
    except TrainingError as err:
        _json(out / "train_report.json", err.report)
        raise
    model.save(out / "model.npz")
    _json(out / "train_report.json", report)
    print(f"held-out WER {report['held_out_wer']}  train WER {report['train_wer']:.2f}  -> {out / 'model.npz'}")


def _attack_inputs(args):
    items = []
    if args.manifest:
        manifest = Path(args.manifest)
        if not manifest.is_file():
            raise FileNotFoundError(f"manifest not found: {manifest}")
        for line in manifest.read_text().splitlines():
            line = line.strip()
            if line and not line.startswith("#"):
                items.append(manifest.parent / line.split("\t")[0])
    items += [Path(p) for p in args.inputs]
    if not items:
        raise UsageError("no input audio: pass WAV paths or --manifest")
    return items


def cmd_attack(cfg, out: Path, jobs: int, args):
    model = _load_model(cfg)
    target_id, text = _target(cfg)
    base = C.attack_config(cfg)
    for index, path in enumerate(_attack_inputs(args)):
        clip = read_wav(path)
        attack_cfg = replace(base, seed=attack_seed(cfg["seed"], index, target_id))
        result = run_attack(clip, text, model, attack_cfg)
        stem = out / path.stem
        write_wav(stem.with_suffix(".adv.wav"), result.adversarial(clip))
        write_wav(stem.with_suffix(".delta.wav"), AudioClip(result.best_delta, clip.sample_rate))
        write_trace(stem.with_suffix(".trace.csv"), result)
        summary = result.summary()
        summary.update(input=str(path), example_id=path.stem, index=index, variant=attack_cfg.variant,
                       target=text, target_id=target_id, seed=attack_cfg.seed)
        _json(stem.with_suffix(".json"), summary)
        print(f"{path.stem}: success={result.success_found} iterations={result.iterations_run} "
              f"snr={result.snr_db:.2f} dB transcript={result.transcript_clean!r}")


def _experiment_clips(cfg, model):
    if cfg["data.dir"]:
        utts = load_directory(cfg["data.dir"])
        return [Utterance(u.clip, u.text, u.uid) for u in utts[:cfg["data.n_attack"]]]
    return attack_clips(model, C.desk_config(cfg))


def cmd_simulate_eval(cfg, out: Path, jobs: int, args):
    model = _load_model(cfg)
    env = C.environment(cfg)
    if bool(args.attacks) == bool(args.experiment):
        raise UsageError("give exactly one of --attacks DIR or --experiment NAME")
    if args.attacks:
        records = _evaluate_attack_dir(Path(args.attacks), model, env, cfg["seed"])
        table = evaluate_corpus(records)
    else:
        clips = _experiment_clips(cfg, model)
        base = C.attack_config(cfg)
        if args.experiment == "variants":
            unknown = set(cfg["experiment.targets"]) - set(TARGETS)
            if unknown:
                raise C.ConfigError(f"unknown target ids {sorted(unknown)}")
            targets = {k: TARGETS[k] for k in cfg["experiment.targets"]}
            records = run_table(clips, targets, cfg["experiment.variants"], base, model, env,
                                cfg["seed"], jobs)
            table = evaluate_corpus(records)
        else:
            target_id, text = _target(cfg)
            ranges = C.room_ranges(cfg)
            if args.experiment == "reverb":
                records, table = sweep_reverberation(clips, text, cfg["experiment.intervals"], base, model,
                                                     cfg["experiment.true_rt60"], ranges, env, cfg["seed"],
                                                     jobs, target_id)
            else:
                records, table = compare_pools(clips, text, cfg["experiment.pools"], base, model, ranges,
                                               env, cfg["seed"], jobs, target_id)
    write_records(out / "records.csv", records)
    write_table(out / "table.csv", table)
    _json(out / "summary.json", {"table": table, "mean_wer": pooled(table)})
    _print_table(table)


def _evaluate_attack_dir(directory: Path, model, env, seed):
    if not directory.is_dir():
        raise FileNotFoundError(f"attack directory not found: {directory}")
    metas = sorted(directory.glob("*.json"))
    records = []
    for meta_path in metas:
        meta = json.loads(meta_path.read_text())
        if "target" not in meta:
            continue
        adv = read_wav(meta_path.with_suffix(".adv.wav"))
        records.append(evaluate_adversarial(
            adv, meta["target"], model, env, seed, meta["index"], meta["example_id"], meta["variant"],
            meta["target_id"], float(meta["snr_db"]), meta["success_found"], float(meta["perceptual_loss"])))
    if not records:
        raise FileNotFoundError(f"no attack results in {directory}")
    return records


def cmd_rir_gen(cfg, out: Path, jobs: int, args):
    if args.count < 1:
        raise UsageError("--count must be positive")
    ranges = C.room_ranges(cfg)
    rng = np.random.default_rng([cfg["seed"], 0x7212])
    rows = []
    for i in range(args.count):
        room = sample_room(ranges, rng)
        rir = generate_rir(room, absorption=cfg["rooms.absorption"])
        save_rir(out / f"rir_{i:04d}.wav", rir)
        try:
            measured = measure_rt60(rir)
        except DecayRangeError:
            measured = float("nan")
        rows.append([i, *room.dims, room.rt60, measured, room.distance, len(rir)])
    write_grid_csv(out / "rirs.csv", np.array(rows),
                   ["index", "length_m", "width_m", "height_m", "rt60", "measured_rt60", "distance_m", "taps"],
                   fmt="%.6g")
    print(f"wrote {args.count} responses to {out}")


def cmd_mask_analyze(cfg, out: Path, jobs: int, args):
    clip = read_wav(args.input)
    grid = compute_threshold_grid(clip)
    write_grid_csv(out / "thresholds.csv", grid.thresholds)
    rows = masker_rows(grid)
    with open(out / "maskers.csv", "w") as fh:
        fh.write("frame,bin,hz,bark,kind,spl_db\n")
        for r in rows:
            fh.write(",".join(f"{v:.6g}" if isinstance(v, float) else str(v) for v in r) + "\n")
    summary = {
        "input": str(args.input),
        "frames": grid.n_frames,
        "bins": int(grid.thresholds.shape[1]),
        "offset_db": grid.offset_db,
        "tonal_maskers": sum(r[4] == "tonal" for r in rows),
        "noise_maskers": sum(r[4] == "noise" for r in rows),
    }
    if args.delta:
        delta = read_wav(args.delta)
        if len(delta) != len(clip):
            raise UsageError("--delta must have the same length as the input")
        summary["perceptual_loss"] = perceptual_loss(delta.samples, grid, cfg["attack.perceptual_mode"])
    _json(out / "mask_summary.json", summary)
    print(json.dumps(summary, sort_keys=True))


def cmd_report(cfg, out: Path, jobs: int, args):
    root = Path(args.results)
    files = sorted(root.rglob("records.csv")) if root.is_dir() else []
    records = [r for f in files for r in read_records(f)]
    if not records:
        raise FileNotFoundError(f"no records found under {root}")
    table = evaluate_corpus(records)
    write_table(out / "report.csv", table)
    _json(out / "report.json", {"sources": [str(f) for f in files], "table": table,
                                "mean_wer": pooled(table), "success_pct": pooled(table, "success_pct")})
    _print_table(table)


def _print_table(table):
    cols = [c for c in table[0] if c not in ("n_evaluated",)]
    print("  ".join(f"{c:>14}" for c in cols))
    for row in table:
        print("  ".join(f"{row[c]:>14.2f}" if isinstance(row[c], float) else f"{row[c]!s:>14}" for c in cols))


# -- parser ------------------------------------------------------------------------------

COMMANDS = {
    "train-victim": cmd_train_victim,
    "attack": cmd_attack,
    "simulate-eval": cmd_simulate_eval,
    "rir-gen": cmd_rir_gen,
    "mask-analyze": cmd_mask_analyze,
    "report": cmd_report,
}

# flag -> config key, shared by the commands that accept them
FLAG_KEYS = {
    "model": "model", "seed": "seed", "variant": "attack.variant", "target": "attack.target",
    "iterations": "attack.min_iterations", "data": "data.dir", "epochs": "train.epochs",
    "n_train": "data.n_train", "n_attack": "data.n_attack", "pool": "rooms.pool",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", action="append", default=[], metavar="FILE",
                        help="key = value config file (repeatable, later files win)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", dest="overrides",
                        help="override one config value (repeatable)")
    common.add_argument("--output", "-o", help=f"output directory (default ${C.OUTPUT_ENV} or ./{C.DEFAULT_OUTPUT})")
    common.add_argument("--jobs", "-j", type=int, default=1, help="worker processes for experiment harnesses")
    common.add_argument("--seed", type=int)
    common.add_argument("--verbose", "-v", action="store_true")

    parser = argparse.ArgumentParser(prog="robust-aae", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("train-victim", parents=[common], help="train the victim recognizer")
    p.add_argument("--data", help="directory with manifest.tsv or wav+txt pairs (default: synthetic corpus)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--n-train", type=int)

    p = sub.add_parser("attack", parents=[common], help="craft adversarial examples")
    p.add_argument("inputs", nargs="*", help="input WAV files")
    p.add_argument("--manifest", help="text file listing WAV paths (first tab-separated column)")
    p.add_argument("--model")
    p.add_argument("--variant", choices=("base", "robust", "psychoacoustic", "combined"))
    p.add_argument("--target", help="target phrase or bundled id S1-S4")
    p.add_argument("--iterations", type=int, help="minimum number of iterations")
    p.add_argument("--pool", help="RIR pool: dynamic, 32-one-room, 32-various, 128-one-room, 128-various")

    p = sub.add_parser("simulate-eval", parents=[common], help="evaluate attacks in simulated rooms")
    p.add_argument("--model")
    p.add_argument("--attacks", help="directory written by the attack command")
    p.add_argument("--experiment", choices=("variants", "reverb", "pools"),
                   help="run a full experiment on the desk corpus")
    p.add_argument("--data")
    p.add_argument("--n-attack", type=int, help="number of clips to attack")
    p.add_argument("--iterations", type=int)
    p.add_argument("--target")

    p = sub.add_parser("rir-gen", parents=[common], help="sample rooms and write impulse responses")
    p.add_argument("--count", type=int, default=10)

    p = sub.add_parser("mask-analyze", parents=[common], help="masking thresholds of a WAV file")
    p.add_argument("input")
    p.add_argument("--delta", help="perturbation WAV to score against the thresholds")

    p = sub.add_parser("report", parents=[common], help="aggregate records.csv files into one table")
    p.add_argument("results", nargs="?", help="results directory (default: output root)")
    return parser


def resolve_config(args) -> dict:
    cfg = C.resolve(args.config, args.overrides)
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            cfg[key] = value
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return err.code if isinstance(err.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = C.output_root(args.output)
    if args.command == "report" and args.results is None:
        args.results = str(out)
    try:
        cfg = resolve_config(args)
        if args.jobs < 1:
            raise UsageError("--jobs must be at least 1")
        C.write_config(out / RUN_CONFIG, cfg)
        handler = COMMANDS[args.command]
        if args.command == "train-victim":
            handler(cfg, out, args.jobs)
        else:
            handler(cfg, out, args.jobs, args)
    except UsageError as err:
        parser.print_usage(sys.stderr)
        print(f"robust-aae: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except C.ConfigError as err:
        print(f"robust-aae: invalid config: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError, RuntimeError) as err:
        print(f"robust-aae: error: {err}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
