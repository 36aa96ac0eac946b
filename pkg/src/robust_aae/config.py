"""Flat ``section.key = value`` run configuration.

Every knob the command line exposes lives in one dictionary so that a run can
be written next to its outputs and replayed exactly. Values are parsed against
the type of their default; ``none`` clears optional values.
"""

from __future__ import annotations

import os
from pathlib import Path

from .asr.train import TrainConfig
from .attack import AttackConfig
from .desk import DeskConfig
from .evaluation import POOL_SPECS, TARGETS, Environment, build_pool
from .rir import RirPool, RoomRanges

OUTPUT_ENV = "ROBUST_AAE_OUTPUT"
DEFAULT_OUTPUT = "robust-aae-output"


class ConfigError(ValueError):
    """Unknown key, unparsable value or inconsistent settings."""


def _floats(text):
    return tuple(float(v) for v in text.split(","))


def _optional(parse):
    def inner(text):
        return None if text.lower() in ("none", "auto", "") else parse(text)
    return inner


def _bool(text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _names(text):
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _intervals(text):
    out = []
    for part in _names(text):
        lo, _, hi = part.partition("-")
        out.append((float(lo), float(hi or lo)))
    return tuple(out)


_attack, _room, _train, _desk, _env = AttackConfig(), RoomRanges(), TrainConfig(), DeskConfig(), Environment()

# key -> (default, parser)
FIELDS = {
    "seed": (0, int),
    "model": ("", str),
    "attack.variant": (_attack.variant, str),
    "attack.target": (TARGETS["S1"], str),
    "attack.epsilon": (_attack.epsilon, _optional(float)),
    "attack.snr_floor_db": (_attack.snr_floor_db, float),
    "attack.learning_rate": (_attack.learning_rate, _optional(float)),
    "attack.min_iterations": (_attack.min_iterations, int),
    "attack.max_iterations": (_attack.max_iterations, _optional(int)),
    "attack.alpha_init": (_attack.alpha_init, float),
    "attack.alpha_factor": (_attack.alpha_factor, float),
    "attack.inc_streak": (_attack.inc_streak, int),
    "attack.dec_streak": (_attack.dec_streak, int),
    "attack.eot_copies": (_attack.eot_copies, int),
    "attack.success_votes": (_attack.success_votes, int),
    "attack.noise_sigma": (_attack.noise_sigma, float),
    "attack.max_offset": (_attack.max_offset, int),
    "attack.ref_length": (_attack.ref_length, int),
    "attack.perceptual_mode": (_attack.perceptual_mode, str),
    "rooms.pool": ("dynamic", str),
    "rooms.absorption": ("calibrated", str),
    "rooms.dims_min": (_room.dims_min, _floats),
    "rooms.dims_max": (_room.dims_max, _floats),
    "rooms.rt60_min": (_room.rt60[0], float),
    "rooms.rt60_max": (_room.rt60[1], float),
    "rooms.clearance": (_room.clearance, float),
    "rooms.min_distance": (_room.min_distance, float),
    "eval.n_transforms": (_env.n_transforms, int),
    "eval.noise_sigma": (_env.noise_sigma, float),
    "eval.max_offset": (_env.max_offset, int),
    "train.hidden": (_train.hidden, int),
    "train.epochs": (_desk.epochs, int),
    "train.batch_size": (_train.batch_size, int),
    "train.learning_rate": (_train.learning_rate, float),
    "train.momentum": (_train.momentum, float),
    "train.lr_decay": (_train.lr_decay, float),
    "train.clip_norm": (_train.clip_norm, float),
    "train.gain_range": (_train.gain_range, _floats),
    "train.held_out": (_train.held_out, float),
    "train.max_wer": (_train.max_wer, float),
    "train.check": (True, _bool),
    "data.dir": ("", str),
    "data.n_train": (_desk.n_train, int),
    "data.train_seed": (_desk.train_seed, int),
    "data.n_attack": (_desk.n_attack, int),
    "data.attack_seed": (_desk.attack_seed, int),
    "data.min_attack_seconds": (_desk.min_attack_seconds, float),
    "experiment.targets": (tuple(TARGETS), _names),
    "experiment.variants": (("base", "robust", "psychoacoustic", "combined"), _names),
    "experiment.pools": (POOL_SPECS, _names),
    "experiment.intervals": (((0.2, 0.5), (0.4, 0.8), (0.2, 0.3), (0.3, 0.4), (0.4, 0.5)), _intervals),
    "experiment.true_rt60": (0.45, float),
}


def defaults() -> dict:
    return {k: v for k, (v, _) in FIELDS.items()}


def parse_value(key: str, text: str):
    if key not in FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        return FIELDS[key][1](text.strip())
    except ValueError as err:
        raise ConfigError(f"bad value for {key}: {text.strip()!r} ({err})") from None


def parse_assignment(line: str):
    key, sep, value = line.partition("=")
    if not sep:
        raise ConfigError(f"expected key = value, got {line.strip()!r}")
    key = key.strip()
    return key, parse_value(key, value)


def read_config(path) -> dict:
    """Assignments from a config file; comments start with ``#``."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    out = {}
    for n, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            key, value = parse_assignment(line)
        except ConfigError as err:
            raise ConfigError(f"{path}:{n}: {err}") from None
        out[key] = value
    return out


def format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ",".join(f"{lo!r}-{hi!r}" for lo, hi in value)
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def dump_config(cfg: dict) -> str:
    lines = []
    section = None
    for key in sorted(cfg, key=lambda k: (k.count("."), k)):
        head = key.split(".")[0] if "." in key else ""
        if head != section:
            if lines:
                lines.append("")
            section = head
        lines.append(f"{key} = {format_value(cfg[key])}")
    return "\n".join(lines) + "\n"


def write_config(path, cfg: dict):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_config(cfg))


def resolve(files=(), overrides=()) -> dict:
    """Defaults, then each config file in order, then ``key=value`` overrides."""
    cfg = defaults()
    for f in files:
        cfg.update(read_config(f))
    for item in overrides:
        key, value = parse_assignment(item)
        cfg[key] = value
    return cfg


def output_root(explicit=None) -> Path:
    return Path(explicit or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)


# -- builders ---------------------------------------------------------------------------

def room_ranges(cfg: dict) -> RoomRanges:
    try:
        return RoomRanges(dims_min=cfg["rooms.dims_min"], dims_max=cfg["rooms.dims_max"],
                          rt60=(cfg["rooms.rt60_min"], cfg["rooms.rt60_max"]),
                          clearance=cfg["rooms.clearance"], min_distance=cfg["rooms.min_distance"])
    except ValueError as err:
        raise ConfigError(f"invalid room ranges: {err}") from None


def rir_pool(cfg: dict):
    spec = cfg["rooms.pool"]
    if spec not in POOL_SPECS:
        raise ConfigError(f"rooms.pool must be one of {POOL_SPECS}, got {spec!r}")
    if cfg["rooms.absorption"] not in ("calibrated", "sabine", "eyring"):
        raise ConfigError(f"unknown absorption model {cfg['rooms.absorption']!r}")
    return build_pool(spec, room_ranges(cfg), cfg["seed"], cfg["rooms.absorption"])


def attack_config(cfg: dict, pool=None) -> AttackConfig:
    kw = {k.split(".", 1)[1]: v for k, v in cfg.items()
          if k.startswith("attack.") and k != "attack.target"}
    try:
        return AttackConfig(rir_pool=pool if pool is not None else rir_pool(cfg), seed=cfg["seed"], **kw)
    except ValueError as err:
        raise ConfigError(f"invalid attack settings: {err}") from None


def environment(cfg: dict) -> Environment:
    if cfg["eval.n_transforms"] < 1:
        raise ConfigError("eval.n_transforms must be at least 1")
    pool = RirPool.dynamic(room_ranges(cfg), absorption=cfg["rooms.absorption"])
    return Environment(pool, cfg["eval.noise_sigma"], cfg["eval.max_offset"], cfg["eval.n_transforms"])


def train_config(cfg: dict) -> TrainConfig:
    kw = {k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith("train.") and k != "train.check"}
    if not 0 <= kw["held_out"] < 1:
        raise ConfigError("train.held_out must lie in [0, 1)")
    return TrainConfig(seed=cfg["data.train_seed"], **kw)


def desk_config(cfg: dict) -> DeskConfig:
    return DeskConfig(n_train=cfg["data.n_train"], epochs=cfg["train.epochs"], n_attack=cfg["data.n_attack"],
                      min_attack_seconds=cfg["data.min_attack_seconds"], train_seed=cfg["data.train_seed"],
                      attack_seed=cfg["data.attack_seed"])
