"""Room sampling and image-source room impulse responses.

A shoebox room with uniform wall absorption is fully described by its
dimensions, the source/listener positions and a target reverberation time;
``generate_rir`` turns that description into a peak-normalized FIR filter.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from numba import njit
from scipy.signal import butter, sosfilt

from .audio import AudioClip, read_wav, write_wav

SPEED_OF_SOUND = 343.0
SINC_TAPS = 8
_SINC_PHASES = 512


class RoomSamplingError(RuntimeError):
    """The configured ranges admit no valid source/listener placement."""


class DecayRangeError(ValueError):
    """The impulse response does not decay far enough for an RT60 fit."""


@dataclass(frozen=True)
class RoomConfig:
    dims: tuple
    source_pos: tuple
    listener_pos: tuple
    rt60: float

    def __post_init__(self):
        for name in ("dims", "source_pos", "listener_pos"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        object.__setattr__(self, "rt60", float(self.rt60))

    @property
    def volume(self) -> float:
        x, y, z = self.dims
        return x * y * z

    @property
    def surface(self) -> float:
        x, y, z = self.dims
        return 2.0 * (x * y + x * z + y * z)

    @property
    def distance(self) -> float:
        return float(np.linalg.norm(np.subtract(self.source_pos, self.listener_pos)))

    def clearance(self) -> float:
        """Smallest distance from either position to a wall."""
        d = np.array(self.dims)
        pts = np.array([self.source_pos, self.listener_pos])
        return float(np.min(np.minimum(pts, d - pts)))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RoomConfig":
        return cls(tuple(data["dims"]), tuple(data["source_pos"]), tuple(data["listener_pos"]), data["rt60"])


@dataclass(frozen=True)
class RoomRanges:
    """Uniform sampling ranges. Position boxes default to the whole room."""

    dims_min: tuple = (3.0, 3.0, 2.5)
    dims_max: tuple = (8.0, 6.0, 3.5)
    rt60: tuple = (0.2, 0.8)
    source_box: tuple | None = None  # ((x0, y0, z0), (x1, y1, z1))
    listener_box: tuple | None = None
    clearance: float = 0.1
    min_distance: float = 0.5

    def __post_init__(self):
        lo, hi = self.rt60
        if not 0 < lo <= hi:
            raise ValueError(f"invalid rt60 range {self.rt60}")
        if any(a > b or a <= 2 * self.clearance for a, b in zip(self.dims_min, self.dims_max)):
            raise ValueError(f"invalid room dimension range {self.dims_min}..{self.dims_max}")

    def with_rt60(self, lo: float, hi: float) -> "RoomRanges":
        return RoomRanges(self.dims_min, self.dims_max, (lo, hi), self.source_box,
                          self.listener_box, self.clearance, self.min_distance)


@dataclass(frozen=True)
class Rir:
    taps: np.ndarray
    sample_rate: int = 16000
    config: RoomConfig | None = field(default=None, compare=False)

    def __len__(self):
        return self.taps.shape[0]


def identity_rir(sample_rate: int = 16000) -> Rir:
    return Rir(np.array([1.0]), sample_rate)


def _sample_point(rng, dims, box, clearance):
    if box is None:
        lo = np.full(3, clearance)
        hi = np.asarray(dims) - clearance
    else:
        lo, hi = np.asarray(box[0], float), np.asarray(box[1], float)
    return rng.uniform(lo, hi)


def sample_room(ranges: RoomRanges, rng: np.random.Generator, max_tries: int = 1000) -> RoomConfig:
    """Draw dims, rt60 and positions uniformly; positions are re-drawn until valid."""
    dims = rng.uniform(ranges.dims_min, ranges.dims_max)
    rt60 = rng.uniform(*ranges.rt60)
    for _ in range(max_tries):
        src = _sample_point(rng, dims, ranges.source_box, ranges.clearance)
        lis = _sample_point(rng, dims, ranges.listener_box, ranges.clearance)
        cfg = RoomConfig(tuple(dims), tuple(src), tuple(lis), rt60)
        if cfg.clearance() >= ranges.clearance - 1e-12 and cfg.distance >= ranges.min_distance:
            return cfg
    raise RoomSamplingError(f"no valid placement found in {max_tries} tries for {ranges}")


def _octant_directions(n: int = 512) -> np.ndarray:
    """Roughly uniform unit vectors in the positive octant (Fibonacci lattice)."""
    i = np.arange(n) + 0.5
    z = i / n
    phi = i * math.pi * (3.0 - math.sqrt(5.0))
    r = np.sqrt(1.0 - z * z)
    return np.abs(np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1))


_DIRECTIONS = _octant_directions(256)


def _fit_rt60(edc_db: np.ndarray, dt: float, fit_range=(-5.0, -35.0)) -> float:
    hi, lo = fit_range
    idx = np.nonzero((edc_db <= hi) & (edc_db >= lo))[0]
    slope, _ = np.polyfit(idx * dt, edc_db[idx], 1)
    return -60.0 / slope


def _calibrated_decay(cfg: RoomConfig, c: float) -> float:
    """Per-reflection energy decay ``g = -ln(1 - alpha)`` matching the target RT60.

    In a shoebox with uniform walls the image-source tail is a mixture of
    exponentials, one per travel direction, each decaying with the number of
    walls that direction hits per second. Grazing directions dominate late
    energy, so diffuse-field formulas underestimate the decay time. The target
    is met by fitting the same Schroeder window to this mixture and rescaling g.
    """
    hits = c * (_DIRECTIONS @ (1.0 / np.asarray(cfg.dims)))  # reflections per second
    dt = 2e-3
    t0 = cfg.distance / c
    t = np.arange(t0, t0 + cfg.rt60, dt)
    # images fill space with density 1/V, so reflected power arrives at c/(4 pi V)
    rate = c / (4.0 * math.pi * cfg.volume) * dt
    direct = 1.0 / (4.0 * math.pi * cfg.distance) ** 2
    g = math.log(1e6) / (cfg.rt60 * hits.mean())  # Eyring starting point
    for _ in range(4):
        env = rate * np.exp(-g * np.outer(t, hits)).mean(axis=1)
        env[0] += direct
        edc = np.cumsum(env[::-1])[::-1]
        g *= _fit_rt60(10.0 * np.log10(edc / edc[0]), dt) / cfg.rt60
    return g


def wall_absorption(cfg: RoomConfig, model: str = "calibrated", c: float = SPEED_OF_SOUND) -> float:
    """Uniform absorption coefficient meant to reproduce ``cfg.rt60``.

    ``sabine`` and ``eyring`` are the textbook diffuse-field inversions;
    ``calibrated`` accounts for the non-diffuse decay of the image model.
    """
    ratio = 0.161 * cfg.volume / (cfg.surface * cfg.rt60)
    if model == "sabine":
        alpha = ratio
    elif model == "eyring":
        alpha = 1.0 - math.exp(-ratio)
    elif model == "calibrated":
        alpha = 1.0 - math.exp(-_calibrated_decay(cfg, c))
    else:
        raise ValueError(f"unknown absorption model {model!r}")
    return min(max(alpha, 1e-9), 1.0 - 1e-9)


def _sinc_table(phases: int = _SINC_PHASES) -> np.ndarray:
    """Hann-windowed sinc taps for delays ``i0 + p/phases``; tap j sits at ``i0 - 3 + j``."""
    frac = np.arange(phases)[:, None] / phases
    x = np.arange(-3, 5)[None, :] - frac
    window = np.where(np.abs(x) < 4, 0.5 * (1.0 + np.cos(np.pi * x / 4)), 0.0)
    return np.sinc(x) * window


_TABLE = _sinc_table()


@njit(cache=True, fastmath=True)
def _image_source(src, lis, dims, beta, fs, c, n_taps, table, first_tap):
    out = np.zeros(n_taps)
    phases = table.shape[0]
    max_dist = (n_taps - 5) * c / fs
    max_d2 = max_dist * max_dist
    nx = int(max_dist / (2.0 * dims[0])) + 2
    ny = int(max_dist / (2.0 * dims[1])) + 2
    nz = int(max_dist / (2.0 * dims[2])) + 2
    bpow = np.empty(2 * (nx + ny + nz) + 8)
    bpow[0] = 1.0
    for i in range(1, bpow.shape[0]):
        bpow[i] = bpow[i - 1] * beta
    scale = fs / c
    for mx in range(-nx, nx + 1):
        for qx in range(2):
            dx = (1 - 2 * qx) * src[0] + 2 * mx * dims[0] - lis[0]
            dx2 = dx * dx
            if dx2 > max_d2:
                continue
            rx = abs(mx - qx) + abs(mx)
            for my in range(-ny, ny + 1):
                for qy in range(2):
                    dy = (1 - 2 * qy) * src[1] + 2 * my * dims[1] - lis[1]
                    dxy2 = dx2 + dy * dy
                    if dxy2 > max_d2:
                        continue
                    rxy = rx + abs(my - qy) + abs(my)
                    # only image z-positions inside the sphere of radius max_dist
                    reach = math.sqrt(max_d2 - dxy2)
                    for qz in range(2):
                        zs = (1 - 2 * qz) * src[2] - lis[2]
                        lo = int(math.ceil((-reach - zs) / (2.0 * dims[2])))
                        hi = int(math.floor((reach - zs) / (2.0 * dims[2])))
                        for mz in range(lo, hi + 1):
                            dz = zs + 2 * mz * dims[2]
                            d = math.sqrt(dxy2 + dz * dz)
                            amp = bpow[rxy + abs(mz - qz) + abs(mz)] / (4.0 * math.pi * d)
                            tau = d * scale
                            i0 = int(tau)
                            p = int((tau - i0) * phases + 0.5)
                            if p == phases:
                                i0 += 1
                                p = 0
                            base = i0 - 3
                            if base >= first_tap and base + 8 <= n_taps:
                                for j in range(8):
                                    out[base + j] += amp * table[p, j]
                            else:
                                for j in range(8):
                                    n = base + j
                                    if n >= first_tap and n < n_taps:
                                        out[n] += amp * table[p, j]
    return out


@lru_cache(maxsize=8)
def _highpass(cutoff: float, sample_rate: int) -> np.ndarray:
    return butter(2, cutoff, btype="high", fs=sample_rate, output="sos")


def rir_length(cfg: RoomConfig, sample_rate: int = 16000, c: float = SPEED_OF_SOUND) -> int:
    """Direct-path delay plus one full RT60 of decay, plus interpolator headroom."""
    return int(math.ceil((cfg.distance / c + cfg.rt60) * sample_rate)) + SINC_TAPS


def generate_rir(cfg: RoomConfig, sample_rate: int = 16000, absorption: str = "calibrated",
                 c: float = SPEED_OF_SOUND, highpass_hz: float | None = 100.0) -> Rir:
    """Image-source impulse response, peak-normalized to 1.

    Every image is placed with an 8-tap windowed-sinc fractional delay. Taps
    earlier than one sample before the direct-path arrival are left empty so
    the response stays causal with respect to the direct sound.
    """
    alpha = wall_absorption(cfg, absorption, c)
    beta = math.sqrt(1.0 - alpha)
    n_taps = rir_length(cfg, sample_rate, c)
    direct = cfg.distance * sample_rate / c
    first_tap = max(int(math.ceil(direct)) - 1, 0)
    taps = _image_source(np.asarray(cfg.source_pos), np.asarray(cfg.listener_pos),
                         np.asarray(cfg.dims), beta, float(sample_rate), float(c),
                         n_taps, _TABLE, first_tap)
    if highpass_hz:
        taps = sosfilt(_highpass(highpass_hz, sample_rate), taps)
    taps /= np.max(np.abs(taps))
    return Rir(taps, sample_rate, cfg)


def energy_decay_curve_db(taps: np.ndarray) -> np.ndarray:
    """Schroeder backward integral in dB relative to the total energy."""
    energy = np.asarray(taps, dtype=np.float64) ** 2
    edc = np.cumsum(energy[::-1])[::-1]
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(edc / edc[0])


def measure_rt60(rir: Rir, fit_range=(-5.0, -35.0), min_range_db: float = 60.0) -> float:
    """RT60 from a line fit to the -5..-35 dB part of the Schroeder curve."""
    taps = np.asarray(rir.taps, dtype=np.float64)
    if not np.any(taps):
        raise DecayRangeError("insufficient decay range: all-zero response")
    edc = energy_decay_curve_db(taps)
    finite = edc[np.isfinite(edc)]
    if -finite.min() < min_range_db:
        raise DecayRangeError(
            f"insufficient decay range: {-finite.min():.1f} dB < {min_range_db:.0f} dB")
    hi, lo = fit_range
    idx = np.nonzero((edc <= hi) & (edc >= lo))[0]
    if idx.size < 3:
        raise DecayRangeError("insufficient decay range: too few samples in the fit window")
    t = idx / rir.sample_rate
    slope, _ = np.polyfit(t, edc[idx], 1)
    if slope >= 0:
        raise DecayRangeError("insufficient decay range: energy curve does not decay")
    return float(-60.0 / slope)


# -- pools ------------------------------------------------------------------

DYNAMIC = "dynamic"
FIXED = "fixed"
ONE_ROOM = "one-room"
VARIOUS_ROOMS = "various-rooms"


@dataclass(frozen=True)
class RirPool:
    mode: str
    ranges: RoomRanges = RoomRanges()
    rirs: tuple = ()
    room_mode: str = VARIOUS_ROOMS
    sample_rate: int = 16000
    absorption: str = "calibrated"

    @property
    def size(self):
        return len(self.rirs) if self.mode == FIXED else None

    @classmethod
    def dynamic(cls, ranges: RoomRanges = RoomRanges(), sample_rate: int = 16000,
                absorption: str = "calibrated") -> "RirPool":
        return cls(DYNAMIC, ranges, (), VARIOUS_ROOMS, sample_rate, absorption)

    @classmethod
    def fixed(cls, ranges: RoomRanges, size: int, room_mode: str, rng: np.random.Generator,
              sample_rate: int = 16000, absorption: str = "calibrated") -> "RirPool":
        """Pre-generate ``size`` responses, either all in one room or each in its own."""
        if room_mode not in (ONE_ROOM, VARIOUS_ROOMS):
            raise ValueError(f"unknown room mode {room_mode!r}")
        if room_mode == ONE_ROOM:
            room = sample_room(ranges, rng)
            lo_hi = tuple(zip(room.dims, room.dims))
            ranges = RoomRanges(tuple(a for a, _ in lo_hi), tuple(b for _, b in lo_hi),
                                (room.rt60, room.rt60), ranges.source_box, ranges.listener_box,
                                ranges.clearance, ranges.min_distance)
        rirs = tuple(generate_rir(sample_room(ranges, rng), sample_rate, absorption) for _ in range(size))
        return cls(FIXED, ranges, rirs, room_mode, sample_rate, absorption)

    @classmethod
    def from_rirs(cls, rirs, room_mode: str = VARIOUS_ROOMS) -> "RirPool":
        rirs = tuple(rirs)
        rate = rirs[0].sample_rate if rirs else 16000
        return cls(FIXED, RoomRanges(), rirs, room_mode, rate)


def draw(pool: RirPool, rng: np.random.Generator) -> Rir:
    """Fresh response (dynamic pool) or a uniform pick from a fixed pool."""
    if pool.mode == DYNAMIC:
        return generate_rir(sample_room(pool.ranges, rng), pool.sample_rate, pool.absorption)
    if not pool.rirs:
        raise ValueError("cannot draw from an empty fixed pool")
    return pool.rirs[int(rng.integers(len(pool.rirs)))]


# -- persistence --------------------------------------------------------------

def save_rir(path, rir: Rir):
    """Write ``<path>.wav`` plus a ``<path>.json`` sidecar holding the room."""
    path = Path(path)
    write_wav(path.with_suffix(".wav"), AudioClip(rir.taps, rir.sample_rate))
    meta = {"sample_rate": rir.sample_rate, "n_taps": len(rir),
            "room": rir.config.to_dict() if rir.config else None}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_rir(path) -> Rir:
    path = Path(path)
    clip = read_wav(path.with_suffix(".wav"))
    meta_path = path.with_suffix(".json")
    cfg = None
    if meta_path.exists():
        room = json.loads(meta_path.read_text()).get("room")
        cfg = RoomConfig.from_dict(room) if room else None
    return Rir(clip.samples, clip.sample_rate, cfg)


def load_pool(directory, room_mode: str = VARIOUS_ROOMS) -> RirPool:
    wavs = sorted(Path(directory).glob("*.wav"))
    if not wavs:
        raise FileNotFoundError(f"no RIR wav files in {directory}")
    return RirPool.from_rirs([load_rir(p) for p in wavs], room_mode)
