import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import tone_frame
from oracles import QUIET_1K, QUIET_3K3, directional_derivative, quiet_threshold_db
from robust_aae.audio import AudioClip, spl_normalize, stft
from robust_aae.psychoacoustic import (
    NOISE, TONAL, Masker, bark, bin_frequencies, compute_threshold_grid, decimate_maskers,
    find_noise_maskers, find_tonal_maskers, frame_maskers, global_threshold, perceptual_loss,
    perceptual_loss_and_grad, quiet_threshold, spreading_function,
)

FREQS = bin_frequencies(512, 16000)
QUIET = quiet_threshold(FREQS)
BARKS = bark(FREQS)


def test_quiet_threshold_spot_values():
    q = quiet_threshold([1000.0, 3300.0])
    assert q[0] == pytest.approx(QUIET_1K, abs=1e-6)
    assert q[1] == pytest.approx(QUIET_3K3, abs=1e-6)
    assert abs(q[0] - 3.37) < 0.05 and abs(q[1] + 4.98) < 0.05
    assert quiet_threshold([12000.0])[0] > quiet_threshold([10000.0])[0]


@settings(max_examples=50, deadline=None)
@given(st.floats(20.5, 17999.0))
def test_quiet_threshold_matches_closed_form(f):
    assert quiet_threshold([f])[0] == pytest.approx(quiet_threshold_db(f), rel=1e-12, abs=1e-12)


def test_quiet_threshold_outside_audible_range_is_infinite():
    assert np.all(np.isinf(quiet_threshold([0.0, 10.0, 20.0, 18000.0, 20000.0])))


def test_bark_strictly_increasing_over_bins():
    assert np.all(np.diff(BARKS) > 0)
    assert bark(0.0) == 0.0


def test_single_tone_gives_one_tonal_masker_near_96db():
    frame = tone_frame()
    tonal = [m for m in frame_maskers(frame, QUIET) if m.kind == TONAL]
    assert len(tonal) == 1
    assert tonal[0].bin == 32
    assert abs(tonal[0].spl - 96.0) < 1.0


def test_tone_normalized_at_peak_reports_three_bin_sum():
    # the peak bin is anchored at 96 dB; its two Hann neighbours add 1.76 dB
    x = np.sin(2 * np.pi * 1000.0 * np.arange(4096) / 16000)
    row = spl_normalize(stft(AudioClip(x))).values[4]
    (m,) = [m for m in frame_maskers(row, QUIET) if m.kind == TONAL]
    assert m.spl == pytest.approx(96.0 + 10 * np.log10(1.5), abs=1e-6)


def independent_bins_tonal_estimate():
    """Expected tonal count if bin powers were i.i.d. exponential (7 dB = factor 5.01)."""
    from math import comb

    from robust_aae.psychoacoustic import _tonal_offsets

    def p_dominates(m):
        return sum(comb(m, i) * (-1) ** i / (1 + i / 10 ** 0.7) for i in range(m + 1))

    total = 0.0
    for k in range(3, 256):
        offs = _tonal_offsets(k)
        if offs is not None and k + offs[-1] < 257:
            total += p_dominates(2 * len(offs))
    return total


def test_white_noise_tonal_count_matches_independence_estimate():
    rng = np.random.default_rng(7)
    counts = []
    for _ in range(100):
        row = spl_normalize(stft(AudioClip(rng.standard_normal(512)))).values[0]
        counts.append(len(find_tonal_maskers(row)))
    estimate = independent_bins_tonal_estimate()
    assert estimate == pytest.approx(3.392, abs=1e-3)
    # the local-maximum condition only removes candidates
    assert 1.0 < np.mean(counts) <= estimate


def test_floor_frame_has_no_maskers():
    floor = np.full(257, -200.0)
    assert find_tonal_maskers(floor) == []
    noise = find_noise_maskers(floor, [])
    assert noise and all(m.spl == -200.0 for m in noise)
    assert decimate_maskers(noise, QUIET) == []


def test_noise_maskers_one_per_critical_band():
    rng = np.random.default_rng(3)
    row = spl_normalize(stft(AudioClip(rng.standard_normal(512)))).values[0]
    maskers = find_noise_maskers(row, [])
    # bands up to 8 kHz: 0-100 ... 7700-9500, the last one cut at Nyquist
    assert len(maskers) == 22
    assert all(m.kind == NOISE for m in maskers)
    assert [m.bin for m in maskers] == sorted(m.bin for m in maskers)


def test_noise_maskers_exclude_tone_energy():
    frame = tone_frame()
    tonal = find_tonal_maskers(frame)
    tone = max(tonal, key=lambda m: m.spl)
    assert tone.bin == 32
    for m in find_noise_maskers(frame, tonal):
        assert m.spl <= tone.spl - 20


def test_decimation_rules():
    quiet_low = np.full(257, -10.0)
    quiet_loud = Masker(100, 80.0, NOISE, 10.0)
    near = Masker(102, 70.0, TONAL, 10.3)
    assert decimate_maskers([quiet_loud, near], quiet_low) == [quiet_loud]
    buried = Masker(50, 0.0, TONAL, 5.0)
    assert decimate_maskers([buried], np.full(257, 10.0)) == []
    far = [Masker(20, 60.0, TONAL, 2.0), Masker(80, 50.0, NOISE, 9.0)]
    assert decimate_maskers(far, quiet_low) == far


def test_global_threshold_without_maskers_is_quiet_threshold():
    assert np.array_equal(global_threshold([], QUIET, BARKS), QUIET)


def test_loud_tonal_masker_raises_threshold_and_decays():
    m = Masker(32, 90.0, TONAL, float(BARKS[32]))
    thr = global_threshold([m], QUIET, BARKS)
    assert thr[32] - QUIET[32] > 20
    assert thr[33] < thr[32] and thr[31] < thr[32]
    above, below = thr[33:60], thr[5:32]
    assert np.all(np.diff(above) <= 1e-9)
    assert np.all(np.diff(below[below > QUIET[5:32] + 1]) >= -1e-9)


def test_adding_a_masker_never_lowers_threshold():
    a = Masker(32, 80.0, TONAL, float(BARKS[32]))
    b = Masker(90, 70.0, NOISE, float(BARKS[90]))
    assert np.all(global_threshold([a, b], QUIET, BARKS) >= global_threshold([a], QUIET, BARKS))


def test_spreading_function_pieces():
    assert spreading_function(0.0, 80.0) == 0.0
    assert spreading_function(-4.0, 80.0) == -np.inf
    assert spreading_function(8.5, 80.0) == -np.inf
    assert spreading_function(0.5, 50.0) == pytest.approx(-8.5)
    assert spreading_function(-2.0, 50.0) == pytest.approx(-43.0)


@pytest.fixture(scope="module")
def speechlike():
    rng = np.random.default_rng(11)
    t = np.arange(8000) / 16000
    x = 0.4 * np.sin(2 * np.pi * 440 * t) * (1 + np.sin(2 * np.pi * 3 * t)) + 0.02 * rng.standard_normal(8000)
    clip = AudioClip(x)
    return clip, compute_threshold_grid(clip)


def test_grid_geometry_and_quiet_floor(speechlike):
    clip, grid = speechlike
    assert grid.thresholds.shape == (30, 257)
    assert np.all(grid.thresholds >= QUIET[None, :] - 1e-9)
    with pytest.raises(ValueError):
        grid.thresholds[0, 0] = 1.0


def test_grid_is_deterministic(speechlike):
    clip, grid = speechlike
    again = compute_threshold_grid(clip)
    assert np.array_equal(again.thresholds, grid.thresholds)


def test_perceptual_loss_zero_cases(speechlike):
    clip, grid = speechlike
    assert perceptual_loss(np.zeros(len(clip)), grid) == 0.0
    assert perceptual_loss(1e-9 * np.ones(len(clip)), grid) == 0.0


def test_perceptual_loss_of_signal_itself_is_positive(speechlike):
    clip, grid = speechlike
    assert perceptual_loss(clip.samples, grid) > 0


def test_perceptual_loss_length_mismatch(speechlike):
    clip, grid = speechlike
    with pytest.raises(ValueError, match="length"):
        perceptual_loss(np.zeros(len(clip) - 1), grid)


@pytest.mark.parametrize("mode", ["excess", "level"])
def test_perceptual_loss_gradient(speechlike, mode):
    clip, grid = speechlike
    rng = np.random.default_rng(5)
    delta = 0.03 * rng.standard_normal(len(clip))
    value, grad = perceptual_loss_and_grad(delta, grid, mode)
    assert value > 0
    for _ in range(3):
        v = rng.standard_normal(len(clip))
        fd = directional_derivative(lambda d: perceptual_loss(d, grid, mode), delta, v, 1e-7)
        assert fd == pytest.approx(grad @ v, rel=1e-3)


@settings(max_examples=25, deadline=None)
@given(st.floats(1.0, 20.0), st.integers(0, 10_000))
def test_perceptual_loss_monotone_under_scaling(speechlike, scale, seed):
    clip, grid = speechlike
    delta = 0.01 * np.random.default_rng(seed).standard_normal(len(clip))
    p = perceptual_loss(delta, grid)
    assert p >= 0
    assert perceptual_loss(scale * delta, grid) >= p - 1e-12
