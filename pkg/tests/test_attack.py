import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import directional_derivative
from robust_aae.asr.model import VictimModel
from robust_aae.asr.vocab import SYMBOLS, TranscriptionTarget
from robust_aae.attack import (
    AlphaState, AttackConfig, apply_offset, apply_transforms, beta, clip_perturbation, compound_loss,
    draw_transforms, eot_transform, iteration_rng, run_attack, success_check, transforms_adjoint,
    update_alpha, write_trace,
)
from robust_aae.audio import AudioClip
from robust_aae.psychoacoustic import compute_threshold_grid
from robust_aae.rir import RirPool, RoomRanges, generate_rir, identity_rir, sample_room


def test_clip_perturbation_examples():
    assert np.allclose(clip_perturbation(np.array([0.5, -0.5]), 0.2), [0.2, -0.2])
    inside = np.array([0.1, -0.05, 0.0])
    assert np.array_equal(clip_perturbation(inside, 0.2), inside)
    with pytest.raises(ValueError):
        AttackConfig(epsilon=0.0)


def test_apply_offset_examples():
    clip = AudioClip(np.array([1.0, 2.0, 3.0, 4.0]))
    assert apply_offset(clip, 2).samples.tolist() == [0, 0, 1, 2]
    assert apply_offset(clip, 0).samples.tolist() == [1, 2, 3, 4]
    assert apply_offset(clip, 4).samples.tolist() == [0, 0, 0, 0]


def test_beta_examples():
    assert beta(16000, 16000) == 1.0
    assert beta(64000, 16000) == 0.5
    assert beta(4000, 16000) == 2.0


def test_alpha_schedule_examples():
    cfg = AttackConfig()
    state = AlphaState(0.3)
    for _ in range(15):
        state = update_alpha(state, True, cfg)
    assert state.alpha == pytest.approx(0.33) and state.streak == 0

    state = AlphaState(0.3)
    for _ in range(100):
        state = update_alpha(state, False, cfg)
    assert state.alpha == 0.3 and state.streak == 0

    state = AlphaState(0.3)
    for _ in range(14):
        state = update_alpha(state, True, cfg)
    state = update_alpha(state, False, cfg)
    assert state == AlphaState(0.3, -1)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.booleans(), max_size=400))
def test_alpha_floor_and_streak_bounds(outcomes):
    cfg = AttackConfig(inc_streak=3, dec_streak=5)
    state = AlphaState(cfg.alpha_init)
    for ok in outcomes:
        before = state.alpha
        state = update_alpha(state, ok, cfg)
        assert state.alpha >= cfg.alpha_init
        assert -cfg.dec_streak < state.streak < cfg.inc_streak
        assert (state.alpha >= before) if ok else (state.alpha <= before)


def test_config_validation():
    with pytest.raises(ValueError):
        AttackConfig(variant="loud")
    with pytest.raises(ValueError):
        AttackConfig(alpha_factor=1.0)
    with pytest.raises(ValueError):
        AttackConfig(inc_streak=100, dec_streak=15)
    with pytest.raises(ValueError):
        AttackConfig(success_votes=9)
    assert AttackConfig().eot_copies == 8
    assert AttackConfig(variant="combined").lr == 0.001 and AttackConfig().lr == 0.002


def test_epsilon_from_snr_floor():
    x = np.array([0.0, 0.5, -0.25])
    assert AttackConfig().epsilon_for(x) == pytest.approx(0.5 / np.sqrt(10))
    assert AttackConfig(epsilon=0.01).epsilon_for(x) == 0.01


# -- transformation stack -----------------------------------------------------------

def test_degenerate_transforms_only_prepend_zeros():
    adv = AudioClip(np.random.default_rng(0).standard_normal(500))
    pool = RirPool.from_rirs([identity_rir()])
    cfg = AttackConfig(variant="robust", noise_sigma=0.0, max_offset=0, rir_pool=pool)
    copies, _ = eot_transform(adv, pool, cfg, np.random.default_rng(1))
    assert len(copies) == 8
    assert all(np.allclose(c.samples, adv.samples, rtol=0, atol=1e-12) for c in copies)

    cfg = AttackConfig(variant="robust", noise_sigma=0.0, max_offset=3, rir_pool=pool)
    draws = draw_transforms(2, 500, pool, 0.0, 3, np.random.default_rng(2))
    draws = [type(d)(d.rir, d.noise, 0) for d in draws]
    rows = apply_transforms(adv.samples, draws, 3)
    assert rows.shape == (2, 503)
    assert np.allclose(rows[0], np.concatenate([np.zeros(3), adv.samples]), rtol=0, atol=1e-12)


def test_dynamic_pool_draws_distinct_rooms():
    draws = draw_transforms(8, 1000, RirPool.dynamic(), 0.001, 160, iteration_rng(0, 1))
    rooms = {d.rir.config for d in draws}
    assert len(rooms) == 8
    again = draw_transforms(8, 1000, RirPool.dynamic(), 0.001, 160, iteration_rng(0, 2))
    assert not rooms & {d.rir.config for d in again}


def test_transforms_adjoint_identity():
    rng = np.random.default_rng(3)
    pool = RirPool.fixed(RoomRanges().with_rt60(0.2, 0.25), 3, "various-rooms", rng)
    draws = draw_transforms(4, 300, pool, 0.01, 20, rng)
    x = rng.standard_normal(300)
    g = rng.standard_normal((4, 320))
    noise_free = apply_transforms(x, draws, 20) - apply_transforms(np.zeros(300), draws, 20)
    assert np.sum(noise_free * g) == pytest.approx(x @ transforms_adjoint(g, draws, 20), rel=1e-10)


# -- compound loss --------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_model():
    return VictimModel.init(np.random.default_rng(10), hidden=24)


@pytest.fixture(scope="module")
def short_clip():
    rng = np.random.default_rng(11)
    t = np.arange(3200) / 16000
    return AudioClip(0.3 * np.sin(2 * np.pi * 440 * t) + 0.05 * rng.standard_normal(3200))


@pytest.mark.parametrize("variant", ["base", "robust", "psychoacoustic", "combined"])
def test_compound_loss_gradient(variant, small_model, short_clip):
    rng = np.random.default_rng(12)
    pool = RirPool.fixed(RoomRanges().with_rt60(0.2, 0.3), 4, "various-rooms", rng)
    cfg = AttackConfig(variant=variant, rir_pool=pool)
    x = short_clip.samples
    target = TranscriptionTarget.from_text("go")
    grid = compute_threshold_grid(short_clip)
    draws = draw_transforms(8, x.size, pool, cfg.noise_sigma, cfg.max_offset, rng)
    delta = 0.01 * rng.standard_normal(x.size)
    ev = compound_loss(small_model, x, delta, target, cfg, 0.3, 1.5, grid, draws)

    def f(d):
        return compound_loss(small_model, x, d, target, cfg, 0.3, 1.5, grid, draws).loss

    for _ in range(3):
        v = rng.standard_normal(x.size)
        fd = directional_derivative(f, delta, v, h=1e-6)
        assert abs(fd - ev.grad @ v) < 1e-3 * abs(fd)


def test_alpha_zero_is_pure_model_loss(small_model, short_clip):
    target = TranscriptionTarget.from_text("go")
    delta = 0.01 * np.ones(short_clip.samples.size)
    ev = compound_loss(small_model, short_clip.samples, delta, target, AttackConfig(), 0.0, 1.0)
    assert ev.loss == ev.model_loss == pytest.approx(small_model.loss(short_clip.samples + delta, target))


def test_zero_delta_has_no_psychoacoustic_penalty(small_model, short_clip):
    grid = compute_threshold_grid(short_clip)
    target = TranscriptionTarget.from_text("go")
    ev = compound_loss(small_model, short_clip.samples, np.zeros(3200), target,
                       AttackConfig(variant="psychoacoustic"), 0.3, 1.0, grid)
    assert ev.penalty == 0.0 and ev.loss == ev.model_loss


def test_identity_pool_makes_robust_equal_base(small_model, short_clip):
    target = TranscriptionTarget.from_text("go")
    pool = RirPool.from_rirs([identity_rir()])
    delta = 0.02 * np.random.default_rng(13).standard_normal(3200)
    base = compound_loss(small_model, short_clip.samples, delta, target, AttackConfig(), 0.3, 1.0)
    robust_cfg = AttackConfig(variant="robust", rir_pool=pool, noise_sigma=0.0, max_offset=0)
    draws = draw_transforms(8, 3200, pool, 0.0, 0, np.random.default_rng(0))
    robust = compound_loss(small_model, short_clip.samples, delta, target, robust_cfg, 0.3, 1.0, draws=draws)
    assert robust.loss == pytest.approx(base.loss, rel=1e-9)
    assert np.allclose(robust.grad, base.grad, rtol=1e-7, atol=1e-12)


# -- success rule ----------------------------------------------------------------------

def logits_for(text, frames=12):
    ids = [SYMBOLS.index(c) for c in text]
    out = np.full((frames, len(SYMBOLS)), -5.0)
    out[:, 0] = 5.0
    for i, k in enumerate(ids):
        out[2 * i, 0], out[2 * i, k] = -5.0, 5.0
    return out


def test_success_majority_rule():
    target = TranscriptionTarget.from_text("go on")
    cfg = AttackConfig(variant="robust")
    good, bad = logits_for("go on"), logits_for("go")
    four = np.stack([good] * 4 + [bad] * 4)
    five = np.stack([good] * 5 + [bad] * 3)
    assert success_check(cfg, four, target)[:2] == (False, 4)
    assert success_check(cfg, five, target)[:2] == (True, 5)
    assert success_check(cfg, np.stack([good] * 8), target)[:2] == (True, 8)


def test_clean_variant_needs_exact_match():
    target = TranscriptionTarget.from_text("go on")
    cfg = AttackConfig()
    assert not success_check(cfg, logits_for("go")[None], target)[0]
    assert success_check(cfg, logits_for("go on")[None], target)[0]


# -- driver ---------------------------------------------------------------------------------

def test_identity_attack_succeeds_immediately(desk_victim):
    from robust_aae.asr.corpus import synthetic_corpus

    model, _ = desk_victim
    u = next(u for u in synthetic_corpus(20, 40, min_words=2) if model.transcribe(u.clip) == u.text)
    res = run_attack(u.clip, u.text, model, AttackConfig(min_iterations=1))
    assert res.success_found and res.first_success_iteration == 1
    assert not np.any(res.best_delta) and res.iterations_run == 1
    assert res.snr_db == float("inf")


def small_run(model, clip, **kw):
    pool = RirPool.fixed(RoomRanges().with_rt60(0.2, 0.3), 3, "various-rooms", np.random.default_rng(5))
    cfg = AttackConfig(min_iterations=6, rir_pool=pool, seed=9, **kw)
    return run_attack(clip, "go", model, cfg)


@pytest.mark.parametrize("variant", ["base", "robust", "psychoacoustic", "combined"])
def test_attack_is_deterministic_and_bounded(variant, small_model, short_clip, tmp_path):
    a = small_run(small_model, short_clip, variant=variant)
    b = small_run(small_model, short_clip, variant=variant)
    assert np.array_equal(a.best_delta, b.best_delta)
    assert a.summary() == b.summary()
    assert a.iterations_run == 6 and not a.success_found
    assert np.max(np.abs(a.best_delta)) <= a.epsilon
    assert all(row[-1] <= a.epsilon for row in a.trace)
    assert a.per_rir_success_count == max(row[7] for row in a.trace)
    write_trace(tmp_path / "t.csv", a)
    assert len((tmp_path / "t.csv").read_text().splitlines()) == 7


def test_base_without_regularizer_is_projected_gradient_descent(small_model, short_clip):
    cfg = AttackConfig(alpha_init=0.0, min_iterations=4, epsilon=0.01)
    res = run_attack(short_clip, "go", small_model, cfg)
    target = TranscriptionTarget.from_text("go")
    delta = np.zeros(3200)
    for _ in range(4):
        delta = np.clip(delta - cfg.lr * small_model.input_gradient(short_clip.samples + delta, target), -0.01, 0.01)
    # nothing matches, so the reported perturbation is the last iterate
    assert np.allclose(res.best_delta, delta, atol=1e-15)


def test_max_iterations_extends_until_success(small_model, short_clip):
    res = run_attack(short_clip, "go", small_model, AttackConfig(min_iterations=3, max_iterations=5))
    assert res.iterations_run == 5 and not res.success_found
