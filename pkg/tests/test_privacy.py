import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from attack_fixtures import gallery_scenes, leak_probes, random_probes
from conftest import make_scene
from oracles import ssim_windows
from rlmoe.embeddings import HashedProjection
from rlmoe.errors import (DimensionMismatch, EmptyGallery, EmptyScoreList, ImageTooSmall,
                          UnknownIdentity)
from rlmoe.gating import init_gate
from rlmoe.privacy import (AttackReport, Gallery, GrayImage, build_gallery, mia_attack,
                           mia_scores, mse, psnr, read_pgm, srra, ssim, write_pgm)
from rlmoe.rlopt import TrainerConfig, init_policy

P = HashedProjection(0, 64)


def img(a):
    return GrayImage.from_array(np.asarray(a, dtype=np.uint8))


def rand_img(rng, h=16, w=16):
    return img(rng.integers(0, 256, size=(h, w)))


# ---------------------------------------------------------------- fidelity

def test_mse_and_psnr_examples():
    a = img([[0, 0], [0, 0]])
    b = img([[10, 0], [0, 0]])
    assert mse(a, a) == 0.0 and psnr(a, a) == math.inf
    assert mse(a, b) == 25.0
    assert psnr(a, b) == pytest.approx(10 * math.log10(65025 / 25), abs=1e-12)
    assert psnr(a, b) == pytest.approx(34.1514, abs=1e-3)
    assert mse(img(np.zeros((3, 3))), img(np.full((3, 3), 255))) == 65025.0


def test_dimension_checks(tmp_path):
    with pytest.raises(DimensionMismatch):
        mse(img(np.zeros((2, 2))), img(np.zeros((2, 3))))
    with pytest.raises(DimensionMismatch):
        GrayImage(3, 2, np.zeros((3, 2)))
    with pytest.raises(ImageTooSmall):
        ssim(img(np.zeros((7, 9))), img(np.zeros((7, 9))))


def test_psnr_decreases_with_noise_amplitude():
    rng = np.random.default_rng(0)
    base = np.full((32, 32), 128.0)
    z = rng.standard_normal(base.shape)
    values = [psnr(img(base), img(np.clip(np.rint(base + s * z), 0, 255))) for s in (1, 2, 4, 8)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_ssim_matches_direct_formula_on_random_pairs():
    rng = np.random.default_rng(3)
    for _ in range(3):
        a, b = rand_img(rng), rand_img(rng)
        assert ssim(a, b) == pytest.approx(ssim_windows(a.pixels.tolist(), b.pixels.tolist()),
                                           abs=1e-9)
    a = rand_img(rng)
    noisy = img(np.clip(a.pixels.astype(int) + rng.integers(-20, 21, size=(16, 16)), 0, 255))
    assert ssim(a, noisy) == pytest.approx(ssim_windows(a.pixels.tolist(), noisy.pixels.tolist()),
                                           abs=1e-9)


def test_ssim_constant_offset_is_pure_luminance():
    c = 100.0
    C1, C2 = (0.01 * 255) ** 2, (0.03 * 255) ** 2
    a, b = img(np.full((8, 8), c)), img(np.full((8, 8), c + 10))
    # zero variance: contrast-structure factor is C2 / C2 == 1
    want = (2 * c * (c + 10) + C1) / (c * c + (c + 10) ** 2 + C1) * (C2 / C2)
    assert ssim(a, b) == pytest.approx(want, abs=1e-12)
    assert ssim(a, b) < 1


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(8, 14), st.integers(8, 14))
def test_ssim_identity_and_symmetry(seed, h, w):
    rng = np.random.default_rng(seed)
    a, b = rand_img(rng, h, w), rand_img(rng, h, w)
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    assert abs(ssim(a, b) - ssim(b, a)) <= 1e-12
    assert -1 <= ssim(a, b) <= 1


def test_pgm_round_trip(tmp_path):
    a = rand_img(np.random.default_rng(1), 5, 7)
    write_pgm(tmp_path / "a.pgm", a)
    back = read_pgm(tmp_path / "a.pgm")
    assert (back.width, back.height) == (7, 5)
    assert np.array_equal(back.pixels, a.pixels)
    (tmp_path / "short.pgm").write_bytes(b"P5\n4 4\n255\n" + bytes(3))
    with pytest.raises(ValueError):
        read_pgm(tmp_path / "short.pgm")
    (tmp_path / "ascii.pgm").write_bytes(b"P2\n1 1\n255\n0\n")
    with pytest.raises(ValueError):
        read_pgm(tmp_path / "ascii.pgm")


# ---------------------------------------------------------------- replay attack

def test_srra_self_match_is_one():
    scenes = gallery_scenes(20)
    g = build_gallery(scenes, P)
    probes = [(s.scene_id, s.identity_id, tuple(s.reference_text.split())) for s in scenes]
    assert srra(probes, g, P) == 1.0


def test_srra_nearer_wrong_identity_fails():
    scenes = [make_scene("a", reference="red car bridge", identity="A"),
              make_scene("b", reference="wet road fog", identity="B")]
    g = build_gallery(scenes, P)
    assert srra([("p", "A", ("wet", "road", "fog"))], g, P) == 0.0


def test_srra_random_text_near_chance_and_leak_is_detected():
    scenes = gallery_scenes()
    g = build_gallery(scenes, P)
    probes, _ = random_probes(scenes)
    rate = srra(probes, g, P)
    assert rate <= 0.08
    assert srra(leak_probes(scenes), g, P) >= 5 * max(rate, 1 / len(scenes))


def test_srra_errors():
    scenes = [make_scene("a", identity="A")]
    with pytest.raises(EmptyGallery):
        srra([], Gallery([], np.zeros((0, 64))), P)
    with pytest.raises(EmptyGallery):
        build_gallery([], P)
    with pytest.raises(UnknownIdentity):
        srra([("p", "Z", ("x",))], build_gallery(scenes, P), P)


# ---------------------------------------------------------------- membership inference

def test_mia_attack_examples():
    r = mia_attack([0.9, 0.8], [0.1, 0.2])
    assert (r.accuracy, r.precision, r.auc) == (1.0, 1.0, 1.0)
    assert r.risk_score == r.auc
    same = mia_attack([0.3, 0.5, 0.7], [0.3, 0.5, 0.7])
    assert same.auc == 0.5 and same.accuracy == 0.5
    with pytest.raises(EmptyScoreList):
        mia_attack([], [0.1])


def test_mia_threshold_hand_sweep():
    # members {3, 1}, non-members {2, 0}: best cut at 2.5 or 0.5 gives balanced accuracy 0.75
    r = mia_attack([3.0, 1.0], [2.0, 0.0])
    assert r.accuracy == 0.75
    assert r.auc == 0.75


# a grid keeps the transform strictly monotone in floating point too
GRID = st.integers(-40, 40).map(lambda k: k / 8)


@settings(max_examples=50, deadline=None)
@given(st.lists(GRID, min_size=1, max_size=12), st.lists(GRID, min_size=1, max_size=12))
def test_mia_auc_invariant_under_monotone_transform(m, n):
    base = mia_attack(m, n)
    moved = mia_attack([math.atan(x) * 3 + 1 for x in m], [math.atan(x) * 3 + 1 for x in n])
    assert moved.auc == base.auc and moved.accuracy == base.accuracy
    for v in (base.accuracy, base.precision, base.auc):
        assert 0.0 <= v <= 1.0


def test_attack_report_rows_render_infinite_thresholds():
    rep = AttackReport(0.25, {"black_box": mia_attack([1.0], [1.0])})
    rows = rep.rows()
    assert rows[0] == ("srra", "replay", "0.25")
    assert ("threshold", "black_box", "-inf") in rows


def test_mia_scores_are_deterministic():
    scenes = gallery_scenes(4)
    vocab = sorted({w for s in scenes for t in s.expert_texts.values() for w in t.split()})
    cfg = TrainerConfig(t_max=4, model_dim=16, n_heads=2, ff_dim=24)
    p = init_policy(vocab, 16, 2, 2, 24, seed=1)
    gate = init_gate(seed=0)
    a = mia_scores(scenes, p, gate, cfg, P)
    b = mia_scores(list(reversed(scenes)), p, gate, cfg, P)
    assert a["black_box"] == list(reversed(b["black_box"]))
    assert a["white_box"] == list(reversed(b["white_box"]))
    assert all(x <= 0 for x in a["white_box"])
    assert mia_scores([], p, gate, cfg, P) == {"black_box": [], "white_box": []}


def test_untrained_policy_scores_are_indistinguishable():
    from scipy.stats import ks_2samp

    from rlmoe.gating import gate_targets, train_gate
    from rlmoe.pipeline.synthetic import private_scenes

    members = private_scenes(64, "member", seed=7)
    nonmembers = private_scenes(64, "nonmember", seed=8)
    train = private_scenes(64, "train", seed=9)
    gate, _ = train_gate([s.features for s in train], [gate_targets(s) for s in train],
                         init_gate(seed=7), 200, 1e-2)
    cfg = TrainerConfig(seed=7, target_len=8)
    vocab = sorted({w for s in members for t in s.expert_texts.values() for w in t.split()})
    p0 = init_policy(vocab, seed=7)
    sm, sn = mia_scores(members, p0, gate, cfg), mia_scores(nonmembers, p0, gate, cfg)
    for setting in ("black_box", "white_box"):
        assert ks_2samp(sm[setting], sn[setting]).pvalue > 0.01
