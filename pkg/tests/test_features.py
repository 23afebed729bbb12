import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vadkit.features import (
    BackgroundModel,
    PatchFeature,
    bg_init,
    bg_update,
    block_matching_flow,
    dist_l2,
    dist_norm_l1,
    distances_to,
    extract_patch_feature,
    fg_mask,
    fg_stack,
    flow_stack,
    gaussian_blur,
    gaussian_kernel,
    load_precomputed_flow,
    region_windows,
)
from vadkit.video_io import ScoreVolume, write_score_volume

from oracles import dense_convolve_clamped, sum_l2, sum_norm_l1


# --- background model -------------------------------------------------------

def test_bg_init_identical_frames():
    f = np.random.default_rng(0).integers(0, 256, (6, 7, 3), dtype=np.uint8)
    m = bg_init(np.stack([f] * 10))
    assert np.array_equal(m.mean_image, f.astype(np.float64)) and m.frames_seen == 10


def test_bg_init_half_black_half_white():
    frames = np.concatenate([np.zeros((5, 4, 4), np.uint8), np.full((5, 4, 4), 255, np.uint8)])
    assert np.all(bg_init(frames).mean_image == 127.5)


def test_bg_init_matches_summation_oracle():
    frames = np.random.default_rng(1).integers(0, 256, (9, 4, 4), dtype=np.uint8)
    m = bg_init(frames)
    for r in range(4):
        for c in range(4):
            assert m.mean_image[r, c, 0] == pytest.approx(sum(int(f[r, c]) for f in frames) / 9, abs=1e-12)


def test_bg_init_uses_prefix_and_warns_when_short(caplog):
    frames = np.stack([np.full((2, 2), v, np.uint8) for v in (10, 20, 90)])
    assert np.all(bg_init(frames, 2).mean_image == 15)
    with caplog.at_level(logging.WARNING):
        assert np.all(bg_init(frames, 200).mean_image == 40)
    assert "only 3 available" in caplog.text


def test_bg_init_empty():
    with pytest.raises(ValueError):
        bg_init(np.zeros((0, 2, 2), np.uint8))


def test_bg_update_arithmetic():
    fixed = BackgroundModel(np.full((2, 2, 1), 100.0), 1)
    assert np.all(bg_update(fixed, np.full((2, 2), 100, np.uint8)).mean_image == 100)
    zero = BackgroundModel(np.zeros((2, 2, 1)), 1)
    assert np.allclose(bg_update(zero, np.full((2, 2), 200, np.uint8)).mean_image, 10)


def test_bg_update_converges():
    m = BackgroundModel(np.zeros((3, 3, 1)), 1)
    frame = np.full((3, 3), 255, np.uint8)
    for _ in range(200):
        m = bg_update(m, frame, 0.95)
    # 255 * 0.95**200 is about 8.9e-3; within 1e-3 needs the residual to shrink below it
    assert np.all(np.abs(m.mean_image - 255) <= 255 * 0.95 ** 200 + 1e-9)
    small = BackgroundModel(np.full((1, 1, 1), 100.0), 1)
    for _ in range(200):
        small = bg_update(small, np.full((1, 1), 100.5, np.float64), 0.95)
    assert abs(small.mean_image[0, 0, 0] - 100.5) < 1e-3


def test_bg_update_dimension_mismatch():
    with pytest.raises(ValueError):
        bg_update(BackgroundModel(np.zeros((2, 2, 1)), 1), np.zeros((3, 2), np.uint8))


# --- FG mask ----------------------------------------------------------------

def test_fg_mask_equal_frame_is_empty():
    f = np.random.default_rng(2).integers(0, 256, (5, 5, 3), dtype=np.uint8)
    assert not fg_mask(bg_init(f[None]), f, 0).any()


def test_fg_mask_single_pixel():
    bg = BackgroundModel(np.full((4, 4, 3), 50.0), 1)
    f = np.full((4, 4, 3), 50, np.uint8)
    f[1, 2] = 50 + 13
    m = fg_mask(bg, f, 12)
    assert m.sum() == 1 and m[1, 2]


def test_fg_mask_requires_every_channel():
    bg = BackgroundModel(np.full((1, 1, 3), 50.0), 1)
    f = np.array([[[63, 63, 50]]], np.uint8)
    assert not fg_mask(bg, f, 12)[0, 0]
    oracle = all(abs(int(f[0, 0, ch]) - 50) > 12 for ch in range(3))
    assert fg_mask(bg, f, 12)[0, 0] == oracle


@settings(max_examples=50)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0, 100))
def test_fg_mask_of_background_itself_is_empty(seed, theta):
    img = np.random.default_rng(seed).integers(0, 256, (4, 5, 3), dtype=np.uint8)
    assert not fg_mask(BackgroundModel(img.astype(np.float64), 1), img, theta).any()


def test_fg_stack_masks_before_update():
    frames = np.zeros((3, 2, 2), np.uint8)
    frames[1] = 100
    out, bg = fg_stack(frames, 12, 0.5, 1, 0.95)
    # background 0, then 0, then 5 after frame 1 is folded in
    assert np.allclose(out[0], 0) and np.allclose(out[1], 1) and np.allclose(out[2], 0)
    assert bg.frames_seen == 4 and np.allclose(bg.mean_image, 4.75)


# --- blur -------------------------------------------------------------------

def test_blur_zero_and_one():
    assert np.all(gaussian_blur(np.zeros((7, 9)), 2.0) == 0)
    assert np.allclose(gaussian_blur(np.ones((7, 9)), 2.0), 1.0, atol=1e-12)


def test_kernel_radius_and_normalization():
    k = gaussian_kernel(5.0)
    assert k.size == 2 * math.ceil(15) + 1 and abs(k.sum() - 1) < 1e-15
    assert gaussian_kernel(0.7).size == 2 * 3 + 1


def test_blur_matches_dense_convolution():
    m = np.zeros((21, 21))
    m[10, 10] = 1
    k = gaussian_kernel(2.0)
    assert np.max(np.abs(gaussian_blur(m, 2.0) - dense_convolve_clamped(m, np.outer(k, k)))) <= 1e-6


def test_blur_matches_dense_convolution_at_borders():
    m = (np.random.default_rng(3).random((13, 17)) < 0.3).astype(float)
    k = gaussian_kernel(1.5)
    assert np.max(np.abs(gaussian_blur(m, 1.5) - dense_convolve_clamped(m, np.outer(k, k)))) <= 1e-6


@settings(max_examples=30)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.3, 2.0))
def test_blur_preserves_interior_mass(seed, sigma):
    r = math.ceil(3 * sigma)
    m = np.zeros((2 * r + 12, 2 * r + 12))
    m[r:r + 12, r:r + 12] = np.random.default_rng(seed).random((12, 12)) < 0.4
    assert abs(gaussian_blur(m, sigma).sum() - m.sum()) <= 1e-6


# --- flow -------------------------------------------------------------------

def brute_block_flow(prev, nxt, block, radius):
    """Per-block exhaustive SAD search with the same tie-break, pure Python."""
    a, b = prev.astype(np.int64), nxt.astype(np.int64)
    h, w = a.shape
    ys = list(range(0, h - block + 1, block))
    if ys[-1] != h - block:
        ys.append(h - block)
    xs = list(range(0, w - block + 1, block))
    if xs[-1] != w - block:
        xs.append(w - block)
    out = {}
    for y in ys:
        for x in xs:
            best = None
            for dy in range(-radius, radius + 1):
                for dx in range(-radius, radius + 1):
                    if not (0 <= y + dy <= h - block and 0 <= x + dx <= w - block):
                        continue
                    sad = int(np.abs(a[y:y + block, x:x + block] - b[y + dy:y + dy + block, x + dx:x + dx + block]).sum())
                    key = (sad, dy * dy + dx * dx, dy, dx)
                    if best is None or key < best:
                        best = key
            out[(y, x)] = (best[3], best[2])
    return ys, xs, out


def test_flow_identical_frames_zero():
    f = np.random.default_rng(4).integers(0, 256, (24, 32), dtype=np.uint8)
    fl = block_matching_flow(f, f, 8, 7)
    assert not fl.dx.any() and not fl.dy.any()


def test_flow_textureless_zero():
    f = np.full((24, 32), 77, np.uint8)
    fl = block_matching_flow(f, f.copy(), 8, 7)
    assert not fl.dx.any() and not fl.dy.any()


def test_flow_shift_right_by_three():
    f = np.random.default_rng(5).integers(0, 256, (32, 48), dtype=np.uint8)
    g = np.roll(f, 3, axis=1)
    fl = block_matching_flow(f, g, 8, 7)
    # interior blocks, away from the wrapped column and the right edge
    assert np.all(fl.dx[:, 8:40] == 3) and np.all(fl.dy[:, 8:40] == 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(-7, 7), st.integers(-7, 7), st.integers(0, 2 ** 32 - 1))
def test_flow_recovers_planted_translation(dy, dx, seed):
    big = np.random.default_rng(seed).integers(0, 256, (24 + 14, 32 + 14), dtype=np.uint8)
    R = 7
    prev = big[R:R + 24, R:R + 32]
    nxt = big[R - dy:R - dy + 24, R - dx:R - dx + 32]
    fl = block_matching_flow(prev, nxt, 8, 7)
    for y in range(0, 24, 8):
        for x in range(0, 32, 8):
            if 0 <= y + dy <= 16 and 0 <= x + dx <= 24:
                assert fl.dx[y, x] == dx and fl.dy[y, x] == dy
                assert np.all(fl.dx[y:y + 8, x:x + 8] == dx)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([(16, 16), (19, 22), (12, 9)]), st.integers(0, 4))
def test_flow_matches_brute_force_search(seed, shape, levels):
    rng = np.random.default_rng(seed)
    # few grey levels so that ties are common and the tie-break is exercised
    prev = (rng.integers(0, levels + 1, shape) * 40).astype(np.uint8)
    nxt = (rng.integers(0, levels + 1, shape) * 40).astype(np.uint8)
    fl = block_matching_flow(prev, nxt, 4, 3)
    ys, xs, ref = brute_block_flow(prev, nxt, 4, 3)
    for (y, x), (bdx, bdy) in ref.items():
        # a clamped last block owns the pixels from its grid-aligned start on
        py, px = max(y, ys.index(y) * 4), max(x, xs.index(x) * 4)
        assert (fl.dx[py, px], fl.dy[py, px]) == (bdx, bdy)


def test_flow_block_too_large():
    with pytest.raises(ValueError):
        block_matching_flow(np.zeros((4, 4)), np.zeros((4, 4)), 8, 2)


def test_flow_colour_uses_gray_mean():
    rng = np.random.default_rng(6)
    f = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
    g = np.roll(f, 2, axis=0)
    fl = block_matching_flow(f, g, 8, 3)
    assert np.all(fl.dy[:8, :] == 2)


def test_flow_stack_repeats_last():
    f = np.random.default_rng(7).integers(0, 256, (3, 16, 16), dtype=np.uint8)
    st_ = flow_stack(f, 8, 2)
    assert st_.shape == (3, 2, 16, 16)
    assert np.array_equal(st_[2], st_[1])
    assert not flow_stack(f[:1], 8, 2).any()


def test_precomputed_flow_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    ref = rng.standard_normal((3, 2, 4, 5)).astype(np.float32)
    for i in range(3):
        write_score_volume(ScoreVolume(ref[i, 0][None]), tmp_path / f"{i}.dx.vadsv")
        write_score_volume(ScoreVolume(ref[i, 1][None]), tmp_path / f"{i}.dy.vadsv")
    assert np.array_equal(load_precomputed_flow(tmp_path, 3), ref.astype(np.float64))


# --- patch features ---------------------------------------------------------

def test_patch_fg_single_value():
    f = extract_patch_feature("fg", np.full((1, 1, 1), 0.5), 0, 0, 0, 1, 1, 1)
    assert f.values.tolist() == [0.5] and f.kind == "fg"


def test_patch_flow_layout():
    stack = np.array([[[[1.0]], [[2.0]]], [[[3.0]], [[4.0]]]])  # (T=2, 2, 1, 1)
    assert extract_patch_feature("flow", stack, 0, 0, 0, 1, 1, 2).values.tolist() == [1, 2, 3, 4]


def test_patch_layout_index_arithmetic():
    stack = np.arange(3 * 2 * 4 * 5, dtype=float).reshape(3, 2, 4, 5)
    v = extract_patch_feature("flow", stack, 1, 2, 1, 2, 3, 2).values
    expected = [stack[t, c, r, col] for t in (1, 2) for c in (0, 1) for r in (1, 2) for col in (2, 3, 4)]
    assert v.tolist() == expected and v.size == 2 * 2 * 3 * 2


def test_patch_out_of_bounds():
    with pytest.raises(ValueError, match="out of bounds"):
        extract_patch_feature("fg", np.zeros((4, 5, 5)), 3, 3, 0, 3, 3, 2)


def test_region_windows_match_single_extraction():
    rng = np.random.default_rng(9)
    for kind, stack in (("fg", rng.random((7, 6, 8))), ("flow", rng.random((7, 2, 6, 8)))):
        wins = region_windows(stack, 1, 2, 3, 4, 3)
        for t in range(5):
            assert np.array_equal(wins[t], extract_patch_feature(kind, stack, 1, 2, t, 3, 4, 3).values)


# --- distances --------------------------------------------------------------

def test_l2_examples():
    assert dist_l2([1.0, 2.0], [1.0, 2.0]) == 0
    assert dist_l2([0, 0], [3, 4]) == 5


def test_norm_l1_examples():
    assert dist_norm_l1([1.5, -2.0], [1.5, -2.0]) == 0
    assert dist_norm_l1([1, 0], [0, 1], 1e-6) == pytest.approx(2 / (1 + 1e-6), abs=1e-15)
    assert dist_norm_l1([2], [1], 1e-6) == pytest.approx(1 / (3 + 1e-6), abs=1e-15)


def test_distance_mismatch_errors():
    with pytest.raises(ValueError):
        dist_l2([1, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        dist_norm_l1(PatchFeature("fg", np.zeros(2), ()), PatchFeature("flow", np.zeros(2), ()))


vectors = st.integers(0, 2 ** 32 - 1).map(lambda s: np.random.default_rng(s).standard_normal((2, 10)))


@settings(max_examples=100)
@given(vectors)
def test_distances_match_summation_oracles(uv):
    u, v = uv
    assert abs(dist_l2(u, v) - sum_l2(u, v)) <= 1e-9
    assert abs(dist_norm_l1(u, v) - sum_norm_l1(u, v, 1e-6)) <= 1e-9


@settings(max_examples=100)
@given(vectors)
def test_distance_axioms(uv):
    u, v = uv
    for d in (dist_l2, dist_norm_l1):
        assert d(u, v) >= 0 and d(u, v) == d(v, u) and d(u, u) == 0
    assert dist_norm_l1(u, v) < u.size


@settings(max_examples=50)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from(["fg", "flow"]))
def test_distances_to_matches_pairwise(seed, kind):
    rng = np.random.default_rng(seed)
    E = rng.standard_normal((6, 30)) * (rng.random((6, 30)) < 0.3)
    f = rng.standard_normal(30) * (rng.random(30) < 0.3)
    got = distances_to(E, f, kind, 1e-6)
    one = dist_l2 if kind == "fg" else dist_norm_l1
    for i in range(6):
        assert abs(got[i] - one(E[i], f)) <= 1e-9
