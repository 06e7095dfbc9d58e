import numpy as np
import pytest

from siamvpg.compose import (
    ComposeConfig,
    ComposeError,
    PseudoComposer,
    attention_mask,
    compose_with,
    nrs,
    rrs,
    rrs_with_stride,
)
from siamvpg.data import FeatureSequence
from siamvpg.intervals import Interval


def _seq(n, dim=4, rng=None, fill=None):
    if fill is not None:
        return FeatureSequence(np.full((n, dim), fill, dtype=np.float32))
    rng = rng or np.random.default_rng(0)
    return FeatureSequence(rng.normal(size=(n, dim)).astype(np.float32))


def test_config_validation():
    ComposeConfig(t_clips=16)
    with pytest.raises(ComposeError):
        ComposeConfig(t_clips=1)
    with pytest.raises(ComposeError):
        ComposeConfig(t_clips=16, rrs_stride_range=(0.0, 2.0))
    with pytest.raises(ComposeError):
        ComposeConfig(t_clips=16, rrs_stride_range=(3.0, 2.0))
    with pytest.raises(ComposeError):
        ComposeConfig(t_clips=16, rbs_fraction=0.5)


def test_rrs_unit_stride_identity():
    fg = _seq(17)
    out, r = rrs(fg, np.random.default_rng(0), (1.0, 1.0))
    assert r == 1.0
    assert np.array_equal(out.values, fg.values)


def test_rrs_stride_two():
    fg = _seq(20)
    out, r = rrs_with_stride(fg, 2.0)
    assert r == 0.5
    assert out.num_clips == 10
    assert np.array_equal(out.values, fg.values[0::2])


def test_rrs_output_never_empty():
    rng = np.random.default_rng(1)
    for n in [1, 2, 3, 7]:
        for stride in [0.75, 1.0, 2.5, 15.0]:
            out, r = rrs_with_stride(_seq(n, rng=rng), stride)
            assert out.num_clips >= 1
            assert r == out.num_clips / n


def test_rrs_upsampling_stride_below_one():
    fg = _seq(10)
    out, r = rrs_with_stride(fg, 0.5)
    assert out.num_clips == 20
    assert r == 2.0
    # positions 0, 0.5, 1.0, 1.5, ... -> nearest rows 0, 1, 1, 2, ...
    assert np.array_equal(out.values[0], fg.values[0])
    assert np.array_equal(out.values[1], fg.values[1])
    assert np.array_equal(out.values[2], fg.values[1])
    assert np.array_equal(out.values[3], fg.values[2])


def test_nrs_identity_when_length_matches():
    seq = _seq(24)
    out = nrs(seq, 24)
    assert np.allclose(out.values, seq.values)


def test_nrs_preserves_constants():
    seq = _seq(17, fill=3.5)
    out = nrs(seq, 40)
    assert np.allclose(out.values, 3.5)


def test_nrs_midpoint():
    v0 = np.zeros(4, dtype=np.float32)
    v1 = np.ones(4, dtype=np.float32)
    seq = FeatureSequence(np.stack([v0, v1]))
    out = nrs(seq, 3)
    assert np.allclose(out.values[1], 0.5)


def test_attention_mask_full_interval():
    assert np.array_equal(attention_mask(Interval(0.0, 1.0), 12), np.ones(12, dtype=np.float32))


def test_attention_mask_partial():
    mask = attention_mask(Interval(0.2, 0.6), 10)
    expected = np.zeros(10, dtype=np.float32)
    expected[2:6] = 1.0  # clip centers 0.25, 0.35, 0.45, 0.55
    assert np.array_equal(mask, expected)


def test_attention_mask_zero_length():
    assert attention_mask(Interval(0.33, 0.33), 10).sum() == 0
    # center of clip 2 at T=5 is exactly 0.5
    assert attention_mask(Interval(0.5, 0.5), 5).sum() == 1


def test_compose_foreground_only():
    fg = _seq(20)
    comp = compose_with(fg, np.zeros((0, 4), dtype=np.float32), 0, 1.0, 0.0, 0.0, 16)
    assert comp.pseudo_interval == Interval(0.0, 1.0)
    assert comp.features.num_clips == 16


def test_compose_hand_value():
    # I=10, r=1, L=20, L_bg=30 -> [10/50, 30/50]
    fg = _seq(20)
    bg = _seq(30, rng=np.random.default_rng(5))
    comp = compose_with(fg, bg.values, 10, 1.0, 0.0, 0.0, 64)
    assert comp.pseudo_interval.start == pytest.approx(0.2)
    assert comp.pseudo_interval.end == pytest.approx(0.6)
    assert comp.provenance.rescale == 1.0


def test_compose_rejects_same_video():
    composer = PseudoComposer(ComposeConfig(t_clips=16))
    fg = _seq(8)
    with pytest.raises(ComposeError):
        composer.compose(fg, fg, np.random.default_rng(0), "vid", "vid")


def test_compose_deterministic_given_rng_seed():
    composer = PseudoComposer(ComposeConfig(t_clips=32))
    fg, bg = _seq(20), _seq(30, rng=np.random.default_rng(9))
    a = composer.compose(fg, bg, np.random.default_rng(7), "a", "b")
    b = composer.compose(fg, bg, np.random.default_rng(7), "a", "b")
    assert a.pseudo_interval == b.pseudo_interval
    assert a.provenance == b.provenance
    assert np.array_equal(a.features.values, b.features.values)


def test_compose_call_counter():
    composer = PseudoComposer(ComposeConfig(t_clips=16))
    assert composer.calls == 0
    composer.compose(_seq(8), _seq(9), np.random.default_rng(0), "a", "b")
    assert composer.calls == 1


def test_offsets_only_shrink():
    fg, bg = _seq(20), _seq(30, rng=np.random.default_rng(3))
    base = compose_with(fg, bg.values, 10, 1.0, 0.0, 0.0, 64)
    shrunk = compose_with(fg, bg.values, 10, 1.0, 1.5, 2.0, 64)
    assert shrunk.pseudo_interval.start > base.pseudo_interval.start
    assert shrunk.pseudo_interval.end < base.pseudo_interval.end


def _marker_interval(comp, t_clips):
    """Locate the foreground extent via a sentinel channel after resampling."""
    sentinel = comp.features.values[:, -1]
    inside = np.nonzero(sentinel >= 0.5)[0]
    assert inside.size > 0
    return inside[0] / t_clips, (inside[-1] + 1) / t_clips


def test_pseudo_interval_matches_marker_oracle():
    # tag foreground clips with a sentinel channel and compare its located
    # run against the closed-form label, p = 0 so no offsets
    rng = np.random.default_rng(42)
    t_clips = 64
    composer = PseudoComposer(ComposeConfig(t_clips=t_clips, rbs_fraction=0.0,
                                            rrs_stride_range=(0.75, 3.0)))
    for _ in range(300):
        l_fg = int(rng.integers(4, 90))
        l_bg = int(rng.integers(1, 90))
        fg = np.concatenate([
            rng.normal(size=(l_fg, 3)).astype(np.float32),
            np.ones((l_fg, 1), dtype=np.float32),
        ], axis=1)
        bg = np.concatenate([
            rng.normal(size=(l_bg, 3)).astype(np.float32),
            np.zeros((l_bg, 1), dtype=np.float32),
        ], axis=1)
        comp = composer.compose(FeatureSequence(fg), FeatureSequence(bg), rng, "fg", "bg")
        lo, hi = _marker_interval(comp, t_clips)
        assert abs(lo - comp.pseudo_interval.start) <= 1.0 / t_clips
        assert abs(hi - comp.pseudo_interval.end) <= 1.0 / t_clips
