"""Discriminator contracts: score range, branch structure, sensitivities."""

import numpy as np
import pytest

from attgan3d import ops
from attgan3d.discriminator import (
    BRANCH_MODES,
    LADDER,
    DiscriminatorParams,
    NeedsTwoFrames,
    discriminate,
    init_discriminator,
    motion_branch,
    texture_branch,
)
from attgan3d.tensor import InvalidGeometry, Tensor


def clip(rng, n=1, c=1, d=3, h=16, w=16, scale=1.0):
    return Tensor((scale * rng.standard_normal((n, c, d, h, w))).astype(np.float32))


class TestScore:
    def test_score_shape_and_open_interval(self):
        rng = np.random.default_rng(0)
        params = init_discriminator(1, seed=0)
        s = discriminate(clip(rng, n=2, d=3), params)
        assert s.data.shape == (2, 1, 1, 1, 1)
        assert np.all(s.data > 0.0) and np.all(s.data < 1.0)

    def test_zero_fuse_scores_half(self):
        rng = np.random.default_rng(1)
        params = init_discriminator(1, seed=1)
        params.fuse_w.data[:] = 0.0
        params.fuse_b.data[:] = 0.0
        s = discriminate(clip(rng), params)
        np.testing.assert_allclose(s.data, 0.5, rtol=0, atol=0)

    def test_three_channel_input(self):
        rng = np.random.default_rng(2)
        params = init_discriminator(3, seed=2)
        s = discriminate(clip(rng, c=3, d=2), params)
        assert s.data.shape == (1, 1, 1, 1, 1)

    def test_single_frame_rejected(self):
        rng = np.random.default_rng(3)
        params = init_discriminator(1, seed=3)
        with pytest.raises(NeedsTwoFrames):
            discriminate(clip(rng, d=1), params)

    def test_small_frames_rejected(self):
        rng = np.random.default_rng(4)
        params = init_discriminator(1, seed=4)
        with pytest.raises(InvalidGeometry):
            discriminate(clip(rng, h=8, w=8), params)

    def test_unknown_branch_mode_rejected(self):
        rng = np.random.default_rng(5)
        params = init_discriminator(1, seed=5)
        with pytest.raises(ValueError):
            discriminate(clip(rng), params, branches="texture")


class TestBranches:
    def test_texture_feature_shape(self):
        rng = np.random.default_rng(6)
        params = init_discriminator(1, seed=6)
        frame = clip(rng, d=1)
        v = texture_branch(frame, params, train=False)
        assert v.data.shape == (1, LADDER[-1], 1, 1, 1)

    def test_motion_feature_shape(self):
        rng = np.random.default_rng(7)
        params = init_discriminator(1, seed=7)
        pair = clip(rng, c=2, d=1)
        v = motion_branch(pair, params)
        assert v.data.shape == (1, LADDER[-1], 1, 1, 1)

    def test_evaluation_counts(self, monkeypatch):
        # d frames: d texture calls, d-1 motion calls
        import attgan3d.discriminator as disc_mod
        rng = np.random.default_rng(8)
        params = init_discriminator(1, seed=8)
        calls = {"tex": 0, "mot": 0}
        orig_tex, orig_mot = disc_mod.texture_branch, disc_mod.motion_branch

        def count_tex(*a, **k):
            calls["tex"] += 1
            return orig_tex(*a, **k)

        def count_mot(*a, **k):
            calls["mot"] += 1
            return orig_mot(*a, **k)

        monkeypatch.setattr(disc_mod, "texture_branch", count_tex)
        monkeypatch.setattr(disc_mod, "motion_branch", count_mot)
        discriminate(clip(rng, d=5), params)
        assert calls == {"tex": 5, "mot": 4}

    def test_masked_branch_gets_no_gradient(self):
        rng = np.random.default_rng(9)
        params = init_discriminator(1, seed=9)
        s = discriminate(clip(rng, d=3), params, branches="texture_only")
        ops.mean_all(s).backward()
        for blk in params.motion_blocks:
            assert blk.conv_w.grad is None
        assert params.texture_blocks[0].conv_w.grad is not None

    def test_motion_only_ignores_texture_params(self):
        rng = np.random.default_rng(10)
        params = init_discriminator(1, seed=10)
        x = clip(rng, d=3)
        s1 = discriminate(x, params, branches="motion_only")
        for blk in params.texture_blocks:
            blk.conv_w.data[:] = 0.0
        s2 = discriminate(x, params, branches="motion_only")
        np.testing.assert_array_equal(s1.data, s2.data)

    def test_zero_ladder_weights_yield_zero_features(self):
        rng = np.random.default_rng(11)
        params = init_discriminator(1, seed=11)
        for blk in params.texture_blocks:
            blk.conv_w.data[:] = 0.0
            blk.conv_b.data[:] = 0.0
            blk.beta.data[:] = 0.0
        frame = clip(rng, d=1)
        v = texture_branch(frame, params, train=False)
        np.testing.assert_array_equal(v.data, 0.0)


class TestSensitivity:
    def test_motion_branch_separates_static_from_moving(self):
        # a static clip has identical consecutive frames; the motion branch
        # must produce different features for a moving clip
        rng = np.random.default_rng(12)
        params = init_discriminator(1, seed=12)
        frame = rng.standard_normal((1, 1, 1, 16, 16)).astype(np.float32)
        static = Tensor(np.concatenate([frame, frame], axis=2))
        moving_frame = np.roll(frame, 3, axis=4)
        moving = Tensor(np.concatenate([frame, moving_frame], axis=2))
        s_static = discriminate(static, params, branches="motion_only")
        s_moving = discriminate(moving, params, branches="motion_only")
        assert abs(s_static.data.item() - s_moving.data.item()) > 1e-7

    def test_frame_order_sensitivity(self):
        # stacked pairs are ordered, so reversing a clip should change the
        # motion score for at least one random discriminator
        hits = 0
        for seed in range(10):
            rng = np.random.default_rng(100 + seed)
            params = init_discriminator(1, seed=seed)
            x = rng.standard_normal((1, 1, 3, 16, 16)).astype(np.float32)
            fwd = discriminate(Tensor(x), params, branches="motion_only")
            rev = discriminate(Tensor(x[:, :, ::-1].copy()), params,
                               branches="motion_only")
            if abs(fwd.data.item() - rev.data.item()) > 1e-9:
                hits += 1
        assert hits >= 1

    def test_train_mode_updates_running_stats(self):
        rng = np.random.default_rng(13)
        params = init_discriminator(1, seed=13)
        before = [blk.bn.mean.copy() for blk in params.texture_blocks]
        discriminate(clip(rng, n=2, d=2), params, train=True)
        changed = any(
            np.any(blk.bn.mean != b)
            for blk, b in zip(params.texture_blocks, before))
        assert changed

    def test_eval_mode_leaves_running_stats(self):
        rng = np.random.default_rng(14)
        params = init_discriminator(1, seed=14)
        before = [blk.bn.mean.copy() for blk in params.texture_blocks]
        discriminate(clip(rng, n=2, d=2), params, train=False)
        for blk, b in zip(params.texture_blocks, before):
            np.testing.assert_array_equal(blk.bn.mean, b)


class TestNamedMap:
    def test_named_covers_all_tensors(self):
        params = init_discriminator(1, seed=15)
        named = params.named()
        assert len(named) == len(params.tensors())
        assert {id(t) for t in named.values()} == {id(t) for t in params.tensors()}
        assert "disc/tex3/bn/gamma" in named
        assert "disc/mot0/conv/w" in named
        assert list(params.bn_states()) == [f"disc/tex{i}/bn" for i in range(4)]

    def test_motion_first_block_takes_stacked_channels(self):
        params = init_discriminator(3, seed=16)
        assert params.motion_blocks[0].conv_w.data.shape[1] == 6
        assert params.texture_blocks[0].conv_w.data.shape[1] == 3
