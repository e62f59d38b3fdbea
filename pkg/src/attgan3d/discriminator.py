"""Two-branch clip discriminator.

The texture branch scores single frames through a stride-2 conv ladder with
batch normalization; the motion branch scores channel-stacked consecutive
frame pairs through the same ladder without normalization. Per clip, frame
features and pair features are each averaged, concatenated, and fused by one
dense layer into a sigmoid realism score per batch item.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import ops
from .attention import he_init
from .tensor import InvalidGeometry, Tensor, default_dtype

LADDER = (32, 64, 128, 256)
LEAKY_SLOPE = 0.2
BRANCH_MODES = ("both", "texture_only", "motion_only")


class NeedsTwoFrames(InvalidGeometry):
    """The motion branch consumes consecutive frame pairs."""


@dataclass
class TextureBlock:
    conv_w: Tensor
    conv_b: Tensor
    gamma: Tensor
    beta: Tensor
    bn: ops.BatchNormState


@dataclass
class MotionBlock:
    conv_w: Tensor
    conv_b: Tensor


@dataclass
class DiscriminatorParams:
    in_channels: int
    texture_blocks: list[TextureBlock]
    motion_blocks: list[MotionBlock]
    fuse_w: Tensor    # (1, 512, 1, 1, 1)
    fuse_b: Tensor    # (1, 1, 1, 1, 1)

    def tensors(self) -> list[Tensor]:
        out = []
        for blk in self.texture_blocks:
            out.extend([blk.conv_w, blk.conv_b, blk.gamma, blk.beta])
        for blk in self.motion_blocks:
            out.extend([blk.conv_w, blk.conv_b])
        out.extend([self.fuse_w, self.fuse_b])
        return out

    def named(self) -> OrderedDict:
        items = OrderedDict()
        for i, blk in enumerate(self.texture_blocks):
            items[f"disc/tex{i}/conv/w"] = blk.conv_w
            items[f"disc/tex{i}/conv/b"] = blk.conv_b
            items[f"disc/tex{i}/bn/gamma"] = blk.gamma
            items[f"disc/tex{i}/bn/beta"] = blk.beta
        for i, blk in enumerate(self.motion_blocks):
            items[f"disc/mot{i}/conv/w"] = blk.conv_w
            items[f"disc/mot{i}/conv/b"] = blk.conv_b
        items["disc/fuse/w"] = self.fuse_w
        items["disc/fuse/b"] = self.fuse_b
        return items

    def bn_states(self) -> OrderedDict:
        return OrderedDict(
            (f"disc/tex{i}/bn", blk.bn)
            for i, blk in enumerate(self.texture_blocks))


def init_discriminator(in_channels: int, seed: int) -> DiscriminatorParams:
    rng = np.random.default_rng(seed)
    dt = default_dtype()

    def conv(cout, cin):
        w = he_init(rng, (cout, cin, 1, 3, 3)).astype(dt)
        return (Tensor(w, requires_grad=True),
                Tensor(np.zeros((1, cout, 1, 1, 1), dtype=dt), requires_grad=True))

    texture, motion = [], []
    prev_t, prev_m = in_channels, 2 * in_channels
    for width in LADDER:
        tw, tb = conv(width, prev_t)
        texture.append(TextureBlock(
            conv_w=tw, conv_b=tb,
            gamma=Tensor(np.ones((1, width, 1, 1, 1), dtype=dt), requires_grad=True),
            beta=Tensor(np.zeros((1, width, 1, 1, 1), dtype=dt), requires_grad=True),
            bn=ops.BatchNormState.for_channels(width),
        ))
        mw, mb = conv(width, prev_m)
        motion.append(MotionBlock(conv_w=mw, conv_b=mb))
        prev_t = prev_m = width

    fuse_w = Tensor(he_init(rng, (1, 2 * LADDER[-1], 1, 1, 1)).astype(dt),
                    requires_grad=True)
    fuse_b = Tensor(np.zeros((1, 1, 1, 1, 1), dtype=dt), requires_grad=True)
    return DiscriminatorParams(in_channels=in_channels, texture_blocks=texture,
                               motion_blocks=motion, fuse_w=fuse_w, fuse_b=fuse_b)


def _check_frame_geometry(h: int, w: int) -> None:
    if h < 16 or w < 16:
        raise InvalidGeometry(
            f"the stride-2 ladder needs frames of at least 16x16, got {h}x{w}")


def texture_branch(frame: Tensor, params: DiscriminatorParams,
                   train: bool) -> Tensor:
    """Single frame (N, Cin, 1, H, W) -> feature vector (N, 256, 1, 1, 1)."""
    _check_frame_geometry(frame.shape.h, frame.shape.w)
    z = frame
    for blk in params.texture_blocks:
        z = ops.conv2d(z, blk.conv_w, blk.conv_b, stride=(2, 2), padding=(1, 1))
        z = ops.batch_norm2d(z, blk.gamma, blk.beta, blk.bn, train=train)
        z = ops.leaky_relu(z, LEAKY_SLOPE)
    return ops.global_pool3d(z, "avg")


def motion_branch(frame_pair: Tensor, params: DiscriminatorParams) -> Tensor:
    """Stacked pair (N, 2*Cin, 1, H, W) -> feature vector (N, 256, 1, 1, 1)."""
    _check_frame_geometry(frame_pair.shape.h, frame_pair.shape.w)
    z = frame_pair
    for blk in params.motion_blocks:
        z = ops.conv2d(z, blk.conv_w, blk.conv_b, stride=(2, 2), padding=(1, 1))
        z = ops.leaky_relu(z, LEAKY_SLOPE)
    return ops.global_pool3d(z, "avg")


def discriminate(clip: Tensor, params: DiscriminatorParams, train: bool = False,
                 branches: str = "both") -> Tensor:
    """Realism score per batch item, shape (N, 1, 1, 1, 1), value in (0,1).

    d frames yield d texture evaluations and d-1 motion evaluations; the
    branch selector replaces the unused branch's features with zeros.
    """
    if branches not in BRANCH_MODES:
        raise ValueError(f"unknown branch mode {branches!r}; expected {BRANCH_MODES}")
    d = clip.shape.d
    if d < 2:
        raise NeedsTwoFrames(f"clip has {d} frame(s); scoring needs at least 2")
    n = clip.shape.n
    feat = clip.data.dtype
    zero_vec = Tensor(np.zeros((n, LADDER[-1], 1, 1, 1), dtype=feat))

    if branches == "motion_only":
        tex = zero_vec
    else:
        acc = None
        for t in range(d):
            v = texture_branch(ops.narrow(clip, 2, t, 1), params, train)
            acc = v if acc is None else ops.add(acc, v)
        tex = ops.scale(acc, 1.0 / d)

    if branches == "texture_only":
        mot = zero_vec
    else:
        acc = None
        for t in range(d - 1):
            pair = ops.concat(
                [ops.narrow(clip, 2, t, 1), ops.narrow(clip, 2, t + 1, 1)], axis=1)
            v = motion_branch(pair, params)
            acc = v if acc is None else ops.add(acc, v)
        mot = ops.scale(acc, 1.0 / (d - 1))

    fused = ops.fully_connected(ops.concat([tex, mot], axis=1),
                                params.fuse_w, params.fuse_b)
    return ops.sigmoid(fused)
