"""Channel and spatial attention gates over space-time feature maps.

The channel gate squeezes each channel to a scalar by global average and max
pooling, runs both descriptors through one shared 1x1x1 convolution, sums,
and squashes with a sigmoid. The spatial gate pools across channels (average
and max), stacks the two maps, and convolves with a (3,7,7) kernel so the
gate sees a temporal neighbourhood as well as a spatial one. Applied in
sequence: channel gate first, spatial gate on the gated features.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ops
from .tensor import Tensor

SPATIAL_KERNEL = (3, 7, 7)
SPATIAL_PAD = (1, 3, 3)


@dataclass
class CsaParams:
    """One attention unit: a shared channel conv and a 2-to-1 spatial conv."""
    channel_w: Tensor   # (C, C, 1, 1, 1)
    channel_b: Tensor   # (1, C, 1, 1, 1)
    spatial_w: Tensor   # (1, 2, 3, 7, 7)
    spatial_b: Tensor   # (1, 1, 1, 1, 1)

    @property
    def channels(self) -> int:
        return self.channel_w.data.shape[0]

    def tensors(self) -> list[Tensor]:
        return [self.channel_w, self.channel_b, self.spatial_w, self.spatial_b]

    @classmethod
    def create(cls, channels: int, rng: np.random.Generator,
               dtype=None) -> "CsaParams":
        from .tensor import default_dtype
        dt = dtype or default_dtype()
        cw = he_init(rng, (channels, channels, 1, 1, 1)).astype(dt)
        sw = he_init(rng, (1, 2) + SPATIAL_KERNEL).astype(dt)
        return cls(
            channel_w=Tensor(cw, requires_grad=True),
            channel_b=Tensor(np.zeros((1, channels, 1, 1, 1), dtype=dt), requires_grad=True),
            spatial_w=Tensor(sw, requires_grad=True),
            spatial_b=Tensor(np.zeros((1, 1, 1, 1, 1), dtype=dt), requires_grad=True),
        )

    @classmethod
    def zeros(cls, channels: int, dtype=None) -> "CsaParams":
        from .tensor import default_dtype
        dt = dtype or default_dtype()
        return cls(
            channel_w=Tensor(np.zeros((channels, channels, 1, 1, 1), dtype=dt), requires_grad=True),
            channel_b=Tensor(np.zeros((1, channels, 1, 1, 1), dtype=dt), requires_grad=True),
            spatial_w=Tensor(np.zeros((1, 2) + SPATIAL_KERNEL, dtype=dt), requires_grad=True),
            spatial_b=Tensor(np.zeros((1, 1, 1, 1, 1), dtype=dt), requires_grad=True),
        )


def he_init(rng: np.random.Generator, shape: tuple) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


def channel_attention(f3d: Tensor, params: CsaParams) -> Tensor:
    """Per-channel gate in (0,1), shape (N, C, 1, 1, 1)."""
    avg = ops.global_pool3d(f3d, "avg")
    mx = ops.global_pool3d(f3d, "max")
    za = ops.conv3d(avg, params.channel_w, params.channel_b)
    zm = ops.conv3d(mx, params.channel_w, params.channel_b)
    return ops.sigmoid(ops.add(za, zm))


def spatial_attention(f_prime: Tensor, params: CsaParams) -> Tensor:
    """Per-position gate in (0,1), shape (N, 1, D, H, W)."""
    stacked = ops.concat(
        [ops.channel_pool(f_prime, "avg"), ops.channel_pool(f_prime, "max")], axis=1)
    z = ops.conv3d(stacked, params.spatial_w, params.spatial_b,
                   stride=(1, 1, 1), padding=SPATIAL_PAD)
    return ops.sigmoid(z)


def csa_apply(f3d: Tensor, params: CsaParams, dump_dir: str | None = None) -> Tensor:
    """Channel gate then spatial gate, both multiplicative; shape-preserving.

    When dump_dir is set the two gate maps are written there for offline
    inspection (see dump_attention_map).
    """
    m_c = channel_attention(f3d, params)
    f_prime = ops.mul(m_c, f3d)
    m_s = spatial_attention(f_prime, params)
    out = ops.mul(m_s, f_prime)
    if dump_dir is not None:
        dump_attention_map(Path(dump_dir) / "channel_gate", m_c.data)
        dump_attention_map(Path(dump_dir) / "spatial_gate", m_s.data)
    return out


def dump_attention_map(stem, data: np.ndarray) -> None:
    """Write a gate map as raw little-endian float32 plus a .shape sidecar."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    data.astype("<f4").tofile(stem.with_suffix(".f32"))
    stem.with_suffix(".shape").write_text(
        " ".join(str(s) for s in data.shape) + "\n")


def load_attention_map(stem) -> np.ndarray:
    stem = Path(stem)
    shape = tuple(int(v) for v in stem.with_suffix(".shape").read_text().split())
    return np.fromfile(stem.with_suffix(".f32"), dtype="<f4").reshape(shape)
