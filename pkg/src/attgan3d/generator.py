"""Space-time super-resolution generator.

Pipeline: one shallow 3D conv with PReLU, a chain of residual attention
blocks (conv, PReLU, attention gates, skip connection), then two transposed
3D convs whose strides realise the requested output geometry, and a final
linear conv back to image channels.

Output geometry per mode, from an (n, h, w) input:
  stsr -> (2n-1, 4h, 4w)    ssr -> (n, 4h, 4w)    tsr -> (2n-1, h, w)
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .attention import CsaParams, csa_apply, he_init
from .tensor import InvalidGeometry, Tensor, default_dtype, scalar

MODES = ("stsr", "ssr", "tsr")

# (kernel, stride) of the two upsampling stages per mode; padding is always
# (1,1,1), which with these kernels gives n->n (s=1,k=3), n->2n-1 (s=2,k=3),
# h->2h (s=2,k=4), h->h (s=1,k=3) per axis.
_UP_GEOMETRY = {
    "stsr": (((3, 4, 4), (1, 2, 2)), ((3, 4, 4), (2, 2, 2))),
    "ssr":  (((3, 4, 4), (1, 2, 2)), ((3, 4, 4), (1, 2, 2))),
    "tsr":  (((3, 3, 3), (1, 1, 1)), ((3, 3, 3), (2, 1, 1))),
}


def output_geometry(mode: str, d: int, h: int, w: int) -> tuple[int, int, int]:
    """Expected output (frames, height, width) for an input clip geometry."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if mode == "ssr":
        return (d, 4 * h, 4 * w)
    if mode == "stsr":
        return (2 * d - 1, 4 * h, 4 * w)
    return (2 * d - 1, h, w)


@dataclass
class GeneratorConfig:
    in_channels: int = 1
    feat_channels: int = 16
    num_rabs: int = 3
    mode: str = "stsr"
    prelu_init_alpha: float = 0.25

    def __post_init__(self):
        if self.in_channels not in (1, 3):
            raise ValueError(f"in_channels must be 1 or 3, got {self.in_channels}")
        if self.feat_channels < 1:
            raise ValueError("feat_channels must be >= 1")
        if self.num_rabs < 1:
            raise ValueError("num_rabs must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")


@dataclass
class RabParams:
    conv_w: Tensor
    conv_b: Tensor
    alpha: Tensor
    csa: CsaParams

    def tensors(self) -> list[Tensor]:
        return [self.conv_w, self.conv_b, self.alpha] + self.csa.tensors()


@dataclass
class GeneratorParams:
    config: GeneratorConfig
    shallow_w: Tensor
    shallow_b: Tensor
    shallow_alpha: Tensor
    rabs: list[RabParams]
    up1_w: Tensor
    up1_b: Tensor
    up1_alpha: Tensor
    up2_w: Tensor
    up2_b: Tensor
    up2_alpha: Tensor
    recon_w: Tensor
    recon_b: Tensor

    def tensors(self) -> list[Tensor]:
        out = [self.shallow_w, self.shallow_b, self.shallow_alpha]
        for rab in self.rabs:
            out.extend(rab.tensors())
        out.extend([self.up1_w, self.up1_b, self.up1_alpha,
                    self.up2_w, self.up2_b, self.up2_alpha,
                    self.recon_w, self.recon_b])
        return out

    def named(self) -> OrderedDict:
        """Stable name -> Tensor map used for checkpoints and optimizers."""
        items = OrderedDict()
        items["gen/shallow/w"] = self.shallow_w
        items["gen/shallow/b"] = self.shallow_b
        items["gen/shallow/alpha"] = self.shallow_alpha
        for i, rab in enumerate(self.rabs):
            p = f"gen/rab{i}"
            items[f"{p}/conv/w"] = rab.conv_w
            items[f"{p}/conv/b"] = rab.conv_b
            items[f"{p}/alpha"] = rab.alpha
            items[f"{p}/csa/channel_w"] = rab.csa.channel_w
            items[f"{p}/csa/channel_b"] = rab.csa.channel_b
            items[f"{p}/csa/spatial_w"] = rab.csa.spatial_w
            items[f"{p}/csa/spatial_b"] = rab.csa.spatial_b
        items["gen/up1/w"] = self.up1_w
        items["gen/up1/b"] = self.up1_b
        items["gen/up1/alpha"] = self.up1_alpha
        items["gen/up2/w"] = self.up2_w
        items["gen/up2/b"] = self.up2_b
        items["gen/up2/alpha"] = self.up2_alpha
        items["gen/recon/w"] = self.recon_w
        items["gen/recon/b"] = self.recon_b
        return items


def init_generator(config: GeneratorConfig, seed: int) -> GeneratorParams:
    """Seeded parameter initialization: scaled normal conv weights (fan-in),
    zero biases, constant initial PReLU slope."""
    rng = np.random.default_rng(seed)
    dt = default_dtype()
    cin, cf = config.in_channels, config.feat_channels

    def conv(shape):
        return Tensor(he_init(rng, shape).astype(dt), requires_grad=True)

    def bias(c):
        return Tensor(np.zeros((1, c, 1, 1, 1), dtype=dt), requires_grad=True)

    def alpha():
        return scalar(config.prelu_init_alpha, requires_grad=True)

    rabs = []
    shallow_w = conv((cf, cin, 3, 3, 3))
    shallow_b = bias(cf)
    shallow_alpha = alpha()
    for _ in range(config.num_rabs):
        rabs.append(RabParams(
            conv_w=conv((cf, cf, 3, 3, 3)),
            conv_b=bias(cf),
            alpha=alpha(),
            csa=CsaParams.create(cf, rng, dtype=dt),
        ))
    (k1, _), (k2, _) = _UP_GEOMETRY[config.mode]
    return GeneratorParams(
        config=config,
        shallow_w=shallow_w, shallow_b=shallow_b, shallow_alpha=shallow_alpha,
        rabs=rabs,
        up1_w=conv((cf, cf) + k1), up1_b=bias(cf), up1_alpha=alpha(),
        up2_w=conv((cf, cf) + k2), up2_b=bias(cf), up2_alpha=alpha(),
        recon_w=conv((cin, cf, 3, 3, 3)), recon_b=bias(cin),
    )


def shallow_extract(v_in: Tensor, params: GeneratorParams) -> Tensor:
    z = ops.conv3d(v_in, params.shallow_w, params.shallow_b,
                   stride=(1, 1, 1), padding=(1, 1, 1))
    return ops.prelu(z, params.shallow_alpha)


def rab_forward(f_prev: Tensor, rab: RabParams) -> Tensor:
    z = ops.conv3d(f_prev, rab.conv_w, rab.conv_b,
                   stride=(1, 1, 1), padding=(1, 1, 1))
    gated = csa_apply(ops.prelu(z, rab.alpha), rab.csa)
    return ops.add(gated, f_prev)


def reconstruct(features: Tensor, params: GeneratorParams) -> Tensor:
    mode = params.config.mode
    if mode in ("stsr", "tsr") and features.shape.d < 2:
        raise InvalidGeometry(
            f"{mode} doubles the frame count and needs >= 2 input frames, "
            f"got {features.shape.d}")
    (_, s1), (_, s2) = _UP_GEOMETRY[mode]
    z = ops.conv_transpose3d(features, params.up1_w, params.up1_b,
                             stride=s1, padding=(1, 1, 1))
    z = ops.prelu(z, params.up1_alpha)
    z = ops.conv_transpose3d(z, params.up2_w, params.up2_b,
                             stride=s2, padding=(1, 1, 1))
    z = ops.prelu(z, params.up2_alpha)
    return ops.conv3d(z, params.recon_w, params.recon_b,
                      stride=(1, 1, 1), padding=(1, 1, 1))


def generator_forward(v_in: Tensor, params: GeneratorParams) -> Tensor:
    f = shallow_extract(v_in, params)
    for rab in params.rabs:
        f = rab_forward(f, rab)
    return reconstruct(f, params)
