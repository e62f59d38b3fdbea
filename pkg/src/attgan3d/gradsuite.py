"""Named finite-difference checks covering every differentiable building
block, from single ops through full generator and discriminator forwards.
Run in float64; each entry rebuilds its graph per probe."""

from __future__ import annotations

import numpy as np

from . import ops
from .attention import CsaParams, channel_attention, csa_apply, spatial_attention
from .discriminator import discriminate, init_discriminator
from .generator import GeneratorConfig, generator_forward, init_generator, rab_forward
from .gradcheck import GradReport, finite_diff_check
from .tensor import Tensor, scalar, using_dtype
from .training import lsgan_d_loss, lsgan_g_loss, sr_loss


def _t(rng, shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _suite_entries():
    """Yield (name, f, inputs, max_coords) lazily under the float64 mode."""
    rng = np.random.default_rng(2024)

    x = _t(rng, (2, 2, 3, 4, 4))
    w = _t(rng, (3, 2, 2, 3, 3))
    b = _t(rng, (1, 3, 1, 1, 1))
    yield ("conv3d",
           lambda x, w, b: ops.mean_all(
               ops.conv3d(x, w, b, stride=(1, 2, 2), padding=(1, 1, 1))),
           [x, w, b], 48)

    xt = _t(rng, (1, 3, 2, 3, 3))
    wt = _t(rng, (3, 2, 3, 4, 4))
    bt = _t(rng, (1, 2, 1, 1, 1))
    yield ("conv_transpose3d",
           lambda x, w, b: ops.mean_all(
               ops.conv_transpose3d(x, w, b, stride=(2, 2, 2), padding=(1, 1, 1))),
           [xt, wt, bt], 48)

    x2 = _t(rng, (2, 2, 1, 5, 5))
    w2 = _t(rng, (3, 2, 1, 3, 3))
    b2 = _t(rng, (1, 3, 1, 1, 1))
    yield ("conv2d",
           lambda x, w, b: ops.mean_all(
               ops.conv2d(x, w, b, stride=(2, 2), padding=(1, 1))),
           [x2, w2, b2], 48)

    xp = _t(rng, (2, 3, 2, 3, 3))
    for mode in ("avg", "max"):
        yield (f"global_pool3d_{mode}",
               lambda x, m=mode: ops.mean_all(ops.global_pool3d(x, m)), [xp], 48)
        yield (f"channel_pool_{mode}",
               lambda x, m=mode: ops.mean_all(ops.channel_pool(x, m)), [xp], 48)

    xa = _t(rng, (1, 2, 1, 4, 4))
    yield ("sigmoid", lambda x: ops.mean_all(ops.sigmoid(x)), [xa], 32)
    alpha = scalar(0.25, requires_grad=True)
    yield ("prelu", lambda x, a: ops.mean_all(ops.prelu(x, a)), [xa, alpha], 32)
    yield ("leaky_relu",
           lambda x: ops.mean_all(ops.leaky_relu(x, 0.2)), [xa], 32)

    xb = _t(rng, (2, 3, 1, 3, 3))
    gm = _t(rng, (1, 3, 1, 1, 1))
    bt2 = _t(rng, (1, 3, 1, 1, 1))
    bn_state = ops.BatchNormState.for_channels(3)
    bn_state.mean[:] = rng.standard_normal(3)
    bn_state.var[:] = rng.uniform(0.5, 2.0, 3)
    yield ("batch_norm2d_eval",
           lambda x, g, b: ops.mean_all(
               ops.batch_norm2d(x, g, b, bn_state, train=False)),
           [xb, gm, bt2], 48)

    xf = _t(rng, (3, 4, 1, 1, 1))
    wf = _t(rng, (2, 4, 1, 1, 1))
    bf = _t(rng, (1, 2, 1, 1, 1))
    yield ("fully_connected",
           lambda x, w, b: ops.mean_all(ops.fully_connected(x, w, b)),
           [xf, wf, bf], 32)

    csa = CsaParams.create(4, np.random.default_rng(7))
    xc = _t(rng, (1, 4, 2, 8, 8))
    yield ("channel_attention",
           lambda x, cw, cb: ops.mean_all(channel_attention(
               x, CsaParams(cw, cb, csa.spatial_w, csa.spatial_b))),
           [xc, csa.channel_w, csa.channel_b], 24)
    yield ("spatial_attention",
           lambda x, sw, sb: ops.mean_all(spatial_attention(
               x, CsaParams(csa.channel_w, csa.channel_b, sw, sb))),
           [xc, csa.spatial_w, csa.spatial_b], 24)
    yield ("csa_apply",
           lambda x, cw, sw: ops.mean_all(csa_apply(
               x, CsaParams(cw, csa.channel_b, sw, csa.spatial_b))),
           [xc, csa.channel_w, csa.spatial_w], 16)

    # Seeds below are chosen so no probed coordinate sits within the
    # finite-difference step of a rectifier kink or an argmax switch; a probe
    # crossing one reports a large false error for a correct gradient.
    gen_small = init_generator(
        GeneratorConfig(in_channels=1, feat_channels=4, num_rabs=1, mode="stsr"),
        seed=21)
    rab = gen_small.rabs[0]
    xr = _t(rng, (1, 4, 2, 8, 8))
    yield ("rab_forward",
           lambda x, w, a: ops.mean_all(rab_forward(
               x, _swap(rab, conv_w=w, alpha=a))),
           [xr, rab.conv_w, rab.alpha], 12)

    xg = Tensor(np.random.default_rng(13).uniform(0, 1, (1, 1, 2, 8, 8)),
                requires_grad=True)

    def gen_probe(x, sw, rw, uw, cw):
        p = _swap(gen_small, shallow_w=sw, rabs=[_swap(rab, conv_w=rw)],
                  up2_w=uw, recon_w=cw)
        return ops.mean_all(generator_forward(x, p))

    yield ("generator_forward", gen_probe,
           [xg, gen_small.shallow_w, rab.conv_w, gen_small.up2_w,
            gen_small.recon_w], 8)

    disc = init_discriminator(1, seed=17)
    xd = Tensor(np.random.default_rng(19).uniform(0, 1, (1, 1, 2, 16, 16)),
                requires_grad=True)
    yield ("discriminate",
           lambda x, fw: ops.mean_all(discriminate(
               x, _swap(disc, fuse_w=fw), train=False)),
           [xd, disc.fuse_w], 8)

    ys = _t(rng, (1, 1, 2, 4, 4))
    yt = _t(rng, (1, 1, 2, 4, 4))
    yield ("sr_loss", lambda a, b: sr_loss(a, b), [ys, yt], 32)

    sr_ = Tensor(np.full((2, 1, 1, 1, 1), 0.7), requires_grad=True)
    sf_ = Tensor(np.full((2, 1, 1, 1, 1), 0.3), requires_grad=True)
    yield ("lsgan_d_loss",
           lambda r, f: lsgan_d_loss(r, f, 0.0, 1.0), [sr_, sf_], 2)
    yield ("lsgan_g_loss", lambda f: lsgan_g_loss(f, 1.0), [sf_], 2)


def _swap(params, **replacements):
    """Dataclass copy with named tensors replaced (keeps the probe's tensor
    object inside the rebuilt forward)."""
    from dataclasses import replace
    return replace(params, **replacements)


def run_gradient_suite(step: float = 1e-4, tolerance: float = 1e-4,
                       verbose: bool = False) -> list[GradReport]:
    """Execute every entry in float64 and return the reports in order."""
    reports = []
    with using_dtype("float64"):
        for name, f, inputs, coords in _suite_entries():
            rep = finite_diff_check(f, inputs, name=name, step=step,
                                    tolerance=tolerance, max_coords=coords,
                                    rng=np.random.default_rng(99))
            reports.append(rep)
            if verbose:
                print(rep.line())
    return reports
