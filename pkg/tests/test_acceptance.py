"""Acceptance gate: every top-level deliverable contract in one place.

Each test prints one [PASS]/[FAIL] line (run with -s to stream them). The
criteria cover gradient correctness, kernel oracles, network geometry,
attention identities, optimization descent, adversarial smoke with resume
exactness, metric values, degradation geometry, and the ablation matrix.
"""

from contextlib import contextmanager

import numpy as np
import pytest

from attgan3d import data as dat
from attgan3d import kernels, ops
from attgan3d.attention import CsaParams, channel_attention, csa_apply, spatial_attention
from attgan3d.discriminator import discriminate
from attgan3d.generator import (
    MODES,
    GeneratorConfig,
    RabParams,
    generator_forward,
    init_generator,
    output_geometry,
    rab_forward,
)
from attgan3d.gradsuite import run_gradient_suite
from attgan3d.metrics import evaluate_clip, psnr, ssim
from attgan3d.tensor import Tensor, no_grad, scalar, using_dtype
from attgan3d.training import (
    TrainConfig,
    init_train_state,
    load_train_state,
    run_training,
    save_train_state,
    train_step,
)

from oracles import conv3d_oracle, psnr_oracle, ssim_oracle


@contextmanager
def criterion(num, title):
    record = {}
    try:
        yield record
    except Exception:
        print(f"[FAIL] criterion {num}: {title}")
        raise
    detail = " ".join(f"{k}={v}" for k, v in record.items())
    print(f"[PASS] criterion {num}: {title}" + (f" ({detail})" if detail else ""))


def random_conv_instance(rng):
    n = int(rng.integers(1, 3))
    cin = int(rng.integers(1, 4))
    cout = int(rng.integers(1, 4))
    dhw = tuple(int(rng.integers(1, 7)) for _ in range(3))
    k = tuple(int(rng.integers(1, s + 1)) for s in dhw)
    stride = tuple(int(rng.integers(1, 3)) for _ in range(3))
    pad = tuple(int(rng.integers(0, 2)) for _ in range(3))
    x = rng.standard_normal((n, cin) + dhw)
    w = rng.standard_normal((cout, cin) + k)
    b = rng.standard_normal(cout)
    return x, w, b, stride, pad


def test_criterion_1_gradient_suite():
    with criterion(1, "finite differences confirm every operator gradient") as rec:
        reports = run_gradient_suite(step=1e-4, tolerance=1e-4)
        worst = max(r.max_rel_err for r in reports)
        failed = [r.name for r in reports if not r.passed]
        assert not failed, f"gradient failures: {failed}"
        rec["ops"] = len(reports)
        rec["max_rel_err"] = f"{worst:.2e}"


def test_criterion_2_conv_oracles_and_adjoint():
    with criterion(2, "conv kernels match brute-force oracles and adjoint"):
        rng = np.random.default_rng(2024)
        with using_dtype("float64"):
            worst_fwd = 0.0
            for _ in range(50):
                x, w, b, stride, pad = random_conv_instance(rng)
                want = conv3d_oracle(x, w, b, stride, pad)
                if min(want.shape[2:]) < 1:
                    continue
                got = ops.conv3d(
                    Tensor(x), Tensor(w),
                    Tensor(b.reshape(1, -1, 1, 1, 1)), stride, pad).data
                err = np.max(np.abs(got - want)) / max(np.max(np.abs(want)), 1e-12)
                worst_fwd = max(worst_fwd, err)
            assert worst_fwd <= 1e-8, f"forward error {worst_fwd:.3e}"

            worst_adj = 0.0
            for _ in range(50):
                x, w, _, stride, pad = random_conv_instance(rng)
                od = tuple(
                    (x.shape[2 + i] + 2 * pad[i] - w.shape[2 + i]) // stride[i] + 1
                    for i in range(3))
                if min(od) < 1:
                    continue
                y = rng.standard_normal((x.shape[0], w.shape[0]) + od)
                lhs = float((kernels.gather(x, w, stride, pad, od) * y).sum())
                rhs = float(
                    (x * kernels.scatter(y, w, stride, pad, x.shape[2:])).sum())
                err = abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-12)
                worst_adj = max(worst_adj, err)
            assert worst_adj <= 1e-8, f"adjoint identity error {worst_adj:.3e}"


def test_criterion_3_generator_shape_contracts():
    with criterion(3, "generator realizes the mode geometry table") as rec:
        checked = 0
        for mode in MODES:
            cfg = GeneratorConfig(in_channels=1, feat_channels=4, num_rabs=1,
                                  mode=mode)
            params = init_generator(cfg, seed=0)
            for d in range(2, 9):
                for h in (8, 16, 32):
                    for w in (8, 16, 32):
                        x = Tensor(np.zeros((1, 1, d, h, w), dtype=np.float32))
                        with no_grad():
                            out = generator_forward(x, params)
                        expect = (1, 1) + output_geometry(mode, d, h, w)
                        assert out.data.shape == expect, (
                            f"{mode} d={d} h={h} w={w}: {out.data.shape} "
                            f"!= {expect}")
                        checked += 1
        rec["cases"] = checked


def test_criterion_4_attention_identities():
    with criterion(4, "attention identities and gate ranges hold"):
        rng = np.random.default_rng(4)
        feat = 8
        f = Tensor(rng.standard_normal((2, feat, 3, 8, 8)).astype(np.float32))

        # zero-parameter unit: both gates exactly 0.5, so csa is 0.25x and a
        # zero residual block reduces to the identity
        out = csa_apply(f, CsaParams.zeros(feat))
        np.testing.assert_array_equal(out.data, np.float32(0.25) * f.data)
        rab = RabParams(
            conv_w=Tensor(np.zeros((feat, feat, 3, 3, 3), dtype=np.float32)),
            conv_b=Tensor(np.zeros((1, feat, 1, 1, 1), dtype=np.float32)),
            alpha=scalar(0.25),
            csa=CsaParams.zeros(feat))
        np.testing.assert_array_equal(rab_forward(f, rab).data, f.data)

        # random-parameter gates stay strictly inside (0,1) and are constant
        # along the axes they broadcast over
        params = CsaParams.create(feat, rng)
        m_c = channel_attention(f, params)
        f_prime = ops.mul(m_c, f)
        m_s = spatial_attention(f_prime, params)
        for m in (m_c.data, m_s.data):
            assert np.all(m > 0.0) and np.all(m < 1.0)
        # max-min == 0 is variance 0 without np.var's inexact float32 mean
        full_c = np.broadcast_to(m_c.data, f.data.shape)
        assert np.max(np.ptp(full_c, axis=(2, 3, 4))) == 0.0
        full_s = np.broadcast_to(m_s.data, f.data.shape)
        assert np.max(np.ptp(full_s, axis=1)) == 0.0


def test_criterion_5_overfit_descent():
    with criterion(5, "generator overfit beats the classical baseline "
                      "by 1 dB") as rec:
        hr = dat.synth_video("moving_bars", 7, 64, 64, velocity=1.5, seed=3)
        lr, target = dat.make_pair(hr, "stsr")
        base = evaluate_clip(dat.baseline_upscale(lr, "stsr"), target)
        goal = base.psnr_mean + 1.0

        cfg = TrainConfig(mode="stsr", gan_enabled=False, lr_g=2e-3, seed=0)
        gcfg = GeneratorConfig(in_channels=1, feat_channels=16, num_rabs=3,
                               mode="stsr")
        state = init_train_state(cfg, gcfg)
        batch = (dat.clip_to_tensor(lr), dat.clip_to_tensor(target))

        reached = None
        for _ in range(2000 // 25):
            for _ in range(25):
                train_step(batch, state)
            with no_grad():
                sr = generator_forward(batch[0], state.gen)
            score = evaluate_clip(dat.tensor_to_clip(sr), target).psnr_mean
            if score >= goal:
                reached = score
                break
        assert reached is not None, (
            f"psnr {score:.2f} dB after {state.step} steps, needed {goal:.2f}")
        rec["steps"] = state.step
        rec["psnr_db"] = f"{reached:.2f}"
        rec["baseline_db"] = f"{base.psnr_mean:.2f}"


def _smoke_batch_fn(step, rng):
    hr = dat.synth_video("moving_bars", 3, 32, 32, velocity=1.5,
                         seed=int(rng.integers(0, 2 ** 31)))
    lr, target = dat.make_pair(hr, "stsr")
    return dat.clip_to_tensor(lr), dat.clip_to_tensor(target)


def test_criterion_6_adversarial_smoke_and_resume(tmp_path):
    with criterion(6, "200 adversarial steps stay finite and resume "
                      "bit-exact") as rec:
        cfg = TrainConfig(mode="stsr", gan_enabled=True, seed=6)
        gcfg = GeneratorConfig(in_channels=1, feat_channels=8, num_rabs=1,
                               mode="stsr")

        state = init_train_state(cfg, gcfg)
        first = run_training(state, _smoke_batch_fn, 100)
        mid = tmp_path / "mid.ckpt"
        save_train_state(mid, state)
        second = run_training(state, _smoke_batch_fn, 100)
        reports = first + second

        for rep in reports:
            assert np.isfinite([rep.l_sr, rep.l_g_adv, rep.l_d]).all(), (
                f"non-finite loss at step {rep.step}")
        with no_grad():
            lr_t, hr_t = _smoke_batch_fn(state.step, np.random.default_rng(0))
            score = discriminate(hr_t, state.disc, train=False)
        assert np.all(score.data > 0.0) and np.all(score.data < 1.0)

        resumed = load_train_state(mid)
        resumed_reports = run_training(resumed, _smoke_batch_fn, 100)
        for name, t in state.gen.named().items():
            assert t.data.tobytes() == resumed.gen.named()[name].data.tobytes(), (
                f"generator {name} differs after resume")
        for name, t in state.disc.named().items():
            assert t.data.tobytes() == resumed.disc.named()[name].data.tobytes(), (
                f"discriminator {name} differs after resume")
        assert [r.l_sr for r in second] == [r.l_sr for r in resumed_reports]
        rec["steps"] = state.step
        rec["final_l_d"] = f"{reports[-1].l_d:.4f}"


def test_criterion_7_metric_reference_values():
    with criterion(7, "metric implementations hit closed-form and oracle "
                      "values"):
        x = np.zeros((32, 32))
        y = np.full((32, 32), 16.0 / 255.0)
        expected = 20.0 * np.log10(255.0 / 16.0)
        assert abs(psnr(x, y) - expected) <= 1e-6

        rng = np.random.default_rng(7)
        img = rng.random((24, 24))
        assert ssim(img, img) == 1.0

        a = rng.random((16, 16))
        b = np.clip(a + 0.1 * rng.standard_normal((16, 16)), 0, 1)
        assert abs(psnr(a, b) - psnr_oracle(a, b, 1.0)) <= 1e-8
        assert abs(ssim(a, b) - ssim_oracle(a, b)) <= 1e-8


def test_criterion_8_degradation_geometry():
    with criterion(8, "degradation halves frames and quarters resolution"):
        rng = np.random.default_rng(8)
        hr = dat.VideoClip(rng.random((7, 1, 448, 256), dtype=np.float32))
        lr = dat.degrade(hr)
        assert lr.data.shape == (4, 1, 112, 64)
        np.testing.assert_array_equal(
            lr.data, dat.degrade(hr).data)  # deterministic

        flat = dat.VideoClip(np.full((7, 1, 448, 256), 0.25, dtype=np.float32))
        np.testing.assert_allclose(dat.degrade(flat).data, 0.25, atol=1e-6)


def test_criterion_9_ablation_matrix():
    with criterion(9, "ablation matrix trains 4 configurations without "
                      "divergence") as rec:
        rows = (("only_generator", False, "both"),
                ("texture_only", True, "texture_only"),
                ("motion_only", True, "motion_only"),
                ("full_gan", True, "both"))
        finals = {}
        for name, gan, branches in rows:
            cfg = TrainConfig(mode="stsr", gan_enabled=gan,
                              disc_branches=branches, seed=9)
            gcfg = GeneratorConfig(in_channels=1, feat_channels=8, num_rabs=1,
                                   mode="stsr")
            state = init_train_state(cfg, gcfg)
            reports = run_training(state, _smoke_batch_fn, 100)
            for rep in reports:
                assert np.isfinite(rep.l_sr), f"{name}: l_sr diverged"
                if rep.l_d is not None:
                    assert np.isfinite(rep.l_d), f"{name}: l_d diverged"
                if rep.l_g_adv is not None:
                    assert np.isfinite(rep.l_g_adv), f"{name}: l_g_adv diverged"
            finals[name] = reports[-1].l_sr
        assert set(finals) == {r[0] for r in rows}
        rec["final_l_sr"] = "/".join(f"{finals[n]:.3f}" for n, _, _ in rows)
