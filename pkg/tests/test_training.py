"""Training loop contracts: losses, optimizer, descent, persistence."""

import numpy as np
import pytest

from attgan3d import checkpoint as ckpt
from attgan3d import ops
from attgan3d.generator import GeneratorConfig, generator_forward
from attgan3d.tensor import DimensionMismatch, Tensor
from attgan3d.training import (
    AdamState,
    StepReport,
    TrainAbort,
    TrainConfig,
    adam_update,
    init_train_state,
    load_train_state,
    log_line,
    lsgan_d_loss,
    lsgan_g_loss,
    run_training,
    save_train_state,
    sr_loss,
    step_rng,
    train_step,
)

from oracles import mse_oracle


def const(shape, value):
    return Tensor(np.full(shape, value, dtype=np.float32))


def small_cfg(**kw):
    base = dict(mode="stsr", steps=4, batch=1, seed=0, lr_g=1e-3, lr_d=1e-3)
    base.update(kw)
    return TrainConfig(**base)


def small_gcfg(mode="stsr"):
    return GeneratorConfig(in_channels=1, feat_channels=4, num_rabs=1, mode=mode)


def synth_batch(seed=0, n=1, d_lr=2, hw_lr=8):
    # stsr geometry: (d, h, w) -> (2d-1, 4h, 4w)
    rng = np.random.default_rng(seed)
    lr = rng.random((n, 1, d_lr, hw_lr, hw_lr), dtype=np.float32)
    hr = rng.random((n, 1, 2 * d_lr - 1, 4 * hw_lr, 4 * hw_lr), dtype=np.float32)
    return Tensor(lr), Tensor(hr)


class TestLosses:
    def test_sr_loss_identical_is_zero(self):
        x = const((1, 1, 3, 4, 4), 0.7)
        assert sr_loss(x, x).item() == 0.0

    def test_sr_loss_constant_gap(self):
        a = const((2, 1, 3, 4, 4), 3.0)
        b = const((2, 1, 3, 4, 4), 1.0)
        assert sr_loss(a, b).item() == pytest.approx(4.0)

    def test_sr_loss_matches_loop_oracle(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((2, 1, 3, 5, 4)).astype(np.float32)
        b = rng.standard_normal((2, 1, 3, 5, 4)).astype(np.float32)
        got = sr_loss(Tensor(a), Tensor(b)).item()
        assert got == pytest.approx(mse_oracle(a, b), rel=1e-6)

    def test_sr_loss_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            sr_loss(const((1, 1, 3, 4, 4), 0.0), const((1, 1, 5, 4, 4), 0.0))

    def test_sr_loss_symmetry(self):
        rng = np.random.default_rng(1)
        a = Tensor(rng.standard_normal((1, 1, 2, 4, 4)).astype(np.float32))
        b = Tensor(rng.standard_normal((1, 1, 2, 4, 4)).astype(np.float32))
        assert sr_loss(a, b).item() == pytest.approx(sr_loss(b, a).item())

    def test_d_loss_perfect_discriminator(self):
        # real scored at the real label and fake at the fake label: loss 0
        real = const((2, 1, 1, 1, 1), 1.0)
        fake = const((2, 1, 1, 1, 1), 0.0)
        assert lsgan_d_loss(real, fake).item() == pytest.approx(0.0)

    def test_d_loss_undecided_discriminator(self):
        # both scored 0.5: (0.5-1)^2 + (0.5-0)^2 = 0.5
        half = const((3, 1, 1, 1, 1), 0.5)
        assert lsgan_d_loss(half, half).item() == pytest.approx(0.5)

    def test_g_loss_examples(self):
        assert lsgan_g_loss(const((1, 1, 1, 1, 1), 1.0)).item() == pytest.approx(0.0)
        assert lsgan_g_loss(const((1, 1, 1, 1, 1), 0.0)).item() == pytest.approx(1.0)
        assert lsgan_g_loss(const((1, 1, 1, 1, 1), 0.5)).item() == pytest.approx(0.25)

    def test_d_loss_batch_average(self):
        real = Tensor(np.array([1.0, 0.5], dtype=np.float32).reshape(2, 1, 1, 1, 1))
        fake = Tensor(np.array([0.0, 0.5], dtype=np.float32).reshape(2, 1, 1, 1, 1))
        # items: (1-1)^2=0, (0.5-1)^2=0.25 -> mean 0.125 for the real term;
        # (0-0)^2=0, (0.5)^2=0.25 -> mean 0.125 for the fake term
        assert lsgan_d_loss(real, fake).item() == pytest.approx(0.25)


class TestAdam:
    def _one_param(self, grad):
        from collections import OrderedDict
        p = Tensor(np.zeros((1, 1, 1, 1, 1), dtype=np.float32),
                   requires_grad=True)
        if grad is not None:
            p.grad = np.full((1, 1, 1, 1, 1), grad, dtype=np.float32)
        named = OrderedDict([("p", p)])
        return p, named, AdamState.for_params(named)

    def test_missing_grad_leaves_param(self):
        p, named, st = self._one_param(None)
        adam_update(named, st, lr=0.1)
        assert p.data.item() == 0.0
        assert st.t == 1

    def test_first_step_is_signed_learning_rate(self):
        # bias-corrected first step: lr * g / (|g| + eps) ~ lr * sign(g)
        p, named, st = self._one_param(3.0)
        adam_update(named, st, lr=0.05)
        assert p.data.item() == pytest.approx(-0.05, rel=1e-5)
        p2, named2, st2 = self._one_param(-0.001)
        adam_update(named2, st2, lr=0.05)
        assert p2.data.item() == pytest.approx(0.05, rel=1e-4)

    def test_non_finite_gradient_aborts_by_name(self):
        p, named, st = self._one_param(np.nan)
        with pytest.raises(TrainAbort, match="p"):
            adam_update(named, st, lr=0.1)
        assert p.data.item() == 0.0 and st.t == 0

    def test_moments_accumulate(self):
        p, named, st = self._one_param(1.0)
        adam_update(named, st, lr=0.1, beta1=0.9, beta2=0.999)
        assert st.m["p"].item() == pytest.approx(0.1, rel=1e-6)
        assert st.v["p"].item() == pytest.approx(0.001, rel=1e-5)


class TestTrainStep:
    def test_gan_disabled_leaves_discriminator(self):
        state = init_train_state(small_cfg(gan_enabled=False), small_gcfg())
        before = [t.data.copy() for t in state.disc.tensors()]
        report = train_step(synth_batch(), state)
        assert report.l_d is None and report.l_g_adv is None
        assert report.grad_norm_d is None
        for t, b in zip(state.disc.tensors(), before):
            np.testing.assert_array_equal(t.data, b)
        assert state.step == 1 and report.step == 1

    def test_gan_enabled_updates_both(self):
        # discriminator needs >= 16x16 frames: use 4x lr of 8 -> 32
        state = init_train_state(small_cfg(gan_enabled=True), small_gcfg())
        g_before = [t.data.copy() for t in state.gen.tensors()]
        d_before = [t.data.copy() for t in state.disc.tensors()]
        report = train_step(synth_batch(hw_lr=8), state)
        assert report.l_d is not None and report.l_g_adv is not None
        assert np.isfinite([report.l_sr, report.l_g_adv, report.l_d]).all()
        assert any(np.any(t.data != b)
                   for t, b in zip(state.gen.tensors(), g_before))
        assert any(np.any(t.data != b)
                   for t, b in zip(state.disc.tensors(), d_before))

    def test_descent_on_fixed_batch(self):
        # the generator alone must reduce reconstruction loss on one batch
        state = init_train_state(
            small_cfg(gan_enabled=False, lr_g=2e-3), small_gcfg())
        batch = synth_batch(seed=3, hw_lr=4)
        losses = [train_step(batch, state).l_sr for _ in range(50)]
        assert losses[-1] < losses[0]
        assert all(np.isfinite(losses))

    def test_step_rng_is_pure_function_of_seed_and_step(self):
        a = step_rng(7, 3).random(4)
        b = step_rng(7, 3).random(4)
        c = step_rng(7, 4).random(4)
        np.testing.assert_array_equal(a, b)
        assert np.any(a != c)

    def test_log_line_format(self):
        rep = StepReport(step=3, l_sr=0.5, l_g_adv=None, l_d=None,
                         grad_norm_g=1.0, grad_norm_d=None, seconds=0.1234)
        line = log_line(rep)
        assert line.split("\t") == ["3", "5.00000000e-01", "-", "-", "0.123"]


class TestPersistence:
    def _trained_state(self, steps=2, gan=True):
        state = init_train_state(
            small_cfg(gan_enabled=gan, seed=11), small_gcfg())
        for _ in range(steps):
            train_step(synth_batch(seed=state.step + 20, hw_lr=8), state)
        return state

    def test_roundtrip_bytes_identical(self, tmp_path):
        state = self._trained_state()
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_train_state(p1, state)
        save_train_state(p2, load_train_state(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_roundtrip_restores_exact_values(self, tmp_path):
        state = self._trained_state()
        path = tmp_path / "c.ckpt"
        save_train_state(path, state)
        back = load_train_state(path)
        assert back.step == state.step
        for (n1, t1), (n2, t2) in zip(state.gen.named().items(),
                                      back.gen.named().items()):
            assert n1 == n2
            np.testing.assert_array_equal(t1.data, t2.data)
        for name, bn in state.disc.bn_states().items():
            np.testing.assert_array_equal(bn.mean, back.disc.bn_states()[name].mean)
        assert back.opt_g.t == state.opt_g.t
        for name in state.opt_g.m:
            np.testing.assert_array_equal(state.opt_g.m[name], back.opt_g.m[name])

    def test_resume_matches_uninterrupted_run(self, tmp_path):
        # two steps straight through vs. checkpoint after one + resume
        def batch_fn(step, rng):
            return synth_batch(seed=step + 40, hw_lr=8)

        full = init_train_state(small_cfg(seed=5), small_gcfg())
        run_training(full, batch_fn, 2)

        half = init_train_state(small_cfg(seed=5), small_gcfg())
        run_training(half, batch_fn, 1)
        path = tmp_path / "mid.ckpt"
        save_train_state(path, half)
        resumed = load_train_state(path)
        run_training(resumed, batch_fn, 1)

        assert resumed.step == full.step == 2
        for name, t in full.gen.named().items():
            np.testing.assert_array_equal(
                t.data, resumed.gen.named()[name].data,
                err_msg=f"generator {name} diverged after resume")
        for name, t in full.disc.named().items():
            np.testing.assert_array_equal(
                t.data, resumed.disc.named()[name].data,
                err_msg=f"discriminator {name} diverged after resume")
        for name, bn in full.disc.bn_states().items():
            np.testing.assert_array_equal(
                bn.mean, resumed.disc.bn_states()[name].mean)
            np.testing.assert_array_equal(
                bn.var, resumed.disc.bn_states()[name].var)

    def test_bad_magic_error(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(ckpt.BadMagic):
            load_train_state(path)

    def test_unsupported_version_error(self, tmp_path):
        state = self._trained_state(steps=0)
        path = tmp_path / "ver.ckpt"
        save_train_state(path, state)
        blob = bytearray(path.read_bytes())
        blob[4:8] = (99).to_bytes(4, "little")
        path.write_bytes(bytes(blob))
        with pytest.raises(ckpt.UnsupportedVersion):
            load_train_state(path)

    def test_truncated_error(self, tmp_path):
        state = self._trained_state(steps=0)
        path = tmp_path / "cut.ckpt"
        save_train_state(path, state)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(ckpt.TruncatedCheckpoint):
            load_train_state(path)

    def test_config_survives_roundtrip(self, tmp_path):
        cfg = small_cfg(gan_enabled=False, disc_branches="motion_only",
                        lambda_adv=0.25, seed=9)
        state = init_train_state(cfg, small_gcfg())
        path = tmp_path / "cfg.ckpt"
        save_train_state(path, state)
        back = load_train_state(path)
        assert back.config == cfg
        assert back.gen_config == state.gen_config


class TestRunTraining:
    def test_log_file_written(self, tmp_path):
        state = init_train_state(small_cfg(gan_enabled=False), small_gcfg())
        log = tmp_path / "log.tsv"
        reports = run_training(
            state, lambda s, r: synth_batch(seed=s, hw_lr=4), 3, log_path=log)
        lines = log.read_text().splitlines()
        assert len(lines) == len(reports) == 3
        assert lines[0].startswith("1\t")

    def test_periodic_checkpoint(self, tmp_path):
        state = init_train_state(small_cfg(gan_enabled=False), small_gcfg())
        path = tmp_path / "per.ckpt"
        run_training(state, lambda s, r: synth_batch(seed=s, hw_lr=4), 4,
                     checkpoint_path=path, checkpoint_every=2)
        assert load_train_state(path).step == 4

    def test_mode_disagreement_rejected(self):
        with pytest.raises(ValueError):
            init_train_state(small_cfg(mode="ssr"), small_gcfg(mode="tsr"))

    def test_invalid_config_values_rejected(self):
        with pytest.raises(ValueError):
            small_cfg(lr_g=-1.0)
        with pytest.raises(ValueError):
            small_cfg(batch=0)
        with pytest.raises(ValueError):
            small_cfg(disc_branches="all")
