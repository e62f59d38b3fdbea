"""Losses, optimizer, adversarial training loop, and state persistence.

Per step: the discriminator is updated on a real clip and a detached fake
clip with least-squares labels, then the generator is updated on the sum of
the reconstruction loss and the weighted adversarial term. Batches are drawn
from a per-step seeded stream so an interrupted run resumed from a
checkpoint reproduces the uninterrupted run bit for bit.
"""

from __future__ import annotations

import time
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import ops
from .discriminator import (
    BRANCH_MODES,
    DiscriminatorParams,
    discriminate,
    init_discriminator,
)
from .generator import (
    MODES,
    GeneratorConfig,
    GeneratorParams,
    generator_forward,
    init_generator,
)
from .tensor import DimensionMismatch, Tensor, zero_grads


class TrainAbort(RuntimeError):
    """Raised when a loss or gradient goes non-finite; names the term."""


@dataclass
class TrainConfig:
    lr_g: float = 1e-4
    lr_d: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    lambda_adv: float = 1.0
    label_fake: float = 0.0
    label_real: float = 1.0
    steps: int = 100
    batch: int = 1
    seed: int = 0
    mode: str = "stsr"
    gan_enabled: bool = True
    disc_branches: str = "both"

    def __post_init__(self):
        if not (0.0 <= self.label_fake < self.label_real <= 1.0):
            raise ValueError(
                f"labels must satisfy 0 <= fake < real <= 1, got "
                f"{self.label_fake}, {self.label_real}")
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ValueError("learning rates must be positive")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            raise ValueError("adam betas must lie in [0, 1)")
        if self.steps < 1 or self.batch < 1:
            raise ValueError("steps and batch must be >= 1")
        if self.lambda_adv < 0:
            raise ValueError("lambda_adv must be >= 0")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.disc_branches not in BRANCH_MODES:
            raise ValueError(f"unknown disc_branches {self.disc_branches!r}")


# ---------------------------------------------------------------------------
# losses


def sr_loss(i_sr: Tensor, i_hr: Tensor) -> Tensor:
    """Mean squared error over all elements (mean keeps the magnitude
    resolution-invariant; the gradient direction matches a summed square)."""
    if i_sr.data.shape != i_hr.data.shape:
        raise DimensionMismatch(
            f"sr_loss: shapes {i_sr.data.shape} vs {i_hr.data.shape}")
    diff = ops.sub(i_sr, i_hr)
    return ops.mean_all(ops.mul(diff, diff))


def lsgan_d_loss(score_real: Tensor, score_fake: Tensor,
                 a: float = 0.0, b: float = 1.0) -> Tensor:
    dr = ops.shift(score_real, -b)
    df = ops.shift(score_fake, -a)
    return ops.add(ops.mean_all(ops.mul(dr, dr)), ops.mean_all(ops.mul(df, df)))


def lsgan_g_loss(score_fake: Tensor, b: float = 1.0) -> Tensor:
    df = ops.shift(score_fake, -b)
    return ops.mean_all(ops.mul(df, df))


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: "OrderedDict[str, np.ndarray]"
    v: "OrderedDict[str, np.ndarray]"
    t: int = 0

    @classmethod
    def for_params(cls, named: "OrderedDict[str, Tensor]") -> "AdamState":
        m = OrderedDict((k, np.zeros_like(p.data)) for k, p in named.items())
        v = OrderedDict((k, np.zeros_like(p.data)) for k, p in named.items())
        return cls(m=m, v=v, t=0)


def adam_update(named: "OrderedDict[str, Tensor]", state: AdamState, lr: float,
                beta1: float = 0.9, beta2: float = 0.999,
                eps: float = 1e-8) -> None:
    """One bias-corrected step over every named parameter. A parameter with
    no gradient slot is treated as having a zero gradient."""
    for name, p in named.items():
        g = p.grad
        if g is not None and not np.isfinite(g).all():
            raise TrainAbort(f"non-finite gradient for {name}")
    state.t += 1
    t = state.t
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in named.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.data.dtype)


# ---------------------------------------------------------------------------
# training state


@dataclass
class TrainState:
    config: TrainConfig
    gen_config: GeneratorConfig
    gen: GeneratorParams
    disc: DiscriminatorParams
    opt_g: AdamState
    opt_d: AdamState
    step: int = 0


def init_train_state(config: TrainConfig, gen_config: GeneratorConfig) -> TrainState:
    if gen_config.mode != config.mode:
        raise ValueError(
            f"mode disagreement: train {config.mode!r} vs generator "
            f"{gen_config.mode!r}")
    gen = init_generator(gen_config, seed=config.seed)
    disc = init_discriminator(gen_config.in_channels, seed=config.seed + 1)
    return TrainState(
        config=config, gen_config=gen_config, gen=gen, disc=disc,
        opt_g=AdamState.for_params(gen.named()),
        opt_d=AdamState.for_params(disc.named()),
    )


def step_rng(seed: int, step: int) -> np.random.Generator:
    """Stream for one step, independent of training history."""
    return np.random.default_rng(np.random.SeedSequence([seed, step]))


@dataclass
class StepReport:
    step: int
    l_sr: float
    l_g_adv: float | None
    l_d: float | None
    grad_norm_g: float
    grad_norm_d: float | None
    seconds: float = 0.0


def _loss_value(loss: Tensor, term: str, step: int) -> float:
    val = loss.item()
    if not np.isfinite(val):
        raise TrainAbort(f"{term} is {val} at step {step}")
    return float(val)


def _grad_norm(tensors) -> float:
    total = 0.0
    for t in tensors:
        if t.grad is not None:
            total += float((t.grad.astype(np.float64) ** 2).sum())
    return float(np.sqrt(total))


def train_step(batch: tuple[Tensor, Tensor], state: TrainState) -> StepReport:
    """One optimization step: discriminator first (when adversarial training
    is enabled), then generator on sr_loss + lambda_adv * adversarial term."""
    cfg = state.config
    lr_clip, hr_clip = batch
    started = time.perf_counter()

    fake = generator_forward(lr_clip, state.gen)

    l_d = l_g_adv = None
    grad_norm_d = None
    if cfg.gan_enabled:
        score_real = discriminate(hr_clip, state.disc, train=True,
                                  branches=cfg.disc_branches)
        score_fake_d = discriminate(fake.detach(), state.disc, train=True,
                                    branches=cfg.disc_branches)
        d_loss = lsgan_d_loss(score_real, score_fake_d,
                              cfg.label_fake, cfg.label_real)
        l_d = _loss_value(d_loss, "l_d", state.step)
        disc_tensors = state.disc.tensors()
        zero_grads(disc_tensors)
        d_loss.backward()
        grad_norm_d = _grad_norm(disc_tensors)
        adam_update(state.disc.named(), state.opt_d, cfg.lr_d,
                    cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)

    l_sr_t = sr_loss(fake, hr_clip)
    l_sr = _loss_value(l_sr_t, "l_sr", state.step)
    if cfg.gan_enabled:
        score_fake_g = discriminate(fake, state.disc, train=True,
                                    branches=cfg.disc_branches)
        g_adv_t = lsgan_g_loss(score_fake_g, cfg.label_real)
        l_g_adv = _loss_value(g_adv_t, "l_g_adv", state.step)
        g_loss = ops.add(l_sr_t, ops.scale(g_adv_t, cfg.lambda_adv))
    else:
        g_loss = l_sr_t

    gen_tensors = state.gen.tensors()
    zero_grads(gen_tensors)
    g_loss.backward()
    grad_norm_g = _grad_norm(gen_tensors)
    adam_update(state.gen.named(), state.opt_g, cfg.lr_g,
                cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)

    state.step += 1
    return StepReport(step=state.step, l_sr=l_sr, l_g_adv=l_g_adv, l_d=l_d,
                      grad_norm_g=grad_norm_g, grad_norm_d=grad_norm_d,
                      seconds=time.perf_counter() - started)


def log_line(report: StepReport) -> str:
    def fmt(v):
        return "-" if v is None else f"{v:.8e}"

    return "\t".join([str(report.step), fmt(report.l_sr), fmt(report.l_g_adv),
                      fmt(report.l_d), f"{report.seconds:.3f}"])


def run_training(state: TrainState, batch_fn, steps: int, log_path=None,
                 checkpoint_path=None, checkpoint_every: int = 0,
                 on_step=None) -> list[StepReport]:
    """Drive train_step for `steps` more steps.

    batch_fn(step, rng) must return an (lr, hr) Tensor pair; it receives a
    per-step generator derived from (config.seed, step) only, so resumed runs
    see identical batches.
    """
    reports = []
    log_file = open(log_path, "a") if log_path else None
    try:
        for _ in range(steps):
            rng = step_rng(state.config.seed, state.step)
            batch = batch_fn(state.step, rng)
            report = train_step(batch, state)
            reports.append(report)
            if log_file:
                log_file.write(log_line(report) + "\n")
                log_file.flush()
            if on_step:
                on_step(report, state)
            if (checkpoint_path and checkpoint_every
                    and state.step % checkpoint_every == 0):
                save_train_state(checkpoint_path, state)
    finally:
        if log_file:
            log_file.close()
    return reports


# ---------------------------------------------------------------------------
# persistence

_MODE_INDEX = {m: i for i, m in enumerate(MODES)}
_BRANCH_INDEX = {b: i for i, b in enumerate(BRANCH_MODES)}

_F64_KEYS = ("lr_g", "lr_d", "adam_beta1", "adam_beta2", "adam_eps",
             "lambda_adv", "label_fake", "label_real", "prelu_init_alpha")
_U64_KEYS = ("steps", "batch", "seed", "in_channels", "feat_channels",
             "num_rabs", "mode", "gan_enabled", "disc_branches")


def _config_arrays(state: TrainState) -> "OrderedDict[str, np.ndarray]":
    cfg, gcfg = state.config, state.gen_config
    raw = {
        "lr_g": cfg.lr_g, "lr_d": cfg.lr_d, "adam_beta1": cfg.adam_beta1,
        "adam_beta2": cfg.adam_beta2, "adam_eps": cfg.adam_eps,
        "lambda_adv": cfg.lambda_adv, "label_fake": cfg.label_fake,
        "label_real": cfg.label_real, "prelu_init_alpha": gcfg.prelu_init_alpha,
        "steps": cfg.steps, "batch": cfg.batch, "seed": cfg.seed,
        "in_channels": gcfg.in_channels, "feat_channels": gcfg.feat_channels,
        "num_rabs": gcfg.num_rabs, "mode": _MODE_INDEX[cfg.mode],
        "gan_enabled": int(cfg.gan_enabled),
        "disc_branches": _BRANCH_INDEX[cfg.disc_branches],
    }
    out = OrderedDict()
    for key in _F64_KEYS:
        out[f"config/{key}"] = np.array([raw[key]], dtype="<f8")
    for key in _U64_KEYS:
        out[f"config/{key}"] = np.array([raw[key]], dtype="<u8")
    return out


def _configs_from_arrays(arrays) -> tuple[TrainConfig, GeneratorConfig]:
    def f(key):
        return float(arrays[f"config/{key}"][0])

    def u(key):
        return int(arrays[f"config/{key}"][0])

    cfg = TrainConfig(
        lr_g=f("lr_g"), lr_d=f("lr_d"), adam_beta1=f("adam_beta1"),
        adam_beta2=f("adam_beta2"), adam_eps=f("adam_eps"),
        lambda_adv=f("lambda_adv"), label_fake=f("label_fake"),
        label_real=f("label_real"), steps=u("steps"), batch=u("batch"),
        seed=u("seed"), mode=MODES[u("mode")],
        gan_enabled=bool(u("gan_enabled")),
        disc_branches=BRANCH_MODES[u("disc_branches")],
    )
    gcfg = GeneratorConfig(
        in_channels=u("in_channels"), feat_channels=u("feat_channels"),
        num_rabs=u("num_rabs"), mode=MODES[u("mode")],
        prelu_init_alpha=f("prelu_init_alpha"),
    )
    return cfg, gcfg


def pack_train_state(state: TrainState) -> "OrderedDict[str, np.ndarray]":
    arrays = _config_arrays(state)
    for name, p in state.gen.named().items():
        arrays[name] = p.data
    for name, p in state.disc.named().items():
        arrays[name] = p.data
    for name, bn in state.disc.bn_states().items():
        arrays[f"bnstat/{name}/mean"] = bn.mean.astype("<f8")
        arrays[f"bnstat/{name}/var"] = bn.var.astype("<f8")
    for tag, opt, params in (("adam_g", state.opt_g, state.gen),
                             ("adam_d", state.opt_d, state.disc)):
        arrays[f"{tag}/t"] = np.array([opt.t], dtype="<u8")
        for name in params.named():
            arrays[f"{tag}/{name}/m"] = opt.m[name]
            arrays[f"{tag}/{name}/v"] = opt.v[name]
    return arrays


def save_train_state(path, state: TrainState) -> None:
    ckpt.write_arrays(path, pack_train_state(state), state.step)


def load_train_state(path) -> TrainState:
    arrays, step = ckpt.read_arrays(path)
    cfg, gcfg = _configs_from_arrays(arrays)
    state = init_train_state(cfg, gcfg)
    state.step = step

    def restore(named):
        for name, p in named.items():
            stored = arrays[name]
            if stored.shape != p.data.shape:
                raise ckpt.CheckpointError(
                    f"{name}: stored shape {stored.shape} != expected {p.data.shape}")
            p.data = stored.astype(p.data.dtype, copy=True)

    restore(state.gen.named())
    restore(state.disc.named())
    for name, bn in state.disc.bn_states().items():
        bn.mean[:] = arrays[f"bnstat/{name}/mean"]
        bn.var[:] = arrays[f"bnstat/{name}/var"]
    for tag, opt, params in (("adam_g", state.opt_g, state.gen),
                             ("adam_d", state.opt_d, state.disc)):
        opt.t = int(arrays[f"{tag}/t"][0])
        for name, p in params.named().items():
            opt.m[name] = arrays[f"{tag}/{name}/m"].astype(p.data.dtype, copy=True)
            opt.v[name] = arrays[f"{tag}/{name}/v"].astype(p.data.dtype, copy=True)
    return state
