"""Command-line surface: train / infer / eval / gradcheck / ablate.

Configuration is a flat key=value file; command-line flags override file
values; unknown keys are rejected by name. Exit codes: 0 success, 1 usage
error, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import data as dat
from .discriminator import BRANCH_MODES
from .generator import MODES, GeneratorConfig, generator_forward
from .gradsuite import run_gradient_suite
from .metrics import evaluate_clip
from .tensor import DegenerateBatch, InvalidGeometry, Tensor, no_grad
from .training import (
    TrainAbort,
    TrainConfig,
    init_train_state,
    load_train_state,
    log_line,
    run_training,
    save_train_state,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

SYNTH_KINDS = ("moving_bars", "drifting_gaussian", "sinusoid_grating")


class ConfigError(Exception):
    pass


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _choice(options):
    def cast(text):
        low = text.strip().lower()
        if low not in options:
            raise ValueError(f"{text!r} not in {options}")
        return low
    return cast


# key -> (caster, default); None default means "unset"
_SCHEMA = {
    "in_channels": (int, 1),
    "feat_channels": (int, 16),
    "num_rabs": (int, 3),
    "prelu_init_alpha": (float, 0.25),
    "lr_g": (float, 1e-4),
    "lr_d": (float, 1e-4),
    "adam_beta1": (float, 0.9),
    "adam_beta2": (float, 0.999),
    "adam_eps": (float, 1e-8),
    "lambda_adv": (float, 1.0),
    "label_fake": (float, 0.0),
    "label_real": (float, 1.0),
    "steps": (int, 100),
    "batch": (int, 1),
    "seed": (int, 0),
    "mode": (_choice(MODES), "stsr"),
    "gan_enabled": (_bool, True),
    "disc_branches": (_choice(BRANCH_MODES), "both"),
    "dataset_root": (str, None),
    "split": (str, "train"),
    "checkpoint_in": (str, None),
    "checkpoint_out": (str, None),
    "checkpoint_every": (int, 0),
    "log_path": (str, None),
    "out_path": (str, None),
    "clip_path": (str, None),
    "patch_frames": (int, 7),
    "patch_size": (int, 64),
    "synth_kind": (_choice(SYNTH_KINDS), "moving_bars"),
    "synth_velocity": (float, 1.5),
    "synth_fixed": (_bool, True),
}


def load_config(path=None, overrides=None) -> dict:
    values = {k: d for k, (_, d) in _SCHEMA.items()}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
            key, _, val = line.partition("=")
            key = key.strip()
            if key not in _SCHEMA:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            caster = _SCHEMA[key][0]
            try:
                values[key] = caster(val.strip())
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}")
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        caster = _SCHEMA[key][0]
        try:
            values[key] = caster(val) if isinstance(val, str) else val
        except ValueError as exc:
            raise ConfigError(f"flag --{key}: {exc}")
    return values


def _print_resolved(values: dict) -> None:
    print("# resolved configuration")
    for key in sorted(values):
        val = values[key]
        print(f"# {key}={'' if val is None else val}")


def build_configs(values: dict) -> tuple[TrainConfig, GeneratorConfig]:
    try:
        cfg = TrainConfig(
            lr_g=values["lr_g"], lr_d=values["lr_d"],
            adam_beta1=values["adam_beta1"], adam_beta2=values["adam_beta2"],
            adam_eps=values["adam_eps"], lambda_adv=values["lambda_adv"],
            label_fake=values["label_fake"], label_real=values["label_real"],
            steps=values["steps"], batch=values["batch"], seed=values["seed"],
            mode=values["mode"], gan_enabled=values["gan_enabled"],
            disc_branches=values["disc_branches"])
        gcfg = GeneratorConfig(
            in_channels=values["in_channels"],
            feat_channels=values["feat_channels"],
            num_rabs=values["num_rabs"], mode=values["mode"],
            prelu_init_alpha=values["prelu_init_alpha"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg, gcfg


# ---------------------------------------------------------------------------
# batch sources


def _stack_pairs(pairs) -> tuple[Tensor, Tensor]:
    lr = np.concatenate([dat.clip_to_tensor(p[0]).data for p in pairs])
    hr = np.concatenate([dat.clip_to_tensor(p[1]).data for p in pairs])
    return Tensor(lr), Tensor(hr)


def make_batch_fn(values: dict):
    """Batch source: random aligned crops from an indexed dataset when
    dataset_root is set, otherwise synthetic clips."""
    mode = values["mode"]
    batch = values["batch"]
    frames = values["patch_frames"]
    size = values["patch_size"]

    if values["dataset_root"]:
        entries = dat.load_index(values["dataset_root"], values["split"])
        if not entries:
            raise ConfigError(
                f"dataset {values['dataset_root']}/{values['split']} is empty")

        def from_dataset(step, rng):
            pairs = []
            for _ in range(batch):
                entry = entries[int(rng.integers(0, len(entries)))]
                hr = dat.read_video(entry.path)
                t0 = int(rng.integers(0, hr.frames - frames + 1))
                y0 = 4 * int(rng.integers(0, (hr.height - size) // 4 + 1))
                x0 = 4 * int(rng.integers(0, (hr.width - size) // 4 + 1))
                patch = dat.VideoClip(
                    hr.data[t0:t0 + frames, :, y0:y0 + size, x0:x0 + size].copy())
                pairs.append(dat.make_pair(patch, mode))
            return _stack_pairs(pairs)

        return from_dataset

    kind = values["synth_kind"]
    velocity = values["synth_velocity"]
    fixed_seed = values["seed"]
    fixed = values["synth_fixed"]

    def from_synth(step, rng):
        pairs = []
        for _ in range(batch):
            seed = fixed_seed if fixed else int(rng.integers(0, 2 ** 31))
            hr = dat.synth_video(kind, frames, size, size,
                                 velocity=velocity, seed=seed)
            pairs.append(dat.make_pair(hr, mode))
        return _stack_pairs(pairs)

    return from_synth


# ---------------------------------------------------------------------------
# commands


def _infer_clip(state, lr_clip: dat.VideoClip) -> dat.VideoClip:
    with no_grad():
        sr = generator_forward(dat.clip_to_tensor(lr_clip), state.gen)
    return dat.tensor_to_clip(sr)


def cmd_train(values: dict) -> int:
    if values["checkpoint_in"]:
        state = load_train_state(values["checkpoint_in"])
        steps = values["steps"]
    else:
        cfg, gcfg = build_configs(values)
        state = init_train_state(cfg, gcfg)
        steps = cfg.steps
    batch_fn = make_batch_fn(values)

    def echo(report, _state):
        print(log_line(report))

    log_path = values["log_path"] or values["out_path"]
    run_training(state, batch_fn, steps, log_path=log_path,
                 checkpoint_path=values["checkpoint_out"],
                 checkpoint_every=values["checkpoint_every"], on_step=echo)
    if values["checkpoint_out"]:
        save_train_state(values["checkpoint_out"], state)
        print(f"# checkpoint written: {values['checkpoint_out']}")
    return EXIT_OK


def cmd_infer(values: dict) -> int:
    for key in ("checkpoint_in", "clip_path", "out_path"):
        if not values[key]:
            raise ConfigError(f"infer requires {key}")
    state = load_train_state(values["checkpoint_in"])
    lr_clip = dat.read_video(values["clip_path"])
    sr_clip = _infer_clip(state, lr_clip)
    dat.write_video(values["out_path"], sr_clip)
    print(f"# {values['clip_path']} {lr_clip.data.shape} -> "
          f"{values['out_path']} {sr_clip.data.shape}")
    return EXIT_OK


def cmd_eval(values: dict) -> int:
    for key in ("checkpoint_in", "dataset_root", "out_path"):
        if not values[key]:
            raise ConfigError(f"eval requires {key}")
    state = load_train_state(values["checkpoint_in"])
    mode = state.config.mode
    out_dir = Path(values["out_path"])
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = dat.load_index(values["dataset_root"], values["split"])
    summary = ["clip\tmodel_psnr\tmodel_ssim\tbaseline_psnr\tbaseline_ssim"]
    for entry in entries:
        hr = dat.read_video(entry.path)
        lr_clip, hr_target = dat.make_pair(hr, mode)
        model_rep = evaluate_clip(_infer_clip(state, lr_clip), hr_target)
        base_rep = evaluate_clip(dat.baseline_upscale(lr_clip, mode), hr_target)
        model_rep.write(out_dir / f"{entry.clip_id}.model.tsv")
        base_rep.write(out_dir / f"{entry.clip_id}.baseline.tsv")
        row = (f"{entry.clip_id}\t{model_rep.psnr_mean:.4f}\t"
               f"{model_rep.ssim_mean:.6f}\t{base_rep.psnr_mean:.4f}\t"
               f"{base_rep.ssim_mean:.6f}")
        summary.append(row)
        print(row)
    (out_dir / "summary.tsv").write_text("\n".join(summary) + "\n")
    return EXIT_OK


def cmd_gradcheck(values: dict) -> int:
    reports = run_gradient_suite(verbose=True)
    failed = [r for r in reports if not r.passed]
    if failed:
        print(f"# {len(failed)} of {len(reports)} checks failed")
        return EXIT_RUNTIME
    print(f"# all {len(reports)} checks passed")
    return EXIT_OK


_ABLATION_ROWS = (
    ("only_generator", False, "both"),
    ("texture_only", True, "texture_only"),
    ("motion_only", True, "motion_only"),
    ("full_gan", True, "both"),
)


def cmd_ablate(values: dict) -> int:
    steps = values["steps"]
    lines = ["config\tfinal_l_sr\tpsnr_db\tssim"]
    for name, gan, branches in _ABLATION_ROWS:
        row_values = dict(values, gan_enabled=gan, disc_branches=branches)
        cfg, gcfg = build_configs(row_values)
        state = init_train_state(cfg, gcfg)
        batch_fn = make_batch_fn(row_values)
        reports = run_training(state, batch_fn, steps)
        lr_t, hr_t = batch_fn(0, np.random.default_rng(0))
        with no_grad():
            sr = generator_forward(lr_t, state.gen)
        rep = evaluate_clip(
            dat.tensor_to_clip(Tensor(sr.data[:1])),
            dat.tensor_to_clip(Tensor(hr_t.data[:1])))
        lines.append(f"{name}\t{reports[-1].l_sr:.6e}\t"
                     f"{rep.psnr_mean:.4f}\t{rep.ssim_mean:.6f}")
        print(lines[-1])
    table = "\n".join(lines) + "\n"
    if values["out_path"]:
        Path(values["out_path"]).write_text(table)
    return EXIT_OK


_COMMANDS = {
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "ablate": cmd_ablate,
}


def build_parser() -> _Parser:
    parser = _Parser(prog="attgan3d",
                     description="Space-time video super-resolution toolkit")
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", default=None, help="key=value config file")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--steps", type=int, default=None)
    parser.add_argument("--mode", choices=list(MODES), default=None)
    parser.add_argument("--checkpoint", default=None,
                        help="checkpoint to write (train) or read (infer/eval)")
    parser.add_argument("--out", default=None, help="output path")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE

    overrides = {"seed": args.seed, "steps": args.steps, "mode": args.mode,
                 "out_path": args.out}
    if args.checkpoint:
        key = "checkpoint_out" if args.command == "train" else "checkpoint_in"
        overrides[key] = args.checkpoint

    try:
        values = load_config(args.config, overrides)
        _print_resolved(values)
        return _COMMANDS[args.command](values)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainAbort, dat.ClipError, dat.ClipContract, ckpt.CheckpointError,
            InvalidGeometry, DegenerateBatch, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
