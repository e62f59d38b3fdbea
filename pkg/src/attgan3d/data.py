"""Clip I/O, the degradation protocol, patch sampling, and synthetic clips.

A clip is float data in [0,1], laid out frame-major (frames, channels,
height, width). The degradation that manufactures training inputs is bicubic
x4 spatial downsampling plus deletion of the even frames (1-based), so a
2n-1 frame source yields an n frame input.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import Tensor

CLIP_MAGIC = b"VCLP"
CLIP_VERSION = 1
_MAX_ELEMENTS = 1 << 32


class ClipError(Exception):
    pass


class BadClipMagic(ClipError):
    pass


class ClipDimensionOverflow(ClipError):
    pass


class TruncatedClip(ClipError):
    pass


class ClipContract(ValueError):
    """A pipeline precondition on clip geometry was violated."""


@dataclass
class VideoClip:
    data: np.ndarray  # (frames, channels, height, width), float32 in [0,1]

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 4:
            raise ClipContract(f"clip data must be 4-axis, got {arr.ndim}")
        if arr.shape[1] not in (1, 3):
            raise ClipContract(f"channels must be 1 or 3, got {arr.shape[1]}")
        if min(arr.shape) < 1:
            raise ClipContract(f"empty clip axis in shape {arr.shape}")
        if arr.dtype != np.float32:
            arr = arr.astype(np.float32)
        lo, hi = float(arr.min()), float(arr.max())
        if lo < 0.0 or hi > 1.0:
            raise ClipContract(f"sample range [{lo:.4g}, {hi:.4g}] outside [0,1]")
        self.data = arr

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[2]

    @property
    def width(self) -> int:
        return self.data.shape[3]


def clip_to_tensor(clip: VideoClip, dtype=None) -> Tensor:
    arr = clip.data.transpose(1, 0, 2, 3)[None]
    if dtype is not None:
        arr = arr.astype(dtype)
    return Tensor(np.ascontiguousarray(arr))


def tensor_to_clip(t: Tensor) -> VideoClip:
    if t.shape.n != 1:
        raise ClipContract(f"expected a single-item batch, got n={t.shape.n}")
    arr = np.clip(t.data[0].transpose(1, 0, 2, 3), 0.0, 1.0)
    return VideoClip(np.ascontiguousarray(arr, dtype=np.float32))


# ---------------------------------------------------------------------------
# bicubic resampling


def cubic_kernel(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Cubic convolution kernel; reproduces samples exactly at integers and
    degree-1 polynomials under resampling."""
    ax = np.abs(x)
    near = (a + 2) * ax ** 3 - (a + 3) * ax ** 2 + 1
    far = a * (ax ** 3 - 5 * ax ** 2 + 8 * ax - 4)
    return np.where(ax <= 1, near, np.where(ax < 2, far, 0.0))


def resize_taps(in_size: int, out_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Per output sample: 4 edge-clamped source indices and their weights.

    Centers align via src = (dst + 0.5) * in/out - 0.5. Returned arrays have
    shape (out_size, 4); this is the reference tap table for the resampler.
    """
    if out_size < 1 or in_size < 1:
        raise ClipContract("resize dimensions must be >= 1")
    src = (np.arange(out_size) + 0.5) * (in_size / out_size) - 0.5
    i0 = np.floor(src).astype(np.int64)
    frac = src - i0
    offsets = np.arange(-1, 3)
    idx = np.clip(i0[:, None] + offsets[None, :], 0, in_size - 1)
    wgt = cubic_kernel(frac[:, None] - offsets[None, :])
    return idx, wgt


def _resize_axis(arr: np.ndarray, axis: int, out_size: int) -> np.ndarray:
    idx, wgt = resize_taps(arr.shape[axis], out_size)
    taken = np.take(arr, idx, axis=axis)  # axis becomes (out_size, 4)
    shape = [1] * taken.ndim
    shape[axis] = out_size
    shape[axis + 1] = 4
    return (taken * wgt.reshape(shape)).sum(axis=axis + 1)


def bicubic_resize(frame: np.ndarray, out_h: int, out_w: int,
                   clamp: bool = True) -> np.ndarray:
    """Separable resize of one (C, H, W) frame; clamp=False exposes the raw
    linear operator (used by the linearity property tests)."""
    if frame.ndim != 3:
        raise ClipContract(f"frame must be (C, H, W), got {frame.shape}")
    out = _resize_axis(frame.astype(np.float64), 1, out_h)
    out = _resize_axis(out, 2, out_w)
    if clamp:
        out = np.clip(out, 0.0, 1.0)
    return out.astype(np.float32)


def degrade(hr: VideoClip, factor: int = 4) -> VideoClip:
    """Keep the 1-based odd frames, bicubic-downsample each by `factor`."""
    if hr.frames % 2 == 0 or hr.frames < 3:
        raise ClipContract(
            f"degradation needs an odd frame count >= 3, got {hr.frames}")
    if hr.height % factor or hr.width % factor:
        raise ClipContract(
            f"{hr.height}x{hr.width} not divisible by factor {factor}")
    kept = hr.data[::2]
    oh, ow = hr.height // factor, hr.width // factor
    frames = np.stack([bicubic_resize(f, oh, ow) for f in kept])
    return VideoClip(frames)


def spatial_downsample(hr: VideoClip, factor: int = 4) -> VideoClip:
    """All frames kept, bicubic-downsampled by `factor`."""
    if hr.height % factor or hr.width % factor:
        raise ClipContract(
            f"{hr.height}x{hr.width} not divisible by factor {factor}")
    oh, ow = hr.height // factor, hr.width // factor
    return VideoClip(np.stack([bicubic_resize(f, oh, ow) for f in hr.data]))


def temporal_downsample(hr: VideoClip) -> VideoClip:
    """Keep the 1-based odd frames; spatial geometry unchanged."""
    if hr.frames % 2 == 0 or hr.frames < 3:
        raise ClipContract(
            f"frame deletion needs an odd frame count >= 3, got {hr.frames}")
    return VideoClip(hr.data[::2].copy())


def make_pair(hr: VideoClip, mode: str) -> tuple[VideoClip, VideoClip]:
    """(input, target) pair for one training mode."""
    if mode == "stsr":
        return degrade(hr), hr
    if mode == "ssr":
        return spatial_downsample(hr), hr
    if mode == "tsr":
        return temporal_downsample(hr), hr
    raise ValueError(f"unknown mode {mode!r}")


def crop_patches(hr: VideoClip, patch_h: int = 128, patch_w: int = 128,
                 frames: int = 7, rng: np.random.Generator | None = None
                 ) -> tuple[VideoClip, VideoClip]:
    """Random aligned crop: offsets are multiples of 4 so the degraded input
    grid aligns with the target grid. Returns (degraded input, target)."""
    if rng is None:
        rng = np.random.default_rng(0)
    if frames % 2 == 0 or frames < 3:
        raise ClipContract(f"patch frame count must be odd >= 3, got {frames}")
    if hr.frames < frames or hr.height < patch_h or hr.width < patch_w:
        raise ClipContract(
            f"clip {hr.frames}x{hr.height}x{hr.width} too small for "
            f"{frames}x{patch_h}x{patch_w} patches")
    if patch_h % 4 or patch_w % 4:
        raise ClipContract("patch dims must be multiples of 4")
    t0 = int(rng.integers(0, hr.frames - frames + 1))
    y0 = 4 * int(rng.integers(0, (hr.height - patch_h) // 4 + 1))
    x0 = 4 * int(rng.integers(0, (hr.width - patch_w) // 4 + 1))
    patch = VideoClip(
        hr.data[t0:t0 + frames, :, y0:y0 + patch_h, x0:x0 + patch_w].copy())
    return degrade(patch), patch


# ---------------------------------------------------------------------------
# synthetic clips


def _periodic_cubic_sample(table: np.ndarray, pos: np.ndarray) -> np.ndarray:
    """Sample a periodic 1-D table at fractional positions with the same
    cubic kernel as the resizer."""
    p = table.size
    i0 = np.floor(pos).astype(np.int64)
    frac = pos - i0
    offsets = np.arange(-1, 3)
    idx = (i0[..., None] + offsets) % p
    wgt = cubic_kernel(frac[..., None] - offsets)
    return (table[idx] * wgt).sum(axis=-1)


def synth_video(kind: str, frames: int, h: int, w: int, velocity: float = 1.0,
                seed: int = 0, period: float | None = None) -> VideoClip:
    """Analytic test clips with exact subpixel motion of `velocity` px/frame.

    moving_bars: a periodic bar profile translated horizontally, sampled
    with the cubic kernel. drifting_gaussian: a blob on a diagonal drift.
    sinusoid_grating: a horizontal grating; velocity equal to the period
    makes consecutive frames identical.
    """
    if not np.isfinite(velocity):
        raise ClipContract("velocity must be finite")
    rng = np.random.default_rng(seed)
    x = np.arange(w, dtype=np.float64)
    y = np.arange(h, dtype=np.float64)
    out = np.zeros((frames, 1, h, w), dtype=np.float64)

    if kind == "moving_bars":
        p = max(8, int(round(period)) if period else w // 4)
        table = (np.arange(p) < p / 2).astype(np.float64)
        phase = rng.uniform(0, p)
        for t in range(frames):
            row = _periodic_cubic_sample(table, (x - velocity * t + phase) % p)
            out[t, 0] = np.clip(row, 0.0, 1.0)[None, :]
    elif kind == "drifting_gaussian":
        cx = rng.uniform(0.3, 0.7) * w
        cy = rng.uniform(0.3, 0.7) * h
        sigma = max(2.0, min(h, w) / 6.0)
        for t in range(frames):
            dx = x[None, :] - (cx + velocity * t)
            dy = y[:, None] - (cy + 0.5 * velocity * t)
            out[t, 0] = np.exp(-(dx * dx + dy * dy) / (2 * sigma * sigma))
    elif kind == "sinusoid_grating":
        p = float(period) if period else max(4.0, w / 4.0)
        phase = rng.uniform(0, p)
        for t in range(frames):
            out[t, 0] = (0.5 + 0.5 * np.sin(
                2 * np.pi * (x[None, :] - velocity * t + phase) / p))
        out = np.clip(out, 0.0, 1.0)
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    return VideoClip(out.astype(np.float32))


def baseline_upscale(lr: VideoClip, mode: str) -> VideoClip:
    """Classical reference: bicubic x4 per frame where space is upscaled,
    linear blend of neighbouring frames where new frames are inserted."""
    if mode not in ("stsr", "ssr", "tsr"):
        raise ValueError(f"unknown mode {mode!r}")
    frames = lr.data
    if mode in ("stsr", "ssr"):
        frames = np.stack([
            bicubic_resize(f, 4 * lr.height, 4 * lr.width) for f in frames])
    if mode in ("stsr", "tsr"):
        n = frames.shape[0]
        expanded = np.zeros((2 * n - 1,) + frames.shape[1:], dtype=frames.dtype)
        expanded[::2] = frames
        expanded[1::2] = 0.5 * (frames[:-1] + frames[1:])
        frames = expanded
    return VideoClip(frames.astype(np.float32))


# ---------------------------------------------------------------------------
# raw clip files


def write_video(path, clip: VideoClip, dtype: str = "f32") -> None:
    if dtype not in ("f32", "u8"):
        raise ValueError(f"dtype must be 'f32' or 'u8', got {dtype!r}")
    header = CLIP_MAGIC + struct.pack(
        "<IIIII", CLIP_VERSION, clip.frames, clip.channels, clip.height,
        clip.width)
    if dtype == "f32":
        body = struct.pack("<B", 0) + clip.data.astype("<f4").tobytes()
    else:
        quant = np.rint(clip.data * 255.0).astype(np.uint8)
        body = struct.pack("<B", 1) + quant.tobytes()
    Path(path).write_bytes(header + body)


def read_video_header(path) -> tuple[int, int, int, int]:
    """(frames, channels, height, width) without reading sample data."""
    with open(path, "rb") as fh:
        head = fh.read(4 + 4 * 5 + 1)
    return _parse_header(head, path)[:4]


def _parse_header(head: bytes, path) -> tuple[int, int, int, int, int]:
    if len(head) < 25:
        raise TruncatedClip(f"{path}: header incomplete")
    if head[:4] != CLIP_MAGIC:
        raise BadClipMagic(f"{path}: not a clip file")
    version, frames, channels, height, width = struct.unpack("<IIIII", head[4:24])
    if version != CLIP_VERSION:
        raise ClipError(f"{path}: unsupported clip version {version}")
    dims = (frames, channels, height, width)
    if min(dims) < 1 or channels not in (1, 3):
        raise ClipDimensionOverflow(f"{path}: invalid dimensions {dims}")
    if frames * channels * height * width > _MAX_ELEMENTS:
        raise ClipDimensionOverflow(f"{path}: dimensions {dims} overflow")
    dtype_tag = head[24]
    if dtype_tag not in (0, 1):
        raise ClipError(f"{path}: unknown sample dtype tag {dtype_tag}")
    return frames, channels, height, width, dtype_tag


def read_video(path) -> VideoClip:
    blob = Path(path).read_bytes()
    frames, channels, height, width, tag = _parse_header(blob[:25], path)
    count = frames * channels * height * width
    itemsize = 4 if tag == 0 else 1
    body = blob[25:]
    if len(body) < count * itemsize:
        raise TruncatedClip(
            f"{path}: expected {count * itemsize} sample bytes, got {len(body)}")
    if tag == 0:
        data = np.frombuffer(body, dtype="<f4", count=count).astype(np.float32)
    else:
        data = np.frombuffer(body, dtype=np.uint8, count=count) / np.float32(255.0)
    return VideoClip(data.reshape(frames, channels, height, width).copy())


def write_png_sequence(directory, clip: VideoClip) -> list:
    from PIL import Image
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for t, frame in enumerate(clip.data):
        quant = np.rint(frame * 255.0).astype(np.uint8)
        img = (Image.fromarray(quant[0], mode="L") if clip.channels == 1
               else Image.fromarray(quant.transpose(1, 2, 0), mode="RGB"))
        p = directory / f"frame_{t:04d}.png"
        img.save(p)
        paths.append(p)
    return paths


def read_png_sequence(directory) -> VideoClip:
    from PIL import Image
    paths = sorted(Path(directory).glob("frame_*.png"))
    if not paths:
        raise ClipError(f"{directory}: no frame_*.png files")
    frames = []
    for p in paths:
        arr = np.asarray(Image.open(p))
        if arr.ndim == 2:
            arr = arr[None]
        else:
            arr = arr.transpose(2, 0, 1)
        frames.append(arr.astype(np.float32) / 255.0)
    return VideoClip(np.stack(frames))


# ---------------------------------------------------------------------------
# dataset directory layout


@dataclass
class IndexEntry:
    clip_id: str
    path: Path
    frames: int
    height: int
    width: int


def build_index(root, split: str) -> Path:
    """Scan root/<split>/<clip_id>/clip.vclp and write root/<split>/index.tsv."""
    split_dir = Path(root) / split
    rows = []
    for clip_dir in sorted(p for p in split_dir.iterdir() if p.is_dir()):
        clip_path = clip_dir / "clip.vclp"
        if not clip_path.is_file():
            continue
        frames, _, h, w = read_video_header(clip_path)
        rows.append(f"{clip_dir.name}\t{clip_path}\t{frames}\t{h}\t{w}")
    index_path = split_dir / "index.tsv"
    index_path.write_text("\n".join(rows) + ("\n" if rows else ""))
    return index_path


def load_index(root, split: str) -> list[IndexEntry]:
    index_path = Path(root) / split / "index.tsv"
    if not index_path.is_file():
        raise ClipError(f"{index_path}: missing index (run build_index first)")
    entries = []
    seen = set()
    for line in index_path.read_text().splitlines():
        if not line.strip():
            continue
        clip_id, path, frames, h, w = line.split("\t")
        if clip_id in seen:
            raise ClipError(f"{index_path}: duplicate clip id {clip_id!r}")
        seen.add(clip_id)
        p = Path(path)
        if not p.is_file():
            raise ClipError(f"{index_path}: listed path missing: {p}")
        entries.append(IndexEntry(clip_id, p, int(frames), int(h), int(w)))
    return entries
