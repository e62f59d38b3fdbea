"""Finite-difference verification of reverse-mode gradients.

Central differences on sampled coordinates against the analytic gradient.
Run in float64: the default step of 1e-4 leaves about 1e-8 of truncation
error, far below the 1e-4 relative tolerance but far above float32 noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, zero_grads


class InstrumentationError(RuntimeError):
    """A probe produced a non-finite value, so the check is meaningless."""


@dataclass
class GradReport:
    name: str
    max_rel_err: float
    checked_coords: int
    passed: bool

    def line(self) -> str:
        status = "ok" if self.passed else "FAIL"
        return (f"{status:4s} {self.name:32s} max_rel_err={self.max_rel_err:.3e} "
                f"coords={self.checked_coords}")


def _rel_err(fd: float, ad: float) -> float:
    return abs(fd - ad) / max(abs(fd), abs(ad), 1e-8)


def finite_diff_check(f, inputs: list[Tensor], name: str = "op", step: float = 1e-4,
                      tolerance: float = 1e-4, max_coords: int = 64,
                      rng: np.random.Generator | None = None) -> GradReport:
    """Compare analytic gradients of scalar-valued f(*inputs) with central
    differences at up to max_coords sampled coordinates per input.

    All inputs must be float64 leaf tensors with requires_grad set; f must
    rebuild its graph on every call.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    for t in inputs:
        if t.data.dtype != np.float64:
            raise TypeError(f"{name}: gradient checks require float64 inputs")
        if not t.requires_grad:
            raise ValueError(f"{name}: all probed inputs must require gradients")

    zero_grads(inputs)
    out = f(*inputs)
    base = out.item()
    if not np.isfinite(base):
        raise InstrumentationError(f"{name}: non-finite forward value {base}")
    out.backward()

    worst = 0.0
    checked = 0
    for t in inputs:
        grad = t.grad
        if grad is None:
            raise ValueError(f"{name}: input received no gradient")
        flat = t.data.reshape(-1)
        gflat = grad.reshape(-1)
        count = min(max_coords, flat.size)
        coords = (np.arange(flat.size) if count == flat.size
                  else rng.choice(flat.size, size=count, replace=False))
        for idx in coords:
            keep = flat[idx]
            flat[idx] = keep + step
            hi = f(*inputs).item()
            flat[idx] = keep - step
            lo = f(*inputs).item()
            flat[idx] = keep
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise InstrumentationError(f"{name}: non-finite probe at coord {idx}")
            fd = (hi - lo) / (2.0 * step)
            worst = max(worst, _rel_err(fd, gflat[idx]))
            checked += 1

    zero_grads(inputs)
    return GradReport(name=name, max_rel_err=worst, checked_coords=checked,
                      passed=worst <= tolerance)
