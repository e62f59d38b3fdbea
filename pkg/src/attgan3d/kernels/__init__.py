"""Convolution kernel backends.

The compiled Cython extension is preferred; the numpy implementation is the
fallback when the extension was not built. Selection happens at import and
can be forced with the ATTGAN3D_KERNELS environment variable ("cython" or
"numpy") or swapped at runtime with use_backend() (the benchmark and the
cross-backend tests do this).

Shared contract, with all arrays C-contiguous, one floating dtype, axes
(batch, channel, depth, height, width):

  gather(inp[N,B,D,H,W], wm[A,B,kd,kh,kw], stride, pad, out_dhw) -> [N,A,*out_dhw]
      out[n,a,o] = sum_{b,k} inp[n,b,o*s-p+k] * wm[a,b,k]
      (strided cross-correlation: conv forward, transposed-conv input grad)

  scatter(g[N,A,gd,gh,gw], wm[A,B,kd,kh,kw], stride, pad, out_dhw) -> [N,B,*out_dhw]
      out[n,b,o*s-p+k] += g[n,a,o] * wm[a,b,k]
      (adjoint of gather: conv input grad, transposed-conv forward)

  weight_grad(g[N,A,...], inp[N,B,D,H,W], stride, pad, kdhw) -> [A,B,kd,kh,kw]
      wm[a,b,k] = sum_{n,o} g[n,a,o] * inp[n,b,o*s-p+k]
"""

import os

from . import numpy_kernels

try:
    from . import _conv_ext
except ImportError:
    _conv_ext = None

_BACKENDS = {"numpy": numpy_kernels}
if _conv_ext is not None:
    _BACKENDS["cython"] = _conv_ext

_impl = None
backend_name = None


def available_backends():
    return tuple(sorted(_BACKENDS))


def use_backend(name):
    """Switch the active kernel backend; returns the previous backend name."""
    global _impl, backend_name, gather, scatter, weight_grad
    if name not in _BACKENDS:
        raise ValueError(
            f"unknown kernel backend {name!r}; available: {available_backends()}"
        )
    prev = backend_name
    _impl = _BACKENDS[name]
    backend_name = name
    gather = _impl.gather
    scatter = _impl.scatter
    weight_grad = _impl.weight_grad
    return prev


_requested = os.environ.get("ATTGAN3D_KERNELS", "").strip().lower()
if _requested:
    use_backend(_requested)
else:
    use_backend("cython" if _conv_ext is not None else "numpy")
