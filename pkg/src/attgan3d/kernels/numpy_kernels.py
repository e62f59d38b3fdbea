"""Pure-numpy fallback for the convolution primitives.

Same contract as the compiled extension (see attgan3d.kernels): gather is a
strided sliding-window contraction, scatter is realised as zero-stuffing
followed by a stride-1 gather with the spatially flipped kernel, and
weight_grad contracts the window view against the strided map. einsum keeps
the contractions in BLAS territory, so this path is usable (if slower) when
the extension is not built.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _windows(inp, kdhw, stride, pad):
    pd, ph, pw = pad
    padded = np.pad(inp, ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw)))
    win = sliding_window_view(padded, kdhw, axis=(2, 3, 4))
    sd, sh, sw = stride
    return win[:, :, ::sd, ::sh, ::sw]


def gather(inp, wm, stride, pad, out_dhw):
    od, oh, ow = out_dhw
    win = _windows(inp, wm.shape[2:], stride, pad)[:, :, :od, :oh, :ow]
    out = np.einsum("nbdhwxyz,abxyz->nadhw", win, wm, optimize=True)
    return np.ascontiguousarray(out, dtype=inp.dtype)


def scatter(g, wm, stride, pad, out_dhw):
    n, a = g.shape[:2]
    b = wm.shape[1]
    up_dhw = tuple((s - 1) * st + 1 for s, st in zip(g.shape[2:], stride))
    up = np.zeros((n, a) + up_dhw, dtype=g.dtype)
    up[:, :, :: stride[0], :: stride[1], :: stride[2]] = g

    # With F the unit-stride correlation of the zero-stuffed map against the
    # flipped kernel under maximal padding k-1, F[t] = sum_y g[(t-y)/s]*w[y],
    # and the scatter result is the slice F[p : p+T] per axis (zero wherever
    # F has no support). Slicing instead of cropping the padding keeps the
    # right edge correct when T exceeds the transposed-conv extent.
    wf = np.ascontiguousarray(wm[:, :, ::-1, ::-1, ::-1].transpose(1, 0, 2, 3, 4))
    kdhw = wm.shape[2:]
    fullpad = tuple(k - 1 for k in kdhw)
    full_dhw = tuple(u + k - 1 for u, k in zip(up_dhw, kdhw))
    full = gather(up, wf, (1, 1, 1), fullpad, full_dhw)

    out = np.zeros((n, b) + tuple(out_dhw), dtype=g.dtype)
    spans = [min(f - p, t) for f, p, t in zip(full_dhw, pad, out_dhw)]
    if min(spans) > 0:
        dd, hh, ww = spans
        pd, ph, pw = pad
        out[:, :, :dd, :hh, :ww] = full[:, :, pd:pd + dd, ph:ph + hh, pw:pw + ww]
    return out


def weight_grad(g, inp, stride, pad, kdhw):
    win = _windows(inp, kdhw, stride, pad)
    gd, gh, gw = g.shape[2:]
    win = win[:, :, :gd, :gh, :gw]
    out = np.einsum("nadhw,nbdhwxyz->abxyz", g, win, optimize=True)
    return np.ascontiguousarray(out, dtype=g.dtype)
