# cython: language_level=3
# cython: boundscheck=False
# cython: wraparound=False
# cython: cdivision=True
"""Hot convolution kernels: direct loops over the 5-axis layout.

Three primitives cover the forward and reverse passes of both convolution
flavours (see attgan3d.kernels for the shared contract):

  gather(inp, wm, stride, pad, out_dhw)
      out[n,a,o] = sum_{b,k} inp[n,b,o*s-p+k] * wm[a,b,k]
  scatter(g, wm, stride, pad, out_dhw)
      out[n,b,o*s-p+k] += g[n,a,o] * wm[a,b,k]        (adjoint of gather)
  weight_grad(g, inp, stride, pad, kdhw)
      wm[a,b,k] = sum_{n,o} g[n,a,o] * inp[n,b,o*s-p+k]

Arrays are C-contiguous, all of one floating dtype; axis order is
(batch, channel, depth, height, width). Loop bounds are hoisted per kernel
tap so the inner loops run branch-free, and accumulation order is fixed so
results are bit-deterministic.
"""

import numpy as np

from cython cimport floating


cdef inline Py_ssize_t _lo(Py_ssize_t k, Py_ssize_t p, Py_ssize_t s) nogil:
    # smallest o with o*s - p + k >= 0
    if k >= p:
        return 0
    return (p - k + s - 1) // s


cdef inline Py_ssize_t _hi(Py_ssize_t k, Py_ssize_t p, Py_ssize_t s,
                           Py_ssize_t limit, Py_ssize_t n_out) nogil:
    # largest o < n_out with o*s - p + k < limit
    cdef Py_ssize_t h = limit - 1 + p - k
    if h < 0:
        return -1
    h = h // s
    if h > n_out - 1:
        h = n_out - 1
    return h


def gather(floating[:, :, :, :, ::1] inp, floating[:, :, :, :, ::1] wm,
           stride, pad, out_dhw):
    cdef Py_ssize_t sd = stride[0], sh = stride[1], sw = stride[2]
    cdef Py_ssize_t pd = pad[0], ph = pad[1], pw = pad[2]
    cdef Py_ssize_t OD = out_dhw[0], OH = out_dhw[1], OW = out_dhw[2]
    cdef Py_ssize_t N = inp.shape[0], B = inp.shape[1]
    cdef Py_ssize_t D = inp.shape[2], H = inp.shape[3], W = inp.shape[4]
    cdef Py_ssize_t A = wm.shape[0]
    cdef Py_ssize_t KD = wm.shape[2], KH = wm.shape[3], KW = wm.shape[4]

    if floating is float:
        out_arr = np.zeros((N, A, OD, OH, OW), dtype=np.float32)
    else:
        out_arr = np.zeros((N, A, OD, OH, OW), dtype=np.float64)
    cdef floating[:, :, :, :, ::1] out = out_arr

    cdef Py_ssize_t n, a, b, kd, kh, kw, od, oh, ow
    cdef Py_ssize_t od0, od1, oh0, oh1, ow0, ow1, idd, ihh, iww
    cdef floating wv
    with nogil:
        for n in range(N):
            for a in range(A):
                for b in range(B):
                    for kd in range(KD):
                        od0 = _lo(kd, pd, sd)
                        od1 = _hi(kd, pd, sd, D, OD)
                        for kh in range(KH):
                            oh0 = _lo(kh, ph, sh)
                            oh1 = _hi(kh, ph, sh, H, OH)
                            for kw in range(KW):
                                ow0 = _lo(kw, pw, sw)
                                ow1 = _hi(kw, pw, sw, W, OW)
                                wv = wm[a, b, kd, kh, kw]
                                for od in range(od0, od1 + 1):
                                    idd = od * sd - pd + kd
                                    for oh in range(oh0, oh1 + 1):
                                        ihh = oh * sh - ph + kh
                                        iww = ow0 * sw - pw + kw
                                        for ow in range(ow0, ow1 + 1):
                                            out[n, a, od, oh, ow] += wv * inp[n, b, idd, ihh, iww]
                                            iww += sw
    return out_arr


def scatter(floating[:, :, :, :, ::1] g, floating[:, :, :, :, ::1] wm,
            stride, pad, out_dhw):
    cdef Py_ssize_t sd = stride[0], sh = stride[1], sw = stride[2]
    cdef Py_ssize_t pd = pad[0], ph = pad[1], pw = pad[2]
    cdef Py_ssize_t OD = out_dhw[0], OH = out_dhw[1], OW = out_dhw[2]
    cdef Py_ssize_t N = g.shape[0], A = g.shape[1]
    cdef Py_ssize_t GD = g.shape[2], GH = g.shape[3], GW = g.shape[4]
    cdef Py_ssize_t B = wm.shape[1]
    cdef Py_ssize_t KD = wm.shape[2], KH = wm.shape[3], KW = wm.shape[4]

    if floating is float:
        out_arr = np.zeros((N, B, OD, OH, OW), dtype=np.float32)
    else:
        out_arr = np.zeros((N, B, OD, OH, OW), dtype=np.float64)
    cdef floating[:, :, :, :, ::1] out = out_arr

    cdef Py_ssize_t n, a, b, kd, kh, kw, od, oh, ow
    cdef Py_ssize_t od0, od1, oh0, oh1, ow0, ow1, idd, ihh, iww
    cdef floating wv
    with nogil:
        for n in range(N):
            for b in range(B):
                for a in range(A):
                    for kd in range(KD):
                        od0 = _lo(kd, pd, sd)
                        od1 = _hi(kd, pd, sd, OD, GD)
                        for kh in range(KH):
                            oh0 = _lo(kh, ph, sh)
                            oh1 = _hi(kh, ph, sh, OH, GH)
                            for kw in range(KW):
                                ow0 = _lo(kw, pw, sw)
                                ow1 = _hi(kw, pw, sw, OW, GW)
                                wv = wm[a, b, kd, kh, kw]
                                for od in range(od0, od1 + 1):
                                    idd = od * sd - pd + kd
                                    for oh in range(oh0, oh1 + 1):
                                        ihh = oh * sh - ph + kh
                                        iww = ow0 * sw - pw + kw
                                        for ow in range(ow0, ow1 + 1):
                                            out[n, b, idd, ihh, iww] += wv * g[n, a, od, oh, ow]
                                            iww += sw
    return out_arr


def weight_grad(floating[:, :, :, :, ::1] g, floating[:, :, :, :, ::1] inp,
                stride, pad, kdhw):
    cdef Py_ssize_t sd = stride[0], sh = stride[1], sw = stride[2]
    cdef Py_ssize_t pd = pad[0], ph = pad[1], pw = pad[2]
    cdef Py_ssize_t KD = kdhw[0], KH = kdhw[1], KW = kdhw[2]
    cdef Py_ssize_t N = g.shape[0], A = g.shape[1]
    cdef Py_ssize_t GD = g.shape[2], GH = g.shape[3], GW = g.shape[4]
    cdef Py_ssize_t B = inp.shape[1]
    cdef Py_ssize_t D = inp.shape[2], H = inp.shape[3], W = inp.shape[4]

    if floating is float:
        out_arr = np.zeros((A, B, KD, KH, KW), dtype=np.float32)
    else:
        out_arr = np.zeros((A, B, KD, KH, KW), dtype=np.float64)
    cdef floating[:, :, :, :, ::1] out = out_arr

    cdef Py_ssize_t n, a, b, kd, kh, kw, od, oh, ow
    cdef Py_ssize_t od0, od1, oh0, oh1, ow0, ow1, idd, ihh, iww
    cdef floating acc
    with nogil:
        for n in range(N):
            for a in range(A):
                for b in range(B):
                    for kd in range(KD):
                        od0 = _lo(kd, pd, sd)
                        od1 = _hi(kd, pd, sd, D, GD)
                        for kh in range(KH):
                            oh0 = _lo(kh, ph, sh)
                            oh1 = _hi(kh, ph, sh, H, GH)
                            for kw in range(KW):
                                ow0 = _lo(kw, pw, sw)
                                ow1 = _hi(kw, pw, sw, W, GW)
                                acc = 0
                                for od in range(od0, od1 + 1):
                                    idd = od * sd - pd + kd
                                    for oh in range(oh0, oh1 + 1):
                                        ihh = oh * sh - ph + kh
                                        iww = ow0 * sw - pw + kw
                                        for ow in range(ow0, ow1 + 1):
                                            acc += g[n, a, od, oh, ow] * inp[n, b, idd, ihh, iww]
                                            iww += sw
                                out[a, b, kd, kh, kw] += acc
    return out_arr
