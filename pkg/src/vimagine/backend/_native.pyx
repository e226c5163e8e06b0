# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Direct-loop convolution kernels.

Same contracts as ``reference.py``.  Accumulation runs in double
precision regardless of the input dtype to keep the two backends within
tolerance of each other on float32 data.
"""

import numpy as np

cimport cython

ctypedef fused floating:
    float
    double

NAME = "native"


def conv2d_forward(x, k, stride, pad):
    x = np.ascontiguousarray(x)
    k = np.ascontiguousarray(k)
    cdef Py_ssize_t sh = stride[0], sw = stride[1]
    cdef Py_ssize_t ph = pad[0], pw = pad[1]
    b, c, h, w = x.shape
    f, _, kh, kw = k.shape
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    out = np.empty((b, f, ho, wo), dtype=x.dtype)
    cdef float[:, :, :, ::1] xf, kf, of
    cdef double[:, :, :, ::1] xd, kd_, od
    if x.dtype == np.float32:
        xf = x
        kf = k
        of = out
        _conv2d_fwd(xf, kf, of, sh, sw, ph, pw)
    else:
        xd = x
        kd_ = k
        od = out
        _conv2d_fwd(xd, kd_, od, sh, sw, ph, pw)
    return out


cdef void _conv2d_fwd(floating[:, :, :, ::1] x, floating[:, :, :, ::1] k,
                      floating[:, :, :, ::1] out,
                      Py_ssize_t sh, Py_ssize_t sw,
                      Py_ssize_t ph, Py_ssize_t pw) noexcept nogil:
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t f = k.shape[0], kh = k.shape[2], kw = k.shape[3]
    cdef Py_ssize_t ho = out.shape[2], wo = out.shape[3]
    cdef Py_ssize_t ib, jf, ic, oy, ox, ky, kx, iy, ix
    cdef double acc
    for ib in range(b):
        for jf in range(f):
            for oy in range(ho):
                for ox in range(wo):
                    acc = 0.0
                    for ic in range(c):
                        for ky in range(kh):
                            iy = oy * sh + ky - ph
                            if iy < 0 or iy >= h:
                                continue
                            for kx in range(kw):
                                ix = ox * sw + kx - pw
                                if ix < 0 or ix >= w:
                                    continue
                                acc += x[ib, ic, iy, ix] * k[jf, ic, ky, kx]
                    out[ib, jf, oy, ox] = <floating> acc


def conv2d_backward(x, k, stride, pad, gy, need_gx=True, need_gk=True):
    x = np.ascontiguousarray(x)
    k = np.ascontiguousarray(k)
    gy = np.ascontiguousarray(gy)
    cdef Py_ssize_t sh = stride[0], sw = stride[1]
    cdef Py_ssize_t ph = pad[0], pw = pad[1]
    gxa = np.zeros(x.shape, dtype=np.float64)
    gka = np.zeros(k.shape, dtype=np.float64)
    cdef float[:, :, :, ::1] xf, kf, gyf
    cdef double[:, :, :, ::1] xd, kd_, gyd
    cdef double[:, :, :, ::1] gxv = gxa, gkv = gka
    if x.dtype == np.float32:
        xf = x
        kf = k
        gyf = gy
        _conv2d_bwd(xf, kf, gyf, gxv, gkv, sh, sw, ph, pw,
                    1 if need_gx else 0, 1 if need_gk else 0)
    else:
        xd = x
        kd_ = k
        gyd = gy
        _conv2d_bwd(xd, kd_, gyd, gxv, gkv, sh, sw, ph, pw,
                    1 if need_gx else 0, 1 if need_gk else 0)
    gx = gxa.astype(x.dtype, copy=False) if need_gx else None
    gk = gka.astype(x.dtype, copy=False) if need_gk else None
    return gx, gk


cdef void _conv2d_bwd(floating[:, :, :, ::1] x, floating[:, :, :, ::1] k,
                      floating[:, :, :, ::1] gy,
                      double[:, :, :, ::1] gx, double[:, :, :, ::1] gk,
                      Py_ssize_t sh, Py_ssize_t sw,
                      Py_ssize_t ph, Py_ssize_t pw,
                      int need_gx, int need_gk) noexcept nogil:
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t f = k.shape[0], kh = k.shape[2], kw = k.shape[3]
    cdef Py_ssize_t ho = gy.shape[2], wo = gy.shape[3]
    cdef Py_ssize_t ib, jf, ic, oy, ox, ky, kx, iy, ix
    cdef double g
    for ib in range(b):
        for jf in range(f):
            for oy in range(ho):
                for ox in range(wo):
                    g = gy[ib, jf, oy, ox]
                    for ic in range(c):
                        for ky in range(kh):
                            iy = oy * sh + ky - ph
                            if iy < 0 or iy >= h:
                                continue
                            for kx in range(kw):
                                ix = ox * sw + kx - pw
                                if ix < 0 or ix >= w:
                                    continue
                                if need_gx:
                                    gx[ib, ic, iy, ix] += k[jf, ic, ky, kx] * g
                                if need_gk:
                                    gk[jf, ic, ky, kx] += x[ib, ic, iy, ix] * g


def conv3d_forward(x, k, stride, pad):
    x = np.ascontiguousarray(x)
    k = np.ascontiguousarray(k)
    cdef Py_ssize_t sd = stride[0], sh = stride[1], sw = stride[2]
    cdef Py_ssize_t pd = pad[0], ph = pad[1], pw = pad[2]
    b, c, d, h, w = x.shape
    f, _, kd, kh, kw = k.shape
    do = (d + 2 * pd - kd) // sd + 1
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    out = np.empty((b, f, do, ho, wo), dtype=x.dtype)
    cdef float[:, :, :, :, ::1] xf, kf, of
    cdef double[:, :, :, :, ::1] xd, kd_, od
    if x.dtype == np.float32:
        xf = x
        kf = k
        of = out
        _conv3d_fwd(xf, kf, of, sd, sh, sw, pd, ph, pw)
    else:
        xd = x
        kd_ = k
        od = out
        _conv3d_fwd(xd, kd_, od, sd, sh, sw, pd, ph, pw)
    return out


cdef void _conv3d_fwd(floating[:, :, :, :, ::1] x, floating[:, :, :, :, ::1] k,
                      floating[:, :, :, :, ::1] out,
                      Py_ssize_t sd, Py_ssize_t sh, Py_ssize_t sw,
                      Py_ssize_t pd, Py_ssize_t ph, Py_ssize_t pw) noexcept nogil:
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1]
    cdef Py_ssize_t d = x.shape[2], h = x.shape[3], w = x.shape[4]
    cdef Py_ssize_t f = k.shape[0], kd = k.shape[2], kh = k.shape[3], kw = k.shape[4]
    cdef Py_ssize_t do = out.shape[2], ho = out.shape[3], wo = out.shape[4]
    cdef Py_ssize_t ib, jf, ic, oz, oy, ox, kz, ky, kx, iz, iy, ix
    cdef double acc
    for ib in range(b):
        for jf in range(f):
            for oz in range(do):
                for oy in range(ho):
                    for ox in range(wo):
                        acc = 0.0
                        for ic in range(c):
                            for kz in range(kd):
                                iz = oz * sd + kz - pd
                                if iz < 0 or iz >= d:
                                    continue
                                for ky in range(kh):
                                    iy = oy * sh + ky - ph
                                    if iy < 0 or iy >= h:
                                        continue
                                    for kx in range(kw):
                                        ix = ox * sw + kx - pw
                                        if ix < 0 or ix >= w:
                                            continue
                                        acc += x[ib, ic, iz, iy, ix] * k[jf, ic, kz, ky, kx]
                        out[ib, jf, oz, oy, ox] = <floating> acc


def conv3d_backward(x, k, stride, pad, gy, need_gx=True, need_gk=True):
    x = np.ascontiguousarray(x)
    k = np.ascontiguousarray(k)
    gy = np.ascontiguousarray(gy)
    cdef Py_ssize_t sd = stride[0], sh = stride[1], sw = stride[2]
    cdef Py_ssize_t pd = pad[0], ph = pad[1], pw = pad[2]
    gxa = np.zeros(x.shape, dtype=np.float64)
    gka = np.zeros(k.shape, dtype=np.float64)
    cdef float[:, :, :, :, ::1] xf, kf, gyf
    cdef double[:, :, :, :, ::1] xd, kd_, gyd
    cdef double[:, :, :, :, ::1] gxv = gxa, gkv = gka
    if x.dtype == np.float32:
        xf = x
        kf = k
        gyf = gy
        _conv3d_bwd(xf, kf, gyf, gxv, gkv, sd, sh, sw, pd, ph, pw,
                    1 if need_gx else 0, 1 if need_gk else 0)
    else:
        xd = x
        kd_ = k
        gyd = gy
        _conv3d_bwd(xd, kd_, gyd, gxv, gkv, sd, sh, sw, pd, ph, pw,
                    1 if need_gx else 0, 1 if need_gk else 0)
    gx = gxa.astype(x.dtype, copy=False) if need_gx else None
    gk = gka.astype(x.dtype, copy=False) if need_gk else None
    return gx, gk


cdef void _conv3d_bwd(floating[:, :, :, :, ::1] x, floating[:, :, :, :, ::1] k,
                      floating[:, :, :, :, ::1] gy,
                      double[:, :, :, :, ::1] gx, double[:, :, :, :, ::1] gk,
                      Py_ssize_t sd, Py_ssize_t sh, Py_ssize_t sw,
                      Py_ssize_t pd, Py_ssize_t ph, Py_ssize_t pw,
                      int need_gx, int need_gk) noexcept nogil:
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1]
    cdef Py_ssize_t d = x.shape[2], h = x.shape[3], w = x.shape[4]
    cdef Py_ssize_t f = k.shape[0], kd = k.shape[2], kh = k.shape[3], kw = k.shape[4]
    cdef Py_ssize_t do = gy.shape[2], ho = gy.shape[3], wo = gy.shape[4]
    cdef Py_ssize_t ib, jf, ic, oz, oy, ox, kz, ky, kx, iz, iy, ix
    cdef double g
    for ib in range(b):
        for jf in range(f):
            for oz in range(do):
                for oy in range(ho):
                    for ox in range(wo):
                        g = gy[ib, jf, oz, oy, ox]
                        for ic in range(c):
                            for kz in range(kd):
                                iz = oz * sd + kz - pd
                                if iz < 0 or iz >= d:
                                    continue
                                for ky in range(kh):
                                    iy = oy * sh + ky - ph
                                    if iy < 0 or iy >= h:
                                        continue
                                    for kx in range(kw):
                                        ix = ox * sw + kx - pw
                                        if ix < 0 or ix >= w:
                                            continue
                                        if need_gx:
                                            gx[ib, ic, iz, iy, ix] += k[jf, ic, kz, ky, kx] * g
                                        if need_gk:
                                            gk[jf, ic, kz, ky, kx] += x[ib, ic, iz, iy, ix] * g
