"""Patch-matrix (im2col) convolution kernels in plain numpy.

This is the fallback backend: every routine here has a native
counterpart in ``_native.pyx`` built around direct loops.  Shapes are
assumed valid; validation happens in the calling op.

Layouts: conv2d works on [B, C, H, W] inputs with [F, C, kh, kw]
filters, conv3d on [B, C, D, H, W] with [F, C, kd, kh, kw].  Both are
cross-correlations (no kernel flip) with zero padding.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

NAME = "reference"


def conv2d_forward(x, k, stride, pad):
    sh, sw = stride
    ph, pw = pad
    b = x.shape[0]
    f, c, kh, kw = k.shape
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    ho, wo = win.shape[2], win.shape[3]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        b * ho * wo, c * kh * kw
    )
    out = cols @ k.reshape(f, -1).T
    return np.ascontiguousarray(out.reshape(b, ho, wo, f).transpose(0, 3, 1, 2))


def conv2d_backward(x, k, stride, pad, gy, need_gx=True, need_gk=True):
    sh, sw = stride
    ph, pw = pad
    b, cin, h, w = x.shape
    f, _, kh, kw = k.shape
    ho, wo = gy.shape[2], gy.shape[3]
    gx = gk = None

    if need_gk:
        xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
        cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
            b * ho * wo, cin * kh * kw
        )
        gy_mat = np.ascontiguousarray(gy.transpose(0, 2, 3, 1)).reshape(b * ho * wo, f)
        gk = (gy_mat.T @ cols).reshape(f, cin, kh, kw)

    if need_gx:
        gxp = np.zeros((b, cin, h + 2 * ph, w + 2 * pw), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                # spread each kernel tap's contribution back over the
                # strided input positions it touched
                patch = np.tensordot(gy, k[:, :, i, j], axes=([1], [0]))
                gxp[:, :, i : i + sh * ho : sh, j : j + sw * wo : sw] += (
                    patch.transpose(0, 3, 1, 2)
                )
        gx = gxp[:, :, ph : ph + h, pw : pw + w]
        if ph or pw:
            gx = np.ascontiguousarray(gx)

    return gx, gk


def conv3d_forward(x, k, stride, pad):
    sd, sh, sw = stride
    pd, ph, pw = pad
    b = x.shape[0]
    f, c, kd, kh, kw = k.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw)))
    win = sliding_window_view(xp, (kd, kh, kw), axis=(2, 3, 4))[:, :, ::sd, ::sh, ::sw]
    do, ho, wo = win.shape[2], win.shape[3], win.shape[4]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 4, 1, 5, 6, 7)).reshape(
        b * do * ho * wo, c * kd * kh * kw
    )
    out = cols @ k.reshape(f, -1).T
    return np.ascontiguousarray(out.reshape(b, do, ho, wo, f).transpose(0, 4, 1, 2, 3))


def conv3d_backward(x, k, stride, pad, gy, need_gx=True, need_gk=True):
    sd, sh, sw = stride
    pd, ph, pw = pad
    b, cin, d, h, w = x.shape
    f, _, kd, kh, kw = k.shape
    do, ho, wo = gy.shape[2], gy.shape[3], gy.shape[4]
    gx = gk = None

    if need_gk:
        xp = np.pad(x, ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw)))
        win = sliding_window_view(xp, (kd, kh, kw), axis=(2, 3, 4))[
            :, :, ::sd, ::sh, ::sw
        ]
        cols = np.ascontiguousarray(win.transpose(0, 2, 3, 4, 1, 5, 6, 7)).reshape(
            b * do * ho * wo, cin * kd * kh * kw
        )
        gy_mat = np.ascontiguousarray(gy.transpose(0, 2, 3, 4, 1)).reshape(
            b * do * ho * wo, f
        )
        gk = (gy_mat.T @ cols).reshape(f, cin, kd, kh, kw)

    if need_gx:
        gxp = np.zeros(
            (b, cin, d + 2 * pd, h + 2 * ph, w + 2 * pw), dtype=x.dtype
        )
        for t in range(kd):
            for i in range(kh):
                for j in range(kw):
                    patch = np.tensordot(gy, k[:, :, t, i, j], axes=([1], [0]))
                    gxp[
                        :,
                        :,
                        t : t + sd * do : sd,
                        i : i + sh * ho : sh,
                        j : j + sw * wo : sw,
                    ] += patch.transpose(0, 4, 1, 2, 3)
        gx = gxp[:, :, pd : pd + d, ph : ph + h, pw : pw + w]
        if pd or ph or pw:
            gx = np.ascontiguousarray(gx)

    return gx, gk
