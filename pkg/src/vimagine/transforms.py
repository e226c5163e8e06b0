"""Differentiable image transformations.

Two families: affine warps (a 2x3 matrix maps normalized output
coordinates to normalized source coordinates, sampled bilinearly with
zero padding) and global convolution kernels (one odd-sized kernel
cross-correlated with every channel, zero padded).  A sequence applies
its transformations cumulatively: step p transforms the output of step
p-1.

Single-image entry points work on [H,W,C] arrays to mirror how clips
are stored; the *_batch variants work on [N,C,H,W] and are what the
networks call.  Grid layout is [...,0] = x (width) and [...,1] = y
(height), both in [-1,1] with -1 at index 0 and +1 at the last index.
"""

import numpy as np

from .errors import ConfigurationError, DimensionError
from .tensor import (
    Tensor,
    _accumulate,
    _node,
    concat,
    narrow,
    reshape,
    transpose,
)

AFFINE_IDENTITY = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


def identity_kernel(k, dtype=np.float32):
    """Center-one delta kernel: the identity of the kernel family."""
    if k % 2 == 0:
        raise ConfigurationError(f"kernel size must be odd, got {k}")
    out = np.zeros((k, k), dtype=dtype)
    out[k // 2, k // 2] = 1.0
    return out


def _base_mesh(h, w, dtype):
    # [H,W,3] rows of (x, y, 1) in normalized coordinates
    xs = np.linspace(-1.0, 1.0, w, dtype=np.float64)
    ys = np.linspace(-1.0, 1.0, h, dtype=np.float64)
    mesh = np.empty((h, w, 3), dtype=np.float64)
    mesh[..., 0] = xs[None, :]
    mesh[..., 1] = ys[:, None]
    mesh[..., 2] = 1.0
    return mesh.astype(dtype)


def affine_grid_batch(params, h, w):
    """[N,6] affine parameters -> [N,H,W,2] source coordinate grid."""
    if params.ndim != 2 or params.shape[1] != 6:
        raise DimensionError(f"affine params must be [N,6], got {params.shape}")
    if h < 2 or w < 2:
        raise ConfigurationError(f"grid needs H,W >= 2, got {h}x{w}")
    base = _base_mesh(h, w, params.dtype)
    n = params.shape[0]
    mats = params.data.reshape(n, 2, 3)
    data = np.einsum("hwk,nok->nhwo", base, mats)

    def bw(g):
        gp = np.einsum("nhwo,hwk->nok", g, base).reshape(n, 6)
        _accumulate(params, gp)

    return _node(np.ascontiguousarray(data), (params,), bw)


def affine_grid(p, h, w):
    """Single-parameter-set variant: (6,) -> [H,W,2]."""
    if p.shape != (6,):
        raise DimensionError(f"affine params must have shape (6,), got {p.shape}")
    return reshape(affine_grid_batch(reshape(p, (1, 6)), h, w), (h, w, 2))


def bilinear_sample_batch(img, grid):
    """Sample [N,C,H,W] at [N,Ho,Wo,2] normalized coordinates.

    Out-of-range coordinates contribute zeros.  Differentiable with
    respect to both the image and the grid.
    """
    if img.ndim != 4:
        raise DimensionError(f"bilinear_sample_batch needs [N,C,H,W], got {img.shape}")
    if grid.ndim != 4 or grid.shape[3] != 2 or grid.shape[0] != img.shape[0]:
        raise DimensionError(
            f"grid must be [N,Ho,Wo,2] matching batch, got {grid.shape} for image {img.shape}"
        )
    n, c, h, w = img.shape
    px = (grid.data[..., 0] + 1.0) * 0.5 * (w - 1)
    py = (grid.data[..., 1] + 1.0) * 0.5 * (h - 1)
    x0 = np.floor(px)
    y0 = np.floor(py)
    fx = (px - x0).astype(img.dtype)
    fy = (py - y0).astype(img.dtype)
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    x1 = x0 + 1
    y1 = y0 + 1

    def inbounds(xi, yi):
        return ((xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)).astype(img.dtype)

    corners = []
    for xi, yi, wgt in (
        (x0, y0, (1 - fx) * (1 - fy)),
        (x1, y0, fx * (1 - fy)),
        (x0, y1, (1 - fx) * fy),
        (x1, y1, fx * fy),
    ):
        valid = inbounds(xi, yi)
        idx = np.clip(yi, 0, h - 1) * w + np.clip(xi, 0, w - 1)
        corners.append((idx, wgt * valid, valid))

    flat = img.data.transpose(0, 2, 3, 1).reshape(n, h * w, c)
    bidx = np.arange(n)[:, None, None]
    vals = [flat[bidx, idx] for idx, _, _ in corners]  # [N,Ho,Wo,C] each
    out = sum(wgt[..., None] * v for (_, wgt, _), v in zip(corners, vals))
    data = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def bw(g):
        g2 = g.transpose(0, 2, 3, 1)  # [N,Ho,Wo,C]
        if img.requires_grad:
            gflat = np.zeros((n, h * w, c), dtype=img.dtype)
            for idx, wgt, _ in corners:
                np.add.at(gflat, (bidx, idx), wgt[..., None] * g2)
            _accumulate(
                img,
                np.ascontiguousarray(gflat.reshape(n, h, w, c).transpose(0, 3, 1, 2)),
            )
        if grid.requires_grad:
            # masked corner values; weight derivatives w.r.t. the
            # fractional offsets, then chain through the pixel scaling
            v = [vals[i] * corners[i][2][..., None] for i in range(4)]
            dfx = (v[1] - v[0]) * (1 - fy)[..., None] + (v[3] - v[2]) * fy[..., None]
            dfy = (v[2] - v[0]) * (1 - fx)[..., None] + (v[3] - v[1]) * fx[..., None]
            gg = np.empty_like(grid.data)
            gg[..., 0] = (g2 * dfx).sum(axis=3) * (0.5 * (w - 1))
            gg[..., 1] = (g2 * dfy).sum(axis=3) * (0.5 * (h - 1))
            _accumulate(grid, gg)

    return _node(data, (img, grid), bw)


def bilinear_sample(img, grid):
    """Single-image variant: [H,W,C] sampled at [Ho,Wo,2]."""
    if img.ndim != 3:
        raise DimensionError(f"bilinear_sample needs [H,W,C], got {img.shape}")
    if grid.ndim != 3 or grid.shape[2] != 2:
        raise DimensionError(f"grid must be [Ho,Wo,2], got {grid.shape}")
    h, w, c = img.shape
    ho, wo = grid.shape[0], grid.shape[1]
    nchw = reshape(transpose(img, (2, 0, 1)), (1, c, h, w))
    out = bilinear_sample_batch(nchw, reshape(grid, (1, ho, wo, 2)))
    return transpose(reshape(out, (c, ho, wo)), (1, 2, 0))


def apply_kernel_batch(img, k):
    """Cross-correlate [N,C,H,W] with per-sample kernels [N,kk,kk].

    The same kernel is applied to every channel of its sample, with
    zero padding keeping the output size equal to the input size.
    """
    if img.ndim != 4:
        raise DimensionError(f"apply_kernel_batch needs [N,C,H,W], got {img.shape}")
    if k.ndim != 3 or k.shape[1] != k.shape[2]:
        raise DimensionError(f"kernels must be [N,k,k], got {k.shape}")
    if k.shape[0] != img.shape[0]:
        raise DimensionError(f"kernel batch {k.shape[0]} != image batch {img.shape[0]}")
    kk = k.shape[1]
    if kk % 2 == 0:
        raise ConfigurationError(f"kernel size must be odd, got {kk}")
    pad = kk // 2
    n, c, h, w = img.shape
    xp = np.pad(img.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kk, kk), axis=(2, 3))
    data = np.einsum("nchwij,nij->nchw", win, k.data)

    def bw(g):
        if k.requires_grad:
            _accumulate(k, np.einsum("nchw,nchwij->nij", g, win))
        if img.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(kk):
                for j in range(kk):
                    gxp[:, :, i : i + h, j : j + w] += (
                        g * k.data[:, i, j][:, None, None, None]
                    )
            _accumulate(
                img, np.ascontiguousarray(gxp[:, :, pad : pad + h, pad : pad + w])
            )

    return _node(np.ascontiguousarray(data), (img, k), bw)


def apply_kernel(img, k):
    """Single-image variant: [H,W,C] with one [k,k] kernel."""
    if img.ndim != 3:
        raise DimensionError(f"apply_kernel needs [H,W,C], got {img.shape}")
    if k.ndim != 2 or k.shape[0] != k.shape[1]:
        raise DimensionError(f"kernel must be square 2-D, got {k.shape}")
    h, w, c = img.shape
    nchw = reshape(transpose(img, (2, 0, 1)), (1, c, h, w))
    out = apply_kernel_batch(nchw, reshape(k, (1,) + tuple(k.shape)))
    return transpose(reshape(out, (c, h, w)), (1, 2, 0))


def _infer_kind(shape):
    # trailing dims of one sequence element
    if shape[-1] == 6 and len(shape) >= 1 and (len(shape) == 1 or shape[-2] != shape[-1]):
        return "affine"
    if len(shape) >= 2 and shape[-1] == shape[-2]:
        return "conv"
    raise DimensionError(f"cannot infer transformation kind from shape {shape}")


def apply_sequence_batch(img, seq, kind):
    """Cumulatively transform [N,C,H,W] into a stack [N,C,P,H,W].

    seq is [N,P,6] for affine or [N,P,k,k] for kernels.  Step p
    transforms the output of step p-1; the stack collects every
    intermediate.
    """
    n, c, h, w = img.shape
    if seq.shape[0] != n:
        raise DimensionError(f"sequence batch {seq.shape[0]} != image batch {n}")
    p_steps = seq.shape[1]
    cur = img
    slabs = []
    for p in range(p_steps):
        step = narrow(seq, 1, p, 1)
        if kind == "affine":
            cur = bilinear_sample_batch(
                cur, affine_grid_batch(reshape(step, (n, 6)), h, w)
            )
        elif kind == "conv":
            kk = seq.shape[2]
            cur = apply_kernel_batch(cur, reshape(step, (n, kk, kk)))
        else:
            raise ConfigurationError(f"unknown transformation kind: {kind!r}")
        slabs.append(reshape(cur, (n, c, 1, h, w)))
    return concat(slabs, axis=2)


def apply_sequence(img, seq, kind=None):
    """Single-image variant: [H,W,C] with [P,6] or [P,k,k] -> [P,H,W,C]."""
    if img.ndim != 3:
        raise DimensionError(f"apply_sequence needs [H,W,C], got {img.shape}")
    if not isinstance(seq, Tensor):
        raise ConfigurationError("sequence must be a Tensor of parameters")
    if kind is None:
        kind = _infer_kind(tuple(seq.shape[1:]))
    h, w, c = img.shape
    p_steps = seq.shape[0]
    nchw = reshape(transpose(img, (2, 0, 1)), (1, c, h, w))
    stack = apply_sequence_batch(nchw, reshape(seq, (1,) + tuple(seq.shape)), kind)
    return transpose(reshape(stack, (c, p_steps, h, w)), (1, 2, 3, 0))


def apply_group(img, group, kind=None):
    """Apply T sequences ([T,P,6] or [T,P,k,k]) to one image.

    Returns a list of T stacks, each [P,H,W,C].
    """
    if not isinstance(group, Tensor):
        raise ConfigurationError("group must be a Tensor of parameters")
    if kind is None:
        kind = _infer_kind(tuple(group.shape[2:]))
    stacks = []
    for t in range(group.shape[0]):
        seq = reshape(narrow(group, 0, t, 1), tuple(group.shape[1:]))
        stacks.append(apply_sequence(img, seq, kind))
    return stacks
