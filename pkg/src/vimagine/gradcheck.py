"""Finite-difference validation of analytic gradients.

Central differences with per-coordinate step h = 1e-5*max(1,|x|),
relative error |a-n|/max(1,|a|,|n|).  Large tensors are probed on a
seeded subsample of coordinates.  Everything runs in float64; checking
float32 graphs is pointless because the differences drown in rounding.

The registry at the bottom names every differentiable op once and is
what the ``gradcheck`` CLI command iterates over.
"""

import zlib
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tt
from . import transforms as tr
from .errors import ConfigurationError


@dataclass
class CheckReport:
    name: str
    tolerance: float
    max_rel_err: float = 0.0
    n_probes: int = 0
    passed: bool = True
    failures: list = field(default_factory=list)  # (input#, flat index, analytic, numeric)


def finite_diff_check(fn, inputs, tolerance, max_probes=64, seed=0, name="op",
                      grad_offset=0.0, confirm_steps=()):
    """Compare fn's backward against central differences.

    fn() must rebuild the forward graph from ``inputs`` (leaf float64
    Tensors with requires_grad) and return a scalar Tensor.
    ``grad_offset`` is a test hook: it shifts every analytic gradient
    and should make any honest check fail.

    ``confirm_steps`` re-measures failing coordinates with the step
    scaled by each given factor; the coordinate only counts as a
    failure if every re-measurement also disagrees.  A wrong backward
    disagrees at any step size, while a probe interval that happens to
    straddle a derivative kink (a relu corner, an interpolation cell
    edge) disagrees only at the step that reaches across it, so this
    separates measurement artifacts from genuine defects in graphs too
    large to position away from every kink.
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise ConfigurationError(
                f"finite_diff_check needs float64 inputs, got {t.dtype}"
            )
        t.grad = None

    out = fn()
    out.backward()
    analytic = []
    for t in inputs:
        g = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        analytic.append(g + grad_offset)

    rng = np.random.default_rng(seed)
    report = CheckReport(name=name, tolerance=tolerance)
    for which, t in enumerate(inputs):
        flat = t.data.reshape(-1)
        size = flat.size
        if size <= max_probes:
            coords = np.arange(size)
        else:
            coords = rng.choice(size, size=max_probes, replace=False)
        ga = analytic[which].reshape(-1)
        for idx in coords:
            x0 = flat[idx]
            a = ga[idx]
            report.n_probes += 1

            def measure(scale):
                h = scale * 1e-5 * max(1.0, abs(x0))
                flat[idx] = x0 + h
                fp = fn().item()
                flat[idx] = x0 - h
                fm = fn().item()
                flat[idx] = x0
                numeric = (fp - fm) / (2.0 * h)
                if not (np.isfinite(a) and np.isfinite(numeric)):
                    return numeric, float("inf")
                return numeric, abs(a - numeric) / max(1.0, abs(a), abs(numeric))

            numeric, rel = measure(1.0)
            if rel > tolerance:
                for scale in confirm_steps:
                    numeric, rel = measure(scale)
                    if rel <= tolerance:
                        break
            if rel > report.max_rel_err:
                report.max_rel_err = rel
            if rel > tolerance:
                report.passed = False
                report.failures.append((which, int(idx), float(a), float(numeric)))
    return report


def _leaf(rng, shape):
    return tt.tensor(rng.standard_normal(shape), requires_grad=True, dtype=np.float64)


def _weighted_sum(out, rng):
    w = tt.tensor(rng.standard_normal(out.shape), dtype=np.float64)
    return tt.sum_(tt.mul(out, w))


def _check_matmul(rng):
    a, b = _leaf(rng, (3, 4)), _leaf(rng, (4, 2))
    inputs = [a, b]
    return lambda: _weighted_sum(tt.matmul(a, b), np.random.default_rng(7)), inputs


def _check_conv2d(rng):
    x, k = _leaf(rng, (2, 3, 6, 6)), _leaf(rng, (4, 3, 4, 4))
    return lambda: _weighted_sum(tt.conv2d(x, k, stride=2, pad=1), np.random.default_rng(7)), [x, k]


def _check_conv3d(rng):
    x, k = _leaf(rng, (2, 2, 5, 6, 6)), _leaf(rng, (3, 2, 3, 4, 4))
    return (
        lambda: _weighted_sum(
            tt.conv3d(x, k, stride=(1, 2, 2), pad=(1, 1, 1)), np.random.default_rng(7)
        ),
        [x, k],
    )


def _check_relu(rng):
    # keep probes away from the kink at zero
    raw = rng.uniform(0.3, 1.5, size=(3, 5)) * rng.choice([-1.0, 1.0], size=(3, 5))
    x = tt.tensor(raw, requires_grad=True, dtype=np.float64)
    return lambda: _weighted_sum(tt.relu(x), np.random.default_rng(7)), [x]


def _check_tanh(rng):
    x = _leaf(rng, (3, 5))
    return lambda: _weighted_sum(tt.tanh(x), np.random.default_rng(7)), [x]


def _check_add(rng):
    a, b = _leaf(rng, (3, 5)), _leaf(rng, (3, 5))
    return lambda: _weighted_sum(tt.add(a, b), np.random.default_rng(7)), [a, b]


def _check_mul(rng):
    a, b = _leaf(rng, (3, 5)), _leaf(rng, (3, 5))
    return lambda: _weighted_sum(tt.mul(a, b), np.random.default_rng(7)), [a, b]


def _check_scale(rng):
    x = _leaf(rng, (3, 5))
    return lambda: _weighted_sum(tt.scale(x, -0.7), np.random.default_rng(7)), [x]


def _check_softmax(rng):
    x = _leaf(rng, (3, 6))
    return lambda: _weighted_sum(tt.softmax_axis(x, 1), np.random.default_rng(7)), [x]


def _check_batch_norm(rng):
    x = tt.tensor(rng.standard_normal((5, 3, 2, 2)) * 2.0, requires_grad=True,
                  dtype=np.float64)
    gamma = tt.tensor(rng.uniform(0.5, 1.5, 3), requires_grad=True, dtype=np.float64)
    beta = tt.tensor(rng.standard_normal(3), requires_grad=True, dtype=np.float64)
    state = tt.BatchNormState(3, dtype=np.float64)

    def fn():
        return _weighted_sum(
            tt.batch_norm(x, gamma, beta, state, "train"), np.random.default_rng(7)
        )

    return fn, [x, gamma, beta]


def _check_affine_grid(rng):
    p = tt.tensor(
        tr.AFFINE_IDENTITY + 0.2 * rng.standard_normal(6),
        requires_grad=True,
        dtype=np.float64,
    )
    return lambda: _weighted_sum(tr.affine_grid(p, 6, 5), np.random.default_rng(7)), [p]


def _safe_grid(rng, h, w, ho, wo):
    # pixel coordinates with fractional parts in [0.25, 0.75]: probing
    # never crosses a cell boundary, where bilinear weights have kinks
    cx = rng.integers(0, w - 1, size=(ho, wo)) + rng.uniform(0.25, 0.75, size=(ho, wo))
    cy = rng.integers(0, h - 1, size=(ho, wo)) + rng.uniform(0.25, 0.75, size=(ho, wo))
    grid = np.stack([2.0 * cx / (w - 1) - 1.0, 2.0 * cy / (h - 1) - 1.0], axis=-1)
    return tt.tensor(grid, requires_grad=True, dtype=np.float64)


def _check_bilinear_sample(rng):
    img = _leaf(rng, (5, 6, 2))
    grid = _safe_grid(rng, 5, 6, 4, 4)
    return (
        lambda: _weighted_sum(tr.bilinear_sample(img, grid), np.random.default_rng(7)),
        [img, grid],
    )


def _check_apply_kernel(rng):
    img = _leaf(rng, (6, 6, 3))
    k = _leaf(rng, (3, 3))
    return (
        lambda: _weighted_sum(tr.apply_kernel(img, k), np.random.default_rng(7)),
        [img, k],
    )


@dataclass(frozen=True)
class OpCheck:
    name: str
    tolerance: float
    build: callable


OP_CHECKS = (
    OpCheck("matmul", 1e-6, _check_matmul),
    OpCheck("conv2d", 1e-4, _check_conv2d),
    OpCheck("conv3d", 1e-4, _check_conv3d),
    OpCheck("relu", 1e-6, _check_relu),
    OpCheck("tanh", 1e-6, _check_tanh),
    OpCheck("add", 1e-6, _check_add),
    OpCheck("mul", 1e-6, _check_mul),
    OpCheck("scale", 1e-6, _check_scale),
    OpCheck("softmax_axis", 1e-5, _check_softmax),
    OpCheck("batch_norm", 1e-3, _check_batch_norm),
    OpCheck("affine_grid", 1e-5, _check_affine_grid),
    OpCheck("bilinear_sample", 1e-4, _check_bilinear_sample),
    OpCheck("apply_kernel", 1e-4, _check_apply_kernel),
)


def run_op_suite(seed=0, perturb=None):
    """Run every registered op check once; returns a list of reports.

    ``perturb`` names an op whose analytic gradient is intentionally
    shifted, to prove the harness can fail.
    """
    reports = []
    for check in OP_CHECKS:
        rng = np.random.default_rng([seed, zlib.crc32(check.name.encode())])
        fn, inputs = check.build(rng)
        offset = 0.05 if perturb == check.name else 0.0
        reports.append(
            finite_diff_check(
                fn, inputs, check.tolerance, seed=seed, name=check.name,
                grad_offset=offset,
            )
        )
    return reports


def _mini_imaginer(seed, transform="affine"):
    """Tiny 16px float64 model for end-to-end gradient validation."""
    from .networks import Imaginer, ModelSpec

    spec = ModelSpec(
        resolution=16,
        n_frames=2,
        seq_len=2,
        cond_dim=12,
        latent_dim=6,
        enc_channels=(6, 8),
        gen_hidden=(16, 16, 16),
        merge_channels=(3, 3),
        critic_channels=(6, 6, 6, 6),
        transform=transform,
        kernel_size=3,
    )
    return Imaginer(spec, seed=seed, dtype=np.float64)


def run_pipeline_suite(seed=0, max_probes=24, perturb=None):
    """Gradient checks through composed network paths, 16px, T=2, P=2.

    Two full image -> transformations -> merge -> criticism composites
    (one per transformation kind) plus two focused slices: merged
    frames back to seeded transformation parameters, and criticism back
    to clip pixels.  These graphs hold tens of thousands of relu and
    sampling-cell values, so unlike the single-op checks the operating
    point cannot be positioned away from every derivative kink; failing
    probes are instead confirmed at reduced step sizes, which clears
    kink straddles but keeps genuine backward defects failing.
    """
    confirm = (0.1, 0.01)
    reports = []

    # Affine composite.  The final generator bias is drawn wide because
    # at raw initialization the transformations sit numerically on the
    # identity, aligning every sample coordinate with a pixel center,
    # which is exactly where bilinear interpolation kinks.
    im = _mini_imaginer(seed, "affine")
    res = im.spec.resolution
    rng = np.random.default_rng([seed, 0xC0FFEE])
    x = tt.tensor(rng.uniform(0.1, 0.9, (2, 1, res, res)),
                  requires_grad=True, dtype=np.float64)
    z = tt.tensor(rng.standard_normal((2, im.spec.latent_dim)),
                  requires_grad=True, dtype=np.float64)
    bias = im.generator.store[f"fc{len(im.spec.gen_hidden)}.b"]
    bias.data[...] = rng.standard_normal(bias.shape)

    def composite_affine():
        clip = im.imagine(x, z, mode="train")
        return _weighted_sum(im.criticize(clip, mode="train"),
                             np.random.default_rng(7))

    probes = [
        x,
        z,
        im.encoder.store["conv0.w"],
        im.generator.store["fc0.w"],
        im.merger.store["head.w"],
        im.critic.store["conv0.w"],
    ]
    offset = 0.05 if perturb == "composite_affine" else 0.0
    reports.append(
        finite_diff_check(composite_affine, probes, 1e-4, max_probes=max_probes,
                          seed=seed, name="composite_affine", grad_offset=offset,
                          confirm_steps=confirm)
    )

    # Kernel composite: the warp is linear in image and kernel, so the
    # generator output layer is probed too.  The bias draw keeps the
    # kernels non-trivial; near-zero kernels collapse the merge stacks
    # to near-constant batches, starving the normalizer of variance and
    # blowing up its curvature beyond what finite differences resolve.
    imk = _mini_imaginer(seed, "conv")
    rngk = np.random.default_rng([seed, 0xBEEF])
    xk = tt.tensor(rngk.uniform(0.1, 0.9, (2, 1, res, res)),
                   requires_grad=True, dtype=np.float64)
    zk = tt.tensor(rngk.standard_normal((2, imk.spec.latent_dim)),
                   requires_grad=True, dtype=np.float64)
    bias_k = imk.generator.store[f"fc{len(imk.spec.gen_hidden)}.b"]
    bias_k.data[...] = 0.5 * rngk.standard_normal(bias_k.shape)

    def composite_conv():
        clip = imk.imagine(xk, zk, mode="train")
        return _weighted_sum(imk.criticize(clip, mode="train"),
                             np.random.default_rng(7))

    probes_k = [
        xk,
        zk,
        imk.encoder.store["conv0.w"],
        imk.generator.store["fc0.w"],
        imk.generator.store["fc3.w"],
        imk.generator.store["fc3.b"],
        imk.merger.store["head.w"],
        imk.critic.store["conv0.w"],
    ]
    offset = 0.05 if perturb == "composite_conv" else 0.0
    reports.append(
        finite_diff_check(composite_conv, probes_k, 1e-4, max_probes=max_probes,
                          seed=seed, name="composite_conv", grad_offset=offset,
                          confirm_steps=confirm)
    )

    # Merged frames back to the transformation kernels themselves; the
    # frozen eval-mode normalizer keeps this a pure function of the
    # parameters rather than of batch statistics.
    group = imk.generator.identity_group(2, dtype=np.float64)
    params = tt.tensor(
        group.params.data + 0.1 * rngk.standard_normal(group.params.shape),
        requires_grad=True, dtype=np.float64,
    )

    def merge_path():
        from .networks import TransformGroup

        stacks = imk.group_stacks(xk, TransformGroup("conv", params))
        frames = imk.merge(xk, stacks, mode="eval")
        total = tt.concat([tt.reshape(f, (2, -1)) for f in frames], axis=1)
        return _weighted_sum(total, np.random.default_rng(11))

    offset = 0.05 if perturb == "merge_to_params" else 0.0
    reports.append(
        finite_diff_check(merge_path, [params], 1e-4, max_probes=max_probes,
                          seed=seed, name="merge_to_params", grad_offset=offset,
                          confirm_steps=confirm)
    )

    # Criticism back to clip pixels.
    clip_leaf = tt.tensor(
        rngk.uniform(0.1, 0.9, (2, 1, imk.spec.clip_frames, res, res)),
        requires_grad=True, dtype=np.float64,
    )

    def critic_path():
        return _weighted_sum(imk.criticize(clip_leaf, mode="train"),
                             np.random.default_rng(13))

    offset = 0.05 if perturb == "criticize_wrt_clip" else 0.0
    reports.append(
        finite_diff_check(critic_path, [clip_leaf], 1e-4, max_probes=max_probes,
                          seed=seed, name="criticize_wrt_clip", grad_offset=offset,
                          confirm_steps=confirm)
    )
    return reports
