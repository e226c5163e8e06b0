"""The four learned components and the sampling path.

Encoder: strided conv2d stack -> condition vector.
TransformGenerator: FC stack on [condition, latent] -> a transformation
group (T sequences of P transformations each).
Merger: conv3d feature layers over an intermediate stack plus a weight
head; frames are per-pixel convex combinations of the stack slices.
Critic: conv3d stack over a 5-frame clip -> one unbounded real per clip.

All parameters live in per-network ParamStores; batch-norm running
statistics are held separately and only mutate in train mode.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tt
from . import transforms as tr
from .errors import ConfigurationError, DimensionError
from .optim import ParamStore

SUPPORTED_RESOLUTIONS = (16, 32, 64, 128)


def default_encoder_channels(resolution):
    n_layers = int(np.log2(resolution)) - 1
    return tuple(min(32 * 2**i, 512) for i in range(n_layers))


@dataclass
class ModelSpec:
    """Architecture hyperparameters; defaults target 64x64 clips."""

    resolution: int = 64
    in_channels: int = 1
    cond_dim: int = 512
    latent_dim: int = 100
    n_frames: int = 4  # generated frames per clip
    seq_len: int = 5  # transformations per sequence
    transform: str = "affine"  # or "conv"
    kernel_size: int = 9
    normalize_kernels: bool = False
    enc_channels: tuple = ()
    gen_hidden: tuple = (1024, 1024, 1024)
    merge_channels: tuple = (8, 8)
    critic_channels: tuple = (32, 64, 128, 256)
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5

    def __post_init__(self):
        if self.resolution not in SUPPORTED_RESOLUTIONS:
            raise ConfigurationError(
                f"unsupported resolution {self.resolution}; "
                f"choose from {SUPPORTED_RESOLUTIONS}"
            )
        if self.transform not in ("affine", "conv"):
            raise ConfigurationError(f"unknown transform type: {self.transform!r}")
        if self.transform == "conv" and self.kernel_size % 2 == 0:
            raise ConfigurationError(
                f"transformation kernel size must be odd, got {self.kernel_size}"
            )
        if self.n_frames < 1 or self.seq_len < 1:
            raise ConfigurationError("n_frames and seq_len must be >= 1")
        if not self.enc_channels:
            self.enc_channels = default_encoder_channels(self.resolution)
        self.enc_channels = tuple(int(c) for c in self.enc_channels)
        self.gen_hidden = tuple(int(c) for c in self.gen_hidden)
        self.merge_channels = tuple(int(c) for c in self.merge_channels)
        self.critic_channels = tuple(int(c) for c in self.critic_channels)
        if len(self.critic_channels) != 4:
            raise ConfigurationError(
                "critic needs exactly 4 strided layers before the head"
            )
        if 2 ** (len(self.enc_channels) + 1) > self.resolution:
            raise ConfigurationError(
                f"{len(self.enc_channels)} encoder layers halve {self.resolution}px "
                "below 2px"
            )

    @property
    def params_per_transform(self):
        return 6 if self.transform == "affine" else self.kernel_size**2

    @property
    def clip_frames(self):
        return self.n_frames + 1


def truncated_normal(rng, shape, std=0.02, clip_sigmas=2.0):
    """Normal draws redrawn until inside clip_sigmas standard deviations."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > clip_sigmas * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > clip_sigmas * std
    return out


def _weight(store, name, rng, shape, dtype):
    return store.add(
        name, tt.Tensor(truncated_normal(rng, shape).astype(dtype), requires_grad=True)
    )


def _bias(store, name, shape, dtype):
    return store.add(name, tt.Tensor(np.zeros(shape, dtype=dtype), requires_grad=True))


def _bn_params(store, states, name, channels, spec, dtype):
    gamma = store.add(
        name + ".gamma", tt.Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
    )
    beta = store.add(
        name + ".beta", tt.Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
    )
    states[name] = tt.BatchNormState(
        channels, momentum=spec.bn_momentum, eps=spec.bn_eps, dtype=dtype
    )
    return gamma, beta


def _add_channel_bias(x, b):
    bshape = (1, b.shape[0]) + (1,) * (x.ndim - 2)
    return tt.add(x, tt.reshape(b, bshape))


class Encoder:
    """Strided conv stack ending in a fully connected condition head."""

    def __init__(self, spec, rng, dtype=np.float32):
        self.spec = spec
        self.store = ParamStore()
        self.bn_states = {}
        chans = (spec.in_channels,) + spec.enc_channels
        for i in range(len(spec.enc_channels)):
            _weight(self.store, f"conv{i}.w", rng, (chans[i + 1], chans[i], 4, 4), dtype)
            _bias(self.store, f"conv{i}.b", chans[i + 1], dtype)
            if i > 0:
                _bn_params(self.store, self.bn_states, f"conv{i}.bn",
                           chans[i + 1], spec, dtype)
        side = spec.resolution // 2 ** len(spec.enc_channels)
        flat = spec.enc_channels[-1] * side * side
        self._flat = flat
        _weight(self.store, "fc.w", rng, (flat, spec.cond_dim), dtype)
        _bias(self.store, "fc.b", spec.cond_dim, dtype)

    def __call__(self, x, mode="train"):
        spec = self.spec
        if x.ndim != 4 or x.shape[1] != spec.in_channels:
            raise DimensionError(
                f"encoder expects [B,{spec.in_channels},H,W], got {x.shape}"
            )
        if x.shape[2] != spec.resolution or x.shape[3] != spec.resolution:
            raise ConfigurationError(
                f"encoder built for {spec.resolution}px, got {x.shape[2]}x{x.shape[3]}"
            )
        h = x
        for i in range(len(spec.enc_channels)):
            h = tt.conv2d(h, self.store[f"conv{i}.w"], stride=2, pad=1)
            h = _add_channel_bias(h, self.store[f"conv{i}.b"])
            if i > 0:
                h = tt.batch_norm(
                    h,
                    self.store[f"conv{i}.bn.gamma"],
                    self.store[f"conv{i}.bn.beta"],
                    self.bn_states[f"conv{i}.bn"],
                    mode,
                )
            h = tt.relu(h)
        h = tt.reshape(h, (x.shape[0], self._flat))
        return tt.add(tt.matmul(h, self.store["fc.w"]), tt.reshape(self.store["fc.b"], (1, -1)))


@dataclass
class TransformGroup:
    """Applicable transformation parameters for a batch of images."""

    kind: str  # "affine" | "conv"
    params: tt.Tensor  # [B,T,P,6] or [B,T,P,k,k]

    @property
    def n_frames(self):
        return self.params.shape[1]

    @property
    def seq_len(self):
        return self.params.shape[2]


class TransformGenerator:
    """FC stack mapping [condition, latent] to a transformation group."""

    def __init__(self, spec, rng, dtype=np.float32):
        self.spec = spec
        self.store = ParamStore()
        in_dim = spec.cond_dim + spec.latent_dim
        out_dim = spec.n_frames * spec.seq_len * spec.params_per_transform
        widths = (in_dim,) + spec.gen_hidden + (out_dim,)
        for i in range(len(widths) - 1):
            _weight(self.store, f"fc{i}.w", rng, (widths[i], widths[i + 1]), dtype)
            _bias(self.store, f"fc{i}.b", widths[i + 1], dtype)
        self._n_layers = len(widths) - 1

    def __call__(self, cond, z):
        spec = self.spec
        if cond.ndim != 2 or cond.shape[1] != spec.cond_dim:
            raise ConfigurationError(
                f"condition must be [B,{spec.cond_dim}], got {cond.shape}"
            )
        if z.ndim != 2 or z.shape[1] != spec.latent_dim:
            raise ConfigurationError(
                f"latent must be [B,{spec.latent_dim}], got {z.shape}"
            )
        if cond.shape[0] != z.shape[0]:
            raise ConfigurationError(
                f"condition batch {cond.shape[0]} != latent batch {z.shape[0]}"
            )
        h = tt.concat([cond, z], axis=1)
        for i in range(self._n_layers):
            h = tt.add(
                tt.matmul(h, self.store[f"fc{i}.w"]),
                tt.reshape(self.store[f"fc{i}.b"], (1, -1)),
            )
            if i < self._n_layers - 1:
                h = tt.relu(h)
        return self._to_group(h)

    def _to_group(self, raw):
        spec = self.spec
        b = raw.shape[0]
        k = spec.params_per_transform
        shaped = tt.reshape(raw, (b, spec.n_frames, spec.seq_len, k))
        if spec.transform == "affine":
            # offsets from identity, squashed so every entry stays
            # within 0.5 of the identity matrix
            ident = tt.Tensor(
                np.broadcast_to(
                    tr.AFFINE_IDENTITY.astype(raw.dtype), (1, 1, 1, 6)
                ).copy()
            )
            params = tt.add(ident, tt.scale(tt.tanh(shaped), 0.5))
            return TransformGroup("affine", params)
        kk = spec.kernel_size
        if spec.normalize_kernels:
            shaped = tt.softmax_axis(shaped, 3)
        params = tt.reshape(shaped, (b, spec.n_frames, spec.seq_len, kk, kk))
        return TransformGroup("conv", params)

    def identity_group(self, batch, dtype=np.float32):
        """Test hook: the group that should reproduce the input image."""
        spec = self.spec
        if spec.transform == "affine":
            block = np.broadcast_to(
                tr.AFFINE_IDENTITY.astype(dtype),
                (batch, spec.n_frames, spec.seq_len, 6),
            ).copy()
        else:
            delta = tr.identity_kernel(spec.kernel_size, dtype)
            block = np.broadcast_to(
                delta, (batch, spec.n_frames, spec.seq_len) + delta.shape
            ).copy()
        return TransformGroup(spec.transform, tt.Tensor(block))


class Merger:
    """Volumetric weighting head: stack in, convex combination out."""

    def __init__(self, spec, rng, dtype=np.float32):
        self.spec = spec
        self.store = ParamStore()
        self.bn_states = {}
        chans = (spec.in_channels,) + spec.merge_channels
        for i in range(len(spec.merge_channels)):
            _weight(
                self.store, f"conv{i}.w", rng, (chans[i + 1], chans[i], 3, 3, 3), dtype
            )
            _bias(self.store, f"conv{i}.b", chans[i + 1], dtype)
            _bn_params(self.store, self.bn_states, f"conv{i}.bn", chans[i + 1], spec, dtype)
        _weight(self.store, "head.w", rng, (1, chans[-1], 3, 3, 3), dtype)
        _bias(self.store, "head.b", 1, dtype)

    def weights(self, stack, mode="train"):
        """Per-pixel distribution over the P stack slices: [B,1,P,H,W]."""
        h = stack
        for i in range(len(self.spec.merge_channels)):
            h = tt.conv3d(h, self.store[f"conv{i}.w"], stride=(1, 1, 1), pad=(1, 1, 1))
            h = _add_channel_bias(h, self.store[f"conv{i}.b"])
            h = tt.batch_norm(
                h,
                self.store[f"conv{i}.bn.gamma"],
                self.store[f"conv{i}.bn.beta"],
                self.bn_states[f"conv{i}.bn"],
                mode,
            )
            h = tt.relu(h)
        logits = tt.conv3d(h, self.store["head.w"], stride=(1, 1, 1), pad=(1, 1, 1))
        logits = _add_channel_bias(logits, self.store["head.b"])
        return tt.softmax_axis(logits, 2)

    def __call__(self, stack, mode="train"):
        if stack.ndim != 5:
            raise DimensionError(f"merge stack must be [B,C,P,H,W], got {stack.shape}")
        w = self.weights(stack, mode)
        return tt.sum_(tt.mul(stack, w), axis=2)


class Critic:
    """Spatio-temporal conv stack scoring 5-frame clips."""

    def __init__(self, spec, rng, dtype=np.float32):
        self.spec = spec
        self.store = ParamStore()
        self.bn_states = {}
        chans = (spec.in_channels,) + spec.critic_channels
        for i in range(4):
            _weight(
                self.store, f"conv{i}.w", rng, (chans[i + 1], chans[i], 3, 4, 4), dtype
            )
            _bias(self.store, f"conv{i}.b", chans[i + 1], dtype)
            if i > 0:
                _bn_params(self.store, self.bn_states, f"conv{i}.bn",
                           chans[i + 1], spec, dtype)
        side = spec.resolution // 16
        self._final_side = side
        _weight(self.store, "head.w", rng, (1, chans[-1], 3, side, side), dtype)
        _bias(self.store, "head.b", 1, dtype)

    def __call__(self, clip, mode="train"):
        spec = self.spec
        if clip.ndim != 5:
            raise DimensionError(f"critic expects [B,C,D,H,W], got {clip.shape}")
        if clip.shape[2] != spec.clip_frames:
            raise ConfigurationError(
                f"critic expects {spec.clip_frames}-frame clips, got {clip.shape[2]}"
            )
        if clip.shape[1] != spec.in_channels or clip.shape[3] != spec.resolution:
            raise ConfigurationError(
                f"critic built for {spec.in_channels}x{spec.resolution}px clips, "
                f"got shape {clip.shape}"
            )
        h = clip
        for i in range(4):
            h = tt.conv3d(h, self.store[f"conv{i}.w"], stride=(1, 2, 2), pad=(1, 1, 1))
            h = _add_channel_bias(h, self.store[f"conv{i}.b"])
            if i > 0:
                h = tt.batch_norm(
                    h,
                    self.store[f"conv{i}.bn.gamma"],
                    self.store[f"conv{i}.bn.beta"],
                    self.bn_states[f"conv{i}.bn"],
                    mode,
                )
            h = tt.relu(h)
        h = tt.conv3d(h, self.store["head.w"], stride=(1, 1, 1), pad=(0, 0, 0))
        h = _add_channel_bias(h, self.store["head.b"])
        # average the remaining temporal taps into one criticism per clip
        return tt.reshape(tt.mean_(h, axis=(1, 2, 3, 4)), (clip.shape[0],))


class Imaginer:
    """Bundles the networks and owns the end-to-end sampling path."""

    def __init__(self, spec, seed=0, dtype=np.float32):
        self.spec = spec
        self.dtype = dtype
        root = np.random.SeedSequence([int(seed), 0x56494D])
        enc_rng, gen_rng, mrg_rng, cri_rng = (
            np.random.default_rng(s) for s in root.spawn(4)
        )
        self.encoder = Encoder(spec, enc_rng, dtype)
        self.generator = TransformGenerator(spec, gen_rng, dtype)
        self.merger = Merger(spec, mrg_rng, dtype)
        self.critic = Critic(spec, cri_rng, dtype)

    def generator_side_params(self):
        """Everything the generator objective trains, one store."""
        merged = ParamStore()
        merged.merge("enc", self.encoder.store)
        merged.merge("gen", self.generator.store)
        merged.merge("mrg", self.merger.store)
        return merged

    def critic_params(self):
        merged = ParamStore()
        merged.merge("cri", self.critic.store)
        return merged

    def bn_states(self):
        out = {}
        for prefix, net in (
            ("enc", self.encoder),
            ("mrg", self.merger),
            ("cri", self.critic),
        ):
            for name, st in net.bn_states.items():
                out[f"{prefix}.{name}"] = st
        return out

    def encode(self, x, mode="train"):
        return self.encoder(x, mode)

    def generate(self, cond, z):
        return self.generator(cond, z)

    def merge(self, x, stacks, mode="train"):
        """Merge T stacks into T frames, each shaped like x."""
        if len(stacks) != self.spec.n_frames:
            raise DimensionError(
                f"expected {self.spec.n_frames} stacks, got {len(stacks)}"
            )
        frames = []
        for stack in stacks:
            if stack.shape[0] != x.shape[0] or stack.shape[3:] != x.shape[2:]:
                raise DimensionError(
                    f"stack shape {stack.shape} does not match image {x.shape}"
                )
            frames.append(self.merger(stack, mode))
        return frames

    def group_stacks(self, x, group):
        """Apply a TransformGroup to a batch: T stacks of [B,C,P,H,W]."""
        stacks = []
        for t in range(group.n_frames):
            seq = tt.narrow(group.params, 1, t, 1)
            seq = tt.reshape(seq, (seq.shape[0],) + tuple(seq.shape[2:]))
            stacks.append(tr.apply_sequence_batch(x, seq, group.kind))
        return stacks

    def imagine(self, x, z, mode="train", force_identity=False):
        """Full sampling path: image [B,C,H,W] -> clip [B,C,T+1,H,W].

        Frame 0 is the input image itself; frames 1..T are merged from
        the transformed stacks.  ``force_identity`` swaps the generated
        group for exact identity transformations (test hook).
        """
        cond = self.encode(x, mode)
        group = self.generate(cond, z)
        if force_identity:
            group = self.generator.identity_group(x.shape[0], dtype=x.dtype)
        stacks = self.group_stacks(x, group)
        frames = self.merge(x, stacks, mode)
        b, c, h, w = x.shape
        slabs = [tt.reshape(x, (b, c, 1, h, w))]
        slabs += [tt.reshape(f, (b, c, 1, h, w)) for f in frames]
        return tt.concat(slabs, axis=2)

    def criticize(self, clip, mode="train"):
        return self.critic(clip, mode)

    def sample_clips(self, image, m, seed, mode="eval"):
        """Sample m clips for one [H,W,C] image; returns [m,T+1,H,W,C].

        Latents are standard normal, deterministic per seed.  Output is
        plain numpy, clamped to [0,1] for storage.
        """
        if m < 1:
            raise ConfigurationError(f"need m >= 1 clips, got {m}")
        spec = self.spec
        if image.ndim == 2:
            image = image[..., None]
        if image.shape != (spec.resolution, spec.resolution, spec.in_channels):
            raise ConfigurationError(
                f"image shape {image.shape} does not match model "
                f"({spec.resolution}x{spec.resolution}x{spec.in_channels})"
            )
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5A]))
        z = rng.standard_normal((m, spec.latent_dim)).astype(self.dtype)
        nchw = np.repeat(
            image.transpose(2, 0, 1)[None].astype(self.dtype), m, axis=0
        )
        with tt.no_grad():
            clip = self.imagine(tt.Tensor(nchw), tt.Tensor(z), mode=mode)
        out = clip.data.transpose(0, 2, 3, 4, 1)  # [m,T+1,H,W,C]
        return np.clip(out, 0.0, 1.0)
