"""Wasserstein-GAN training loop with weight clipping and RMSProp.

Each iteration runs `n_critic` critic updates followed by one update of
the generator side (encoder, transformation generator, merger), the
classic small-learning-rate recipe.  The critic maximizes the score gap
between real clips and clips imagined from the same images, so the
negated critic loss tracks an estimate of the Earth-Mover distance that
should fall as the generator catches up.

Everything stochastic in the loop (batch indices, latent draws) comes
from one generator whose state is checkpointed, which makes a resumed
run bit-identical to an uninterrupted one.
"""

import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as ckpt
from . import data as vdata
from . import media
from . import tensor as tt
from .errors import ConfigurationError, FormatError, InvariantError
from .networks import SUPPORTED_RESOLUTIONS, Imaginer, ModelSpec
from .optim import OptimizerState, clip_params, rmsprop_step

METRICS_HEADER = "iter,loss_c,loss_g,em_estimate,wall_s"
_TRAIN_STREAM = 0x545249
_DATASETS = ("mnist", "shapes")
_TRANSFORMS = ("affine", "conv")
_MAX_SEED = 2**48  # seeds round-trip through two 24-bit float32 limbs


@dataclass(frozen=True)
class TrainConfig:
    """Everything a training run depends on.

    Numeric values are stored in checkpoints as float32, so exact
    resume needs values representable in float32 (all defaults are).
    """

    total_iterations: int
    seed: int
    learning_rate: float = 5e-5
    n_critic: int = 5
    clip_c: float = 0.01
    batch_size: int = 32
    dataset: str = "shapes"
    transform: str = "affine"
    resolution: int = 64
    checkpoint_interval: int = 100
    # network geometry; empty tuples / 0 fall back to ModelSpec defaults
    cond_dim: int = 512
    latent_dim: int = 100
    kernel_size: int = 0
    enc_channels: tuple = ()
    gen_hidden: tuple = (1024, 1024, 1024)
    merge_channels: tuple = (8, 8)
    critic_channels: tuple = (32, 64, 128, 256)
    # dataset knobs; dataset_size 0 and negative geometry = defaults
    dataset_size: int = 0
    shapes_speed_max: float = -1.0
    shapes_half_min: float = -1.0
    shapes_half_max: float = -1.0
    mnist_idx: str = ""

    def __post_init__(self):
        if self.total_iterations < 1:
            raise ConfigurationError(
                f"total_iterations must be >= 1, got {self.total_iterations}")
        if not (0 <= self.seed < _MAX_SEED):
            raise ConfigurationError(
                f"seed must be in [0, 2^48), got {self.seed}")
        if self.learning_rate <= 0:
            raise ConfigurationError(
                f"learning_rate must be > 0, got {self.learning_rate}")
        if self.n_critic < 1:
            raise ConfigurationError(f"n_critic must be >= 1, got {self.n_critic}")
        if self.clip_c <= 0:
            raise ConfigurationError(f"clip_c must be > 0, got {self.clip_c}")
        if self.batch_size < 1:
            raise ConfigurationError(
                f"batch_size must be >= 1, got {self.batch_size}")
        if self.dataset not in _DATASETS:
            raise ConfigurationError(
                f"dataset must be one of {_DATASETS}, got {self.dataset!r}")
        if self.transform not in _TRANSFORMS:
            raise ConfigurationError(
                f"transform must be one of {_TRANSFORMS}, got {self.transform!r}")
        if self.resolution not in SUPPORTED_RESOLUTIONS:
            raise ConfigurationError(
                f"resolution must be one of {SUPPORTED_RESOLUTIONS}, "
                f"got {self.resolution}")
        if self.checkpoint_interval < 1:
            raise ConfigurationError(
                f"checkpoint_interval must be >= 1, got {self.checkpoint_interval}")
        object.__setattr__(self, "enc_channels", tuple(int(c) for c in self.enc_channels))
        object.__setattr__(self, "gen_hidden", tuple(int(c) for c in self.gen_hidden))
        object.__setattr__(self, "merge_channels", tuple(int(c) for c in self.merge_channels))
        object.__setattr__(self, "critic_channels", tuple(int(c) for c in self.critic_channels))

    def resolved_kernel_size(self):
        if self.kernel_size:
            return self.kernel_size
        # 9 at 64px and below; 17 at 128px (the nearest odd size that a
        # centered kernel supports)
        return 9 if self.resolution <= 64 else 17

    def model_spec(self):
        return ModelSpec(
            resolution=self.resolution,
            in_channels=1 if self.dataset == "mnist" else 3,
            cond_dim=self.cond_dim,
            latent_dim=self.latent_dim,
            transform=self.transform,
            kernel_size=self.resolved_kernel_size(),
            enc_channels=self.enc_channels,
            gen_hidden=self.gen_hidden,
            merge_channels=self.merge_channels,
            critic_channels=self.critic_channels,
        )

    def make_dataset(self):
        if self.dataset == "mnist":
            sprites = (vdata.load_idx(self.mnist_idx) if self.mnist_idx
                       else vdata.glyph_sprites())
            cfg = vdata.MovingMnistConfig(size=self.resolution)
            n = self.dataset_size or vdata.MNIST_TRAIN_CLIPS
            return vdata.MovingMnistDataset(cfg, sprites, self.seed, n)
        kwargs = {"size": self.resolution}
        if self.shapes_speed_max >= 0:
            kwargs["speed_max"] = self.shapes_speed_max
        if self.shapes_half_min >= 0:
            kwargs["half_min"] = self.shapes_half_min
        if self.shapes_half_max >= 0:
            kwargs["half_max"] = self.shapes_half_max
        cfg = vdata.ShapesConfig(**kwargs)
        n = self.dataset_size or vdata.SHAPES_TRAIN_CLIPS
        return vdata.ShapesDataset(cfg, self.seed, n)


@dataclass(frozen=True)
class MetricsRecord:
    iteration: int
    loss_c: float
    loss_g: float
    em_estimate: float
    wall_s: float


def metrics_csv(records):
    lines = [METRICS_HEADER]
    for r in records:
        lines.append(
            f"{r.iteration},{r.loss_c!r},{r.loss_g!r},{r.em_estimate!r},{r.wall_s!r}")
    return "\n".join(lines) + "\n"


def parse_metrics(text):
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != METRICS_HEADER:
        raise FormatError(
            f"metrics CSV must start with header {METRICS_HEADER!r}")
    records = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 5:
            raise FormatError(f"metrics row needs 5 fields: {ln!r}")
        records.append(MetricsRecord(
            int(parts[0]), float(parts[1]), float(parts[2]),
            float(parts[3]), float(parts[4])))
    return records


@dataclass
class TrainState:
    config: TrainConfig
    imaginer: Imaginer
    gen_params: object
    cri_params: object
    opt_gen: OptimizerState
    opt_cri: OptimizerState
    rng: np.random.Generator
    iteration: int = 0
    records: list = field(default_factory=list)


def init_state(config):
    imaginer = Imaginer(config.model_spec(), seed=config.seed)
    state = TrainState(
        config=config,
        imaginer=imaginer,
        gen_params=imaginer.generator_side_params(),
        cri_params=imaginer.critic_params(),
        opt_gen=OptimizerState(lr=config.learning_rate),
        opt_cri=OptimizerState(lr=config.learning_rate),
        rng=np.random.default_rng(
            np.random.SeedSequence([config.seed, _TRAIN_STREAM])),
    )
    return state


def _param_norm_dump(state):
    lines = []
    for label, store in (("generator-side", state.gen_params),
                         ("critic", state.cri_params)):
        for name, p in store.items():
            lines.append(
                f"  {label} {name}: max|p|={np.abs(p.data).max():.3e} "
                f"l2={np.linalg.norm(p.data.ravel()):.3e}")
    return "\n".join(lines)


def _check_finite(value, label, state):
    if not np.isfinite(value):
        raise InvariantError(
            f"{label} became non-finite ({value}) at iteration "
            f"{state.iteration}; parameter norms:\n{_param_norm_dump(state)}")


def draw_batch(state, dataset):
    """Stack batch_size random clips as float32 [B,C,F,H,W]."""
    idx = state.rng.integers(0, len(dataset), size=state.config.batch_size)
    clips = np.stack([dataset.clip(int(i)) for i in idx])  # [B,F,H,W,C]
    return np.ascontiguousarray(
        clips.transpose(0, 4, 1, 2, 3).astype(np.float32))


def draw_latent(state, batch):
    return state.rng.standard_normal(
        (batch, state.config.latent_dim)).astype(np.float32)


def critic_gap(scores_fake, scores_real):
    """Critic objective: mean fake score minus mean real score."""
    return tt.add(tt.mean_(scores_fake), tt.scale(tt.mean_(scores_real), -1.0))


def critic_step(state, real_batch):
    """One critic update against a batch of real clips.

    Fake clips are imagined from the batch's own first frames with
    fresh latents, without recording the generator graph; only critic
    parameters receive the update, and they are clamped to
    [-clip_c, clip_c] afterwards.

    Returns the critic loss value.
    """
    x = np.ascontiguousarray(real_batch[:, :, 0])
    z = draw_latent(state, real_batch.shape[0])
    with tt.no_grad():
        fake = state.imaginer.imagine(tt.tensor(x), tt.tensor(z), mode="train")
    scores_fake = state.imaginer.criticize(tt.tensor(fake.data), mode="train")
    scores_real = state.imaginer.criticize(tt.tensor(real_batch), mode="train")
    loss = critic_gap(scores_fake, scores_real)
    value = float(loss.data)
    _check_finite(value, "critic loss", state)
    loss.backward()
    rmsprop_step(state.cri_params, state.opt_cri)
    clip_params(state.cri_params, state.config.clip_c)
    state.gen_params.zero_grad()
    return value


def generator_objective(imaginer, x, z, mode="train"):
    """Generator loss tensor (negated mean criticism) plus the clips."""
    clip = imaginer.imagine(x, z, mode=mode)
    scores = imaginer.criticize(clip, mode=mode)
    return tt.scale(tt.mean_(scores), -1.0), clip


def generator_step(state, real_batch):
    """One generator-side update conditioned on the batch's first frames.

    The critic participates in the forward/backward pass but its
    parameters are left untouched.  Returns the generator loss value.
    """
    x = np.ascontiguousarray(real_batch[:, :, 0])
    z = draw_latent(state, real_batch.shape[0])
    loss, _ = generator_objective(
        state.imaginer, tt.tensor(x), tt.tensor(z), mode="train")
    value = float(loss.data)
    _check_finite(value, "generator loss", state)
    loss.backward()
    rmsprop_step(state.gen_params, state.opt_gen)
    state.cri_params.zero_grad()
    return value


# --- checkpoint bridge ------------------------------------------------

def _cfg_entries(config):
    def scalar(v):
        return np.float32(v).reshape(())

    def vector(vals):
        return np.asarray(vals, dtype=np.float32)

    return {
        "cfg.batch_size": scalar(config.batch_size),
        "cfg.checkpoint_interval": scalar(config.checkpoint_interval),
        "cfg.clip_c": scalar(config.clip_c),
        "cfg.cond_dim": scalar(config.cond_dim),
        "cfg.critic_channels": vector(config.critic_channels),
        "cfg.dataset": scalar(_DATASETS.index(config.dataset)),
        "cfg.dataset_size": scalar(config.dataset_size),
        "cfg.enc_channels": vector(config.enc_channels),
        "cfg.gen_hidden": vector(config.gen_hidden),
        "cfg.kernel_size": scalar(config.kernel_size),
        "cfg.latent_dim": scalar(config.latent_dim),
        "cfg.learning_rate": scalar(config.learning_rate),
        "cfg.merge_channels": vector(config.merge_channels),
        "cfg.n_critic": scalar(config.n_critic),
        "cfg.resolution": scalar(config.resolution),
        "cfg.seed_hi": scalar(config.seed >> 24),
        "cfg.seed_lo": scalar(config.seed & 0xFFFFFF),
        "cfg.shapes_half_max": scalar(config.shapes_half_max),
        "cfg.shapes_half_min": scalar(config.shapes_half_min),
        "cfg.shapes_speed_max": scalar(config.shapes_speed_max),
        "cfg.total_iterations": scalar(config.total_iterations),
        "cfg.transform": scalar(_TRANSFORMS.index(config.transform)),
    }


def config_from_entries(entries):
    """Rebuild a TrainConfig from checkpoint entries.

    The mnist_idx path is not persisted (checkpoints hold only float32
    data); sampling from an mnist checkpoint falls back to the built-in
    glyph sprites unless an image is supplied explicitly.
    """
    def scalar(name):
        if name not in entries:
            raise FormatError(f"checkpoint missing config entry {name!r}")
        return float(entries[name])

    def vec(name):
        if name not in entries:
            raise FormatError(f"checkpoint missing config entry {name!r}")
        return tuple(int(v) for v in np.asarray(entries[name]).ravel())

    return TrainConfig(
        total_iterations=int(scalar("cfg.total_iterations")),
        seed=(int(scalar("cfg.seed_hi")) << 24) | int(scalar("cfg.seed_lo")),
        learning_rate=scalar("cfg.learning_rate"),
        n_critic=int(scalar("cfg.n_critic")),
        clip_c=scalar("cfg.clip_c"),
        batch_size=int(scalar("cfg.batch_size")),
        dataset=_DATASETS[int(scalar("cfg.dataset"))],
        transform=_TRANSFORMS[int(scalar("cfg.transform"))],
        resolution=int(scalar("cfg.resolution")),
        checkpoint_interval=int(scalar("cfg.checkpoint_interval")),
        cond_dim=int(scalar("cfg.cond_dim")),
        latent_dim=int(scalar("cfg.latent_dim")),
        kernel_size=int(scalar("cfg.kernel_size")),
        enc_channels=vec("cfg.enc_channels"),
        gen_hidden=vec("cfg.gen_hidden"),
        merge_channels=vec("cfg.merge_channels"),
        critic_channels=vec("cfg.critic_channels"),
        dataset_size=int(scalar("cfg.dataset_size")),
        shapes_speed_max=scalar("cfg.shapes_speed_max"),
        shapes_half_min=scalar("cfg.shapes_half_min"),
        shapes_half_max=scalar("cfg.shapes_half_max"),
    )


def state_entries(state):
    """All persistent arrays of a TrainState, deterministically ordered."""
    entries = dict(sorted(_cfg_entries(state.config).items()))
    for name, p in sorted(state.gen_params.items()):
        entries[f"param.{name}"] = p.data
    for name, p in sorted(state.cri_params.items()):
        entries[f"param.{name}"] = p.data
    for group, params, opt in (("gen", state.gen_params, state.opt_gen),
                               ("cri", state.cri_params, state.opt_cri)):
        for name, p in sorted(params.items()):
            entries[f"opt.{group}.{name}"] = opt.accumulator(name, p.data)
    for name, bn in sorted(state.imaginer.bn_states().items()):
        entries[f"bn.{name}.mean"] = bn.running_mean
        entries[f"bn.{name}.var"] = bn.running_var
    return entries


def save_state(state, path):
    return ckpt.save_checkpoint(
        path, state.iteration, ckpt.pack_rng_state(state.rng),
        state_entries(state))


def load_state(path):
    """Rebuild a TrainState exactly as saved."""
    iteration, rng_blob, entries = ckpt.load_checkpoint(path)
    config = config_from_entries(entries)
    state = init_state(config)
    state.iteration = int(iteration)
    state.rng = ckpt.unpack_rng_state(rng_blob)
    for store in (state.gen_params, state.cri_params):
        for name, p in store.items():
            key = f"param.{name}"
            if key not in entries:
                raise FormatError(f"checkpoint missing entry {key!r}")
            if entries[key].shape != p.data.shape:
                raise FormatError(
                    f"checkpoint entry {key!r} has shape {entries[key].shape}, "
                    f"model expects {p.data.shape}")
            p.data[...] = entries[key]
    for group, params, opt in (("gen", state.gen_params, state.opt_gen),
                               ("cri", state.cri_params, state.opt_cri)):
        for name, p in params.items():
            key = f"opt.{group}.{name}"
            if key not in entries:
                raise FormatError(f"checkpoint missing entry {key!r}")
            opt.acc[name] = entries[key].copy()
    for name, bn in state.imaginer.bn_states().items():
        for part, target in (("mean", bn.running_mean), ("var", bn.running_var)):
            key = f"bn.{name}.{part}"
            if key not in entries:
                raise FormatError(f"checkpoint missing entry {key!r}")
            target[...] = entries[key]
    return state


# --- the loop ---------------------------------------------------------

def write_artifacts(state, dataset, out_dir, grid_clips=4):
    """Checkpoint, metrics CSV, and a sample-grid image for one moment."""
    os.makedirs(out_dir, exist_ok=True)
    save_state(state, os.path.join(out_dir, f"ckpt_{state.iteration}.vimc"))
    with open(os.path.join(out_dir, "metrics.csv"), "w", encoding="utf-8") as fh:
        fh.write(metrics_csv(state.records))
    image = dataset.clip(0)[0]
    clips = state.imaginer.sample_clips(
        image, m=grid_clips, seed=state.config.seed + state.iteration)
    grid = media.sample_grid(clips)
    media.save_png(
        os.path.join(out_dir, f"samples_{state.iteration}.png"), grid)


def train(config, out_dir=None, state=None, dataset=None):
    """Run (or continue) training until config.total_iterations.

    Args:
      config: TrainConfig; ignored for model shape when `state` is given.
      out_dir: if set, receives ckpt_<iter>.vimc, metrics.csv, and
        samples_<iter>.png every checkpoint_interval and at completion.
      state: optional TrainState to continue (e.g. from load_state).
      dataset: optional dataset override, mainly for tests.

    Returns:
      (final TrainState, list of MetricsRecord from this call).
    """
    if state is None:
        state = init_state(config)
    else:
        config = state.config
    if dataset is None:
        dataset = config.make_dataset()
    new_records = []
    while state.iteration < config.total_iterations:
        started = time.perf_counter()
        loss_c = 0.0
        for _ in range(config.n_critic):
            loss_c = critic_step(state, draw_batch(state, dataset))
        loss_g = generator_step(state, draw_batch(state, dataset))
        state.iteration += 1
        record = MetricsRecord(
            iteration=state.iteration,
            loss_c=loss_c,
            loss_g=loss_g,
            em_estimate=-loss_c,
            wall_s=time.perf_counter() - started,
        )
        state.records.append(record)
        new_records.append(record)
        at_interval = state.iteration % config.checkpoint_interval == 0
        if out_dir and (at_interval or state.iteration == config.total_iterations):
            write_artifacts(state, dataset, out_dir)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "metrics.csv"), "w", encoding="utf-8") as fh:
            fh.write(metrics_csv(state.records))
    return state, new_records
