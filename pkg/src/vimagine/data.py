"""Synthetic video clip datasets and MNIST sprite ingestion.

Two families of five-frame clips, both generated on the fly: pairs of
MNIST digits drifting with constant speed and bouncing off the frame
walls (grayscale), and single antialiased geometric shapes translating
with constant velocity (RGB).  Every clip is a pure function of
(config, seed, index), so datasets need no storage, order of access
does not matter, and generation parallelizes trivially.

Frames are [H,W,C] float32 in [0,1]; clips are [F,H,W,C] with F=5.
"""

import colorsys
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, FormatError

CLIP_FRAMES = 5
SPRITE_SIDE = 28

MNIST_TRAIN_CLIPS = 64000
MNIST_TEST_CLIPS = 320
SHAPES_TRAIN_CLIPS = 20000
SHAPES_TEST_CLIPS = 500

_IDX_IMAGE_MAGIC = 0x00000803


def load_idx(path):
    """Read an IDX unsigned-byte image tensor into [N,28,28] in [0,1]."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated IDX header, {len(raw)} bytes at byte 0")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != _IDX_IMAGE_MAGIC:
        raise FormatError(
            f"{path}: bad IDX magic 0x{magic:08x} at byte 0, "
            f"expected 0x{_IDX_IMAGE_MAGIC:08x}"
        )
    if len(raw) < 16:
        raise FormatError(f"{path}: truncated IDX dimensions, {len(raw)} bytes at byte 4")
    count, rows, cols = struct.unpack(">III", raw[4:16])
    expected = count * rows * cols
    payload = raw[16:]
    if len(payload) != expected:
        raise FormatError(
            f"{path}: expected {expected} pixel bytes after byte 16, got {len(payload)}"
        )
    data = np.frombuffer(payload, dtype=np.uint8).reshape(count, rows, cols)
    return data.astype(np.float32) / 255.0


_GLYPHS = {
    0: ("01110", "10001", "10011", "10101", "11001", "10001", "01110"),
    1: ("00100", "01100", "00100", "00100", "00100", "00100", "01110"),
    2: ("01110", "10001", "00001", "00010", "00100", "01000", "11111"),
    3: ("11111", "00010", "00100", "00010", "00001", "10001", "01110"),
    4: ("00010", "00110", "01010", "10010", "11111", "00010", "00010"),
    5: ("11111", "10000", "11110", "00001", "00001", "10001", "01110"),
    6: ("00110", "01000", "10000", "11110", "10001", "10001", "01110"),
    7: ("11111", "00001", "00010", "00100", "01000", "01000", "01000"),
    8: ("01110", "10001", "10001", "01110", "10001", "10001", "01110"),
    9: ("01110", "10001", "10001", "01111", "00001", "00010", "01100"),
}


def glyph_sprites():
    """Ten procedurally rendered digit sprites, 28x28 in [0,1].

    Stand-in when no IDX file is supplied, keeping tests and demos
    hermetic.  Each 5x7 bitmap is scaled by 4 and centered.
    """
    out = np.zeros((10, SPRITE_SIDE, SPRITE_SIDE), dtype=np.float32)
    for digit, rows in _GLYPHS.items():
        bitmap = np.array([[c == "1" for c in row] for row in rows], dtype=np.float32)
        scaled = np.kron(bitmap, np.ones((4, 4), dtype=np.float32))  # 28x20
        x0 = (SPRITE_SIDE - scaled.shape[1]) // 2
        out[digit, :, x0 : x0 + scaled.shape[1]] = scaled
    return out


@dataclass(frozen=True)
class MovingMnistConfig:
    size: int = 64
    n_digits: int = 2
    speed: float = 2.0  # pixels per frame, same magnitude for every digit
    bounce: bool = True

    def __post_init__(self):
        if self.size < SPRITE_SIDE:
            raise ConfigurationError(
                f"frame size {self.size} cannot hold {SPRITE_SIDE}px sprites"
            )
        if self.n_digits < 1:
            raise ConfigurationError("need at least one digit per clip")
        if self.speed < 0:
            raise ConfigurationError(f"speed must be >= 0, got {self.speed}")


def render_mnist_clip(sprites, starts, velocities, cfg, n_frames=CLIP_FRAMES):
    """Deterministic kinematics kernel: sprites pasted at integer
    positions, advanced by float velocities, reflected at the walls.

    sprites: [D,28,28]; starts, velocities: [D,2] as (x, y) with x the
    column of the sprite's top-left corner.  Returns [F,H,W,1].
    """
    sprites = np.asarray(sprites, dtype=np.float32)
    pos = np.array(starts, dtype=np.float64)
    vel = np.array(velocities, dtype=np.float64)
    limit = cfg.size - SPRITE_SIDE
    if (pos < 0).any() or (pos > limit).any():
        raise ConfigurationError(f"start positions must lie in [0, {limit}]")
    frames = np.zeros((n_frames, cfg.size, cfg.size, 1), dtype=np.float32)
    for f in range(n_frames):
        for d in range(sprites.shape[0]):
            x, y = int(round(pos[d, 0])), int(round(pos[d, 1]))
            region = frames[f, y : y + SPRITE_SIDE, x : x + SPRITE_SIDE, 0]
            np.maximum(region, sprites[d], out=region)
        pos += vel
        for axis in range(2):
            for d in range(pos.shape[0]):
                if not cfg.bounce:
                    pos[d, axis] = min(max(pos[d, axis], 0.0), float(limit))
                    continue
                while pos[d, axis] < 0 or pos[d, axis] > limit:
                    if pos[d, axis] < 0:
                        pos[d, axis] = -pos[d, axis]
                    else:
                        pos[d, axis] = 2.0 * limit - pos[d, axis]
                    vel[d, axis] = -vel[d, axis]
    return frames


class MovingMnistDataset:
    """n five-frame clips of drifting digit pairs, [F,H,W,1] each."""

    def __init__(self, cfg, sprites, seed, n):
        if sprites.ndim != 3 or sprites.shape[1:] != (SPRITE_SIDE, SPRITE_SIDE):
            raise ConfigurationError(
                f"sprites must be [N,{SPRITE_SIDE},{SPRITE_SIDE}], got {sprites.shape}"
            )
        if sprites.shape[0] < 2:
            raise ConfigurationError("need at least 2 sprites")
        self.cfg = cfg
        self.sprites = np.clip(sprites.astype(np.float32), 0.0, 1.0)
        self.seed = int(seed)
        self.n = int(n)

    def __len__(self):
        return self.n

    @property
    def frame_shape(self):
        return (self.cfg.size, self.cfg.size, 1)

    def clip(self, index):
        if not 0 <= index < self.n:
            raise ConfigurationError(f"clip index {index} outside [0, {self.n})")
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, int(index)]))
        cfg = self.cfg
        which = rng.choice(self.sprites.shape[0], size=cfg.n_digits, replace=False)
        limit = cfg.size - SPRITE_SIDE
        starts = rng.uniform(0.0, limit, size=(cfg.n_digits, 2))
        angles = rng.uniform(0.0, 2.0 * np.pi, size=cfg.n_digits)
        vel = cfg.speed * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        return render_mnist_clip(self.sprites[which], starts, vel, cfg)


@dataclass(frozen=True)
class ShapesConfig:
    size: int = 64
    kinds: tuple = ("circle", "square", "triangle")
    axes: tuple = ("horizontal", "vertical", "diagonal")
    speed_min: float = 0.0
    speed_max: float = 5.0
    half_min: float = 6.0
    half_max: float = 12.0
    supersample: int = 4

    def __post_init__(self):
        if not 0 <= self.speed_min <= self.speed_max:
            raise ConfigurationError(
                f"need 0 <= speed_min <= speed_max, got "
                f"[{self.speed_min}, {self.speed_max}]"
            )
        if not 0 < self.half_min <= self.half_max:
            raise ConfigurationError("shape half-size range must be positive")
        bad = set(self.kinds) - {"circle", "square", "triangle"}
        if bad:
            raise ConfigurationError(f"unknown shape kinds: {sorted(bad)}")
        bad = set(self.axes) - {"horizontal", "vertical", "diagonal"}
        if bad:
            raise ConfigurationError(f"unknown motion axes: {sorted(bad)}")
        # worst-case trajectory must fit: clips translate with constant
        # velocity and never bounce, so the start interval per axis is
        # the frame minus the shape minus the total displacement
        room = (self.size - 1) - 2.0 * self.half_max
        travel = (CLIP_FRAMES - 1) * self.speed_max
        if room - travel < 0:
            raise ConfigurationError(
                f"{self.size}px frame cannot hold a {self.half_max}px-half shape "
                f"moving {self.speed_max}px/frame for {CLIP_FRAMES} frames"
            )


def _coverage(kind, cx, cy, half, size, ss):
    """Fraction of each pixel covered by the shape, supersampled ss x ss."""
    step = 1.0 / ss
    offsets = (np.arange(ss) + 0.5) * step - 0.5
    base = np.arange(size, dtype=np.float64)
    ys = (base[:, None] + offsets[None, :]).reshape(-1)  # size*ss subrow coords
    xs = ys.copy()
    yy = ys[:, None] - cy
    xx = xs[None, :] - cx
    if kind == "circle":
        inside = (xx * xx + yy * yy) <= half * half
    elif kind == "square":
        inside = (np.abs(xx) <= half) & (np.abs(yy) <= half)
    elif kind == "triangle":
        # equilateral, apex up, circumradius = half; vertices ordered so
        # the interior is on the non-negative side of every edge in
        # y-down pixel coordinates
        ax, ay = 0.0, -half
        bx, by = half * np.sqrt(3.0) / 2.0, half * 0.5
        cx2, cy2 = -half * np.sqrt(3.0) / 2.0, half * 0.5
        def side(px, py, qx, qy):
            return (qx - px) * (yy - py) - (qy - py) * (xx - px)
        inside = (
            (side(ax, ay, bx, by) >= 0)
            & (side(bx, by, cx2, cy2) >= 0)
            & (side(cx2, cy2, ax, ay) >= 0)
        )
    else:
        raise ConfigurationError(f"unknown shape kind: {kind!r}")
    blocks = inside.astype(np.float64).reshape(size, ss, size, ss)
    return blocks.mean(axis=(1, 3))


def render_shape_clip(kind, start, velocity, half, color, cfg,
                      n_frames=CLIP_FRAMES):
    """One shape translating at constant velocity; [F,H,W,3] in [0,1].

    start is the (x, y) center at frame 0; velocity is (vx, vy) in
    pixels per frame.  Rendering is supersampled, so fractional centers
    land smoothly between pixels.
    """
    color = np.asarray(color, dtype=np.float32)
    frames = np.empty((n_frames, cfg.size, cfg.size, 3), dtype=np.float32)
    for f in range(n_frames):
        cx = start[0] + velocity[0] * f
        cy = start[1] + velocity[1] * f
        cov = _coverage(kind, cx, cy, half, cfg.size, cfg.supersample)
        frames[f] = cov[..., None].astype(np.float32) * color[None, None, :]
    return np.clip(frames, 0.0, 1.0)


class ShapesDataset:
    """n five-frame clips of one moving antialiased shape, [F,H,W,3]."""

    def __init__(self, cfg, seed, n):
        self.cfg = cfg
        self.seed = int(seed)
        self.n = int(n)

    def __len__(self):
        return self.n

    @property
    def frame_shape(self):
        return (self.cfg.size, self.cfg.size, 3)

    def clip(self, index):
        if not 0 <= index < self.n:
            raise ConfigurationError(f"clip index {index} outside [0, {self.n})")
        cfg = self.cfg
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, int(index)]))
        kind = cfg.kinds[rng.integers(len(cfg.kinds))]
        axis = cfg.axes[rng.integers(len(cfg.axes))]
        speed = rng.uniform(cfg.speed_min, cfg.speed_max)
        half = rng.uniform(cfg.half_min, cfg.half_max)
        signs = rng.choice([-1.0, 1.0], size=2)
        if axis == "horizontal":
            vel = (signs[0] * speed, 0.0)
        elif axis == "vertical":
            vel = (0.0, signs[0] * speed)
        else:
            # per-axis speed, so a diagonal mover covers `speed` pixels
            # along each axis every frame
            vel = (signs[0] * speed, signs[1] * speed)
        travel = CLIP_FRAMES - 1
        start = []
        for v in vel:
            lo = half + max(0.0, -v * travel)
            hi = (cfg.size - 1) - half - max(0.0, v * travel)
            start.append(rng.uniform(lo, hi))
        hue = rng.uniform(0.0, 1.0)
        color = colorsys.hsv_to_rgb(hue, 1.0, 1.0)
        return render_shape_clip(kind, start, vel, half, color, cfg)


def batch_iter(dataset, batch_size, seed):
    """Seed-shuffled pass over the dataset in [B,F,H,W,C] batches.

    Each index appears exactly once; the final batch may be short.
    """
    if batch_size < 1:
        raise ConfigurationError(f"batch_size must be >= 1, got {batch_size}")
    order = np.random.default_rng(
        np.random.SeedSequence([int(seed), 0xB172])
    ).permutation(len(dataset))
    for lo in range(0, len(order), batch_size):
        chunk = order[lo : lo + batch_size]
        yield np.stack([dataset.clip(int(i)) for i in chunk])
