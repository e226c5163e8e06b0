"""Image and animation encoding for sampled clips.

Frames travel through the package as float arrays in [0,1] shaped
[H,W,C] with C equal to 1 (grayscale) or 3 (RGB).  PNG files are the
lossless 8-bit record; animated GIFs exist for quick viewing.  All
encodes round to 8 bits, so decoding returns the original frame within
1/255 per channel (GIFs additionally assume the frame fits a 256-color
palette, which holds for grayscale and the flat-colored shapes data).
"""

import numpy as np
from PIL import Image

from .errors import ConfigurationError

GIF_FRAME_MS = 200


def to_uint8(frame):
    """Quantize a float frame in [0,1] to uint8 with round-to-nearest."""
    arr = np.asarray(frame, dtype=np.float64)
    return np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)


def from_uint8(arr):
    return arr.astype(np.float32) / np.float32(255.0)


def _check_frame(frame):
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[2] not in (1, 3):
        raise ConfigurationError(
            f"expected frame [H,W,1] or [H,W,3], got shape {frame.shape}")
    return frame


def _to_pil(frame):
    arr = to_uint8(_check_frame(frame))
    if arr.shape[2] == 1:
        return Image.fromarray(arr[:, :, 0], mode="L")
    return Image.fromarray(arr, mode="RGB")


def save_png(path, frame):
    _to_pil(frame).save(path, format="PNG")


def load_image(path):
    """Read an image file to float32 [H,W,C] in [0,1], C in {1,3}."""
    with Image.open(path) as img:
        if img.mode in ("L", "I;16", "I"):
            arr = np.asarray(img.convert("L"))[:, :, None]
        else:
            arr = np.asarray(img.convert("RGB"))
    return from_uint8(arr)


def save_gif(path, frames, frame_ms=GIF_FRAME_MS):
    """Write frames as an endlessly looping animated GIF.

    Every frame is quantized to one shared adaptive palette; loop=0
    encodes infinite repetition per the GIF89a application extension.
    """
    if len(frames) == 0:
        raise ConfigurationError("need at least one frame for a GIF")
    images = [_to_pil(f) for f in frames]
    images[0].save(
        path,
        format="GIF",
        save_all=True,
        append_images=images[1:],
        duration=frame_ms,
        loop=0,
        disposal=1,
    )


def load_gif(path):
    """Read an animated GIF back to float32 [F,H,W,C]."""
    frames = []
    with Image.open(path) as img:
        mode = "L" if img.mode in ("L", "P") and not _has_color(img) else "RGB"
        for i in range(getattr(img, "n_frames", 1)):
            img.seek(i)
            arr = np.asarray(img.convert(mode))
            if arr.ndim == 2:
                arr = arr[:, :, None]
            frames.append(from_uint8(arr))
    return np.stack(frames)


def _has_color(img):
    palette = img.getpalette()
    if palette is None:
        return False
    rgb = np.asarray(palette).reshape(-1, 3)
    return bool(np.any(rgb[:, 0] != rgb[:, 1]) or np.any(rgb[:, 1] != rgb[:, 2]))


def difference_image(frame, reference):
    """Signed difference mapped displayably: 0.5 + (frame - ref)/2.

    Mid-gray means unchanged; brighter means the frame gained intensity.
    """
    frame = _check_frame(frame)
    reference = _check_frame(reference)
    if frame.shape != reference.shape:
        raise ConfigurationError(
            f"difference needs matching shapes, got {frame.shape} vs "
            f"{reference.shape}")
    return np.clip(0.5 + (frame.astype(np.float64) - reference) / 2.0, 0.0, 1.0)


def sample_grid(clips, pad=2):
    """Tile clips into one image: one row per clip, one column per frame.

    Args:
      clips: [m, F, H, W, C] float array in [0,1].
      pad: pixel gap between tiles, filled with mid-gray.

    Returns:
      [m*H + gaps, F*W + gaps, C] float array.
    """
    clips = np.asarray(clips)
    if clips.ndim != 5:
        raise ConfigurationError(
            f"expected clips [m,F,H,W,C], got shape {clips.shape}")
    m, f, h, w, c = clips.shape
    grid = np.full(
        (m * h + pad * (m + 1), f * w + pad * (f + 1), c), 0.5, dtype=np.float64)
    for i in range(m):
        for j in range(f):
            top = pad + i * (h + pad)
            left = pad + j * (w + pad)
            grid[top:top + h, left:left + w] = clips[i, j]
    return grid
