"""Image and GIF round trips through 8-bit storage."""

import numpy as np
import numpy.testing as npt
import pytest
from PIL import Image

from vimagine import media as mm
from vimagine.errors import ConfigurationError, DimensionError


def test_uint8_round_trip_error_bound():
    rng = np.random.default_rng(0)
    frame = rng.uniform(0, 1, (9, 9, 3)).astype(np.float32)
    back = mm.from_uint8(mm.to_uint8(frame))
    assert np.max(np.abs(back - frame)) <= 0.5 / 255.0 + 1e-7


def test_to_uint8_clips_out_of_range():
    frame = np.array([[[-0.5], [0.0]], [[1.0], [1.7]]], dtype=np.float32)
    out = mm.to_uint8(frame)
    npt.assert_array_equal(out[..., 0], [[0, 0], [255, 255]])


def test_png_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    for channels in (1, 3):
        frame = rng.uniform(0, 1, (12, 10, channels)).astype(np.float32)
        path = tmp_path / f"f{channels}.png"
        mm.save_png(str(path), frame)
        back = mm.load_image(str(path))
        assert back.shape == frame.shape
        assert np.max(np.abs(back - frame)) <= 1.0 / 255.0


def test_gif_round_trip_and_timing(tmp_path):
    rng = np.random.default_rng(2)
    frames = (rng.uniform(0, 1, (5, 16, 16, 3)) > 0.5).astype(np.float32)
    path = tmp_path / "clip.gif"
    mm.save_gif(str(path), frames)
    with Image.open(str(path)) as img:
        assert img.n_frames == 5
        assert img.info["duration"] == 200
        assert img.info["loop"] == 0
    back = mm.load_gif(str(path))
    assert back.shape == frames.shape
    # binary frames survive palette quantization exactly
    npt.assert_array_equal(back, frames)


def test_gif_grayscale_survives(tmp_path):
    ramp = np.linspace(0, 1, 64, dtype=np.float32).reshape(8, 8, 1)
    # distinct frames: identical neighbors would be merged on save
    frames = np.stack([np.roll(ramp, s, axis=0) for s in range(3)])
    path = tmp_path / "gray.gif"
    mm.save_gif(str(path), frames)
    back = mm.load_gif(str(path))
    assert back.shape == frames.shape
    assert np.max(np.abs(back - frames)) <= 1.0 / 255.0


def test_difference_image_midpoint_coding():
    ref = np.full((4, 4, 1), 0.5, dtype=np.float32)
    same = mm.difference_image(ref, ref)
    npt.assert_allclose(same, 0.5, atol=1e-7)
    brighter = mm.difference_image(np.full((4, 4, 1), 0.9, dtype=np.float32), ref)
    assert np.all(brighter > 0.5)
    darker = mm.difference_image(np.full((4, 4, 1), 0.1, dtype=np.float32), ref)
    assert np.all(darker < 0.5)
    # saturation clips instead of wrapping
    extreme = mm.difference_image(
        np.full((2, 2, 1), 5.0, dtype=np.float32),
        np.zeros((2, 2, 1), dtype=np.float32),
    )
    npt.assert_array_equal(extreme, np.ones((2, 2, 1), dtype=np.float32))


def test_sample_grid_layout():
    clips = np.zeros((3, 4, 8, 8, 1), dtype=np.float32)
    clips[1] = 1.0
    grid = mm.sample_grid(clips, pad=2)
    rows, cols = 3, 4
    assert grid.shape == (rows * 8 + (rows + 1) * 2, cols * 8 + (cols + 1) * 2, 1)
    # second row of tiles is white, first is black
    npt.assert_array_equal(grid[2:10, 2:10, 0], np.zeros((8, 8)))
    npt.assert_array_equal(grid[12:20, 2:10, 0], np.ones((8, 8)))
    # the gaps are mid-gray
    npt.assert_allclose(grid[0, :, 0], 0.5, atol=1e-7)


def test_frame_shape_validation(tmp_path):
    with pytest.raises(ConfigurationError):
        mm.save_png(str(tmp_path / "bad.png"), np.zeros((4, 4)))
    with pytest.raises(ConfigurationError):
        mm.save_png(str(tmp_path / "bad.png"), np.zeros((4, 4, 2)))
    with pytest.raises((ConfigurationError, DimensionError)):
        mm.save_gif(str(tmp_path / "bad.gif"), np.zeros((4, 4, 1)))
    with pytest.raises((ConfigurationError, DimensionError)):
        mm.sample_grid(np.zeros((2, 8, 8, 1)))
