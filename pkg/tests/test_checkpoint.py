"""Binary checkpoint format: bit-exact round trips and the error
taxonomy for damaged files."""

import numpy as np
import numpy.testing as npt
import pytest

from vimagine import checkpoint as cp
from vimagine.errors import ConfigurationError, FormatError


def fresh_rng(seed=42):
    return np.random.Generator(np.random.PCG64(seed))


def sample_entries():
    rng = np.random.default_rng(0)
    return {
        "weights.a": rng.standard_normal((3, 4)).astype(np.float32),
        "weights.b": rng.standard_normal(7).astype(np.float32),
        "scalar": np.float32(2.5).reshape(()),
        "empty_axis": np.zeros((2, 0, 3), dtype=np.float32),
    }


def test_rng_state_round_trip_continues_the_stream():
    rng = fresh_rng()
    rng.standard_normal(17)  # advance away from the seed state
    blob = cp.pack_rng_state(rng)
    assert len(blob) == 41
    twin = cp.unpack_rng_state(blob)
    npt.assert_array_equal(rng.standard_normal(32), twin.standard_normal(32))
    npt.assert_array_equal(rng.integers(0, 1000, 16), twin.integers(0, 1000, 16))


def test_rng_state_preserves_buffered_uint32():
    rng = fresh_rng(7)
    rng.integers(0, 2**16)  # leaves half a draw buffered
    twin = cp.unpack_rng_state(cp.pack_rng_state(rng))
    npt.assert_array_equal(rng.integers(0, 2**16, 8), twin.integers(0, 2**16, 8))


def test_rng_pack_rejects_non_pcg64():
    rng = np.random.Generator(np.random.MT19937(0))
    with pytest.raises(ConfigurationError):
        cp.pack_rng_state(rng)
    with pytest.raises(FormatError):
        cp.unpack_rng_state(b"\0" * 40)


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    path = tmp_path / "state.vimc"
    entries = sample_entries()
    rng = fresh_rng()
    rng.standard_normal(5)
    n = cp.save_checkpoint(str(path), 123, cp.pack_rng_state(rng), entries)
    assert n == path.stat().st_size

    iteration, blob, loaded = cp.load_checkpoint(str(path))
    assert iteration == 123
    assert list(loaded.keys()) == list(entries.keys())
    for name, arr in entries.items():
        assert loaded[name].dtype == np.float32
        assert loaded[name].shape == arr.shape
        npt.assert_array_equal(loaded[name], arr)
    twin = cp.unpack_rng_state(blob)
    npt.assert_array_equal(rng.standard_normal(8), twin.standard_normal(8))

    # a second save of the loaded state reproduces the file bytes
    again = tmp_path / "again.vimc"
    cp.save_checkpoint(str(again), iteration, blob, loaded)
    assert again.read_bytes() == path.read_bytes()


def test_save_rejects_non_float32_entries(tmp_path):
    path = str(tmp_path / "bad.vimc")
    blob = cp.pack_rng_state(fresh_rng())
    with pytest.raises(ConfigurationError):
        cp.save_checkpoint(path, 0, blob, {"x": np.zeros(3, dtype=np.float64)})
    with pytest.raises(ConfigurationError):
        cp.save_checkpoint(path, -1, blob, {"x": np.zeros(3, dtype=np.float32)})


def test_load_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad_magic.vimc"
    good = tmp_path / "good.vimc"
    cp.save_checkpoint(str(good), 1, cp.pack_rng_state(fresh_rng()), sample_entries())
    raw = bytearray(good.read_bytes())
    raw[:4] = b"JUNK"
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match=r"expected b'VIMC'"):
        cp.load_checkpoint(str(path))


def test_load_rejects_unsupported_version(tmp_path):
    good = tmp_path / "good.vimc"
    cp.save_checkpoint(str(good), 1, cp.pack_rng_state(fresh_rng()), sample_entries())
    raw = bytearray(good.read_bytes())
    raw[4:6] = (99).to_bytes(2, "little")
    bad = tmp_path / "v99.vimc"
    bad.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="version 99"):
        cp.load_checkpoint(str(bad))


def test_load_rejects_truncation_everywhere(tmp_path):
    good = tmp_path / "good.vimc"
    cp.save_checkpoint(str(good), 1, cp.pack_rng_state(fresh_rng()), sample_entries())
    raw = good.read_bytes()
    # cut at a spread of byte counts: header, rng blob, entry table
    for cut in (0, 3, 5, 10, 17, 25, 60, len(raw) // 2, len(raw) - 1):
        clipped = tmp_path / f"cut_{cut}.vimc"
        clipped.write_bytes(raw[:cut])
        with pytest.raises(FormatError):
            cp.load_checkpoint(str(clipped))


def test_load_rejects_trailing_bytes(tmp_path):
    good = tmp_path / "good.vimc"
    cp.save_checkpoint(str(good), 1, cp.pack_rng_state(fresh_rng()), sample_entries())
    padded = tmp_path / "padded.vimc"
    padded.write_bytes(good.read_bytes() + b"\0\0\0")
    with pytest.raises(FormatError, match="trailing"):
        cp.load_checkpoint(str(padded))


def test_load_rejects_duplicate_names(tmp_path):
    # two entries with the same name, assembled via the writer by
    # saving then splicing the second entry table over the first
    a = tmp_path / "a.vimc"
    entries = {"dup": np.ones(2, dtype=np.float32)}
    cp.save_checkpoint(str(a), 0, cp.pack_rng_state(fresh_rng()), entries)
    raw = bytearray(a.read_bytes())
    # entry count lives right after magic+version+iteration+rng block
    count_at = 4 + 2 + 8 + 4 + 41
    count = int.from_bytes(raw[count_at : count_at + 4], "little")
    assert count == 1
    entry_blob = bytes(raw[count_at + 4 :])
    raw[count_at : count_at + 4] = (2).to_bytes(4, "little")
    dup = tmp_path / "dup.vimc"
    dup.write_bytes(bytes(raw) + entry_blob)
    with pytest.raises(FormatError, match="duplicate"):
        cp.load_checkpoint(str(dup))


def test_iteration_survives_large_values(tmp_path):
    path = str(tmp_path / "big.vimc")
    cp.save_checkpoint(path, 2**40, cp.pack_rng_state(fresh_rng()), {})
    iteration, _, entries = cp.load_checkpoint(path)
    assert iteration == 2**40
    assert entries == {}
