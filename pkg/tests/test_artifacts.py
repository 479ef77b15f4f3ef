import numpy as np
import pytest

from smogcast import artifacts
from smogcast.errors import ConfigError, CorruptFileError
from smogcast.pipeline import WindowPair


def _pairs(rng, n=5):
    return [
        WindowPair(rng.random((12, 3)), rng.random((4, 4)), start=i * 4, chunk_id=i % 2)
        for i in range(n)
    ]


def test_pair_archive_roundtrip(tmp_path, rng):
    pairs = _pairs(rng)
    path = tmp_path / "pairs.smgp"
    artifacts.save_pairs(path, pairs, meta={"config_hash": "cafe", "role": "train"})
    loaded, meta = artifacts.load_pairs(path)
    assert meta == {"config_hash": "cafe", "role": "train"}
    assert len(loaded) == len(pairs)
    for a, b in zip(pairs, loaded):
        np.testing.assert_array_equal(a.input, b.input)
        np.testing.assert_array_equal(a.target, b.target)
        assert (a.start, a.chunk_id) == (b.start, b.chunk_id)


def test_pair_archive_write_is_deterministic(tmp_path, rng):
    pairs = _pairs(rng)
    artifacts.save_pairs(tmp_path / "a.smgp", pairs, meta={"k": 1})
    artifacts.save_pairs(tmp_path / "b.smgp", pairs, meta={"k": 1})
    assert (tmp_path / "a.smgp").read_bytes() == (tmp_path / "b.smgp").read_bytes()


def test_pair_archive_corruption_detected(tmp_path, rng):
    path = tmp_path / "pairs.smgp"
    artifacts.save_pairs(path, _pairs(rng), meta={})
    raw = bytearray(path.read_bytes())
    raw[len(raw) // 2] ^= 0x01
    path.write_bytes(bytes(raw))
    with pytest.raises(CorruptFileError):
        artifacts.load_pairs(path)


def test_pair_archive_refuses_empty(tmp_path):
    with pytest.raises(ValueError):
        artifacts.save_pairs(tmp_path / "x.smgp", [], meta={})


def test_check_hash_guard():
    artifacts.check_hash("aa", "aa", "thing")
    artifacts.check_hash("aa", None, "thing")  # unstamped artifacts pass
    artifacts.check_hash("aa", "bb", "thing", force=True)
    with pytest.raises(ConfigError):
        artifacts.check_hash("aa", "bb", "thing")
