"""Checkpoint binary format: bit-exact round-trips and integrity checks."""

import numpy as np
import pytest
import torch

from iceg.checkpoints import load_checkpoint, load_checkpoint_full, save_checkpoint
from iceg.errors import IntegrityError
from iceg.gaussians import GaussianSet


def random_set(n=500, seed=0):
    rng = np.random.default_rng(seed)
    return GaussianSet(
        positions=torch.tensor(rng.normal(0, 10, (n, 3)), dtype=torch.float32),
        log_scales=torch.tensor(rng.normal(-3, 1, (n, 3)), dtype=torch.float32),
        rotations=torch.tensor(rng.normal(0, 1, (n, 4)), dtype=torch.float32),
        opacity_logits=torch.tensor(rng.normal(0, 2, n), dtype=torch.float32),
        color_logits=torch.tensor(rng.normal(0, 3, (n, 3)), dtype=torch.float32),
    )


def assert_identical(a: GaussianSet, b: GaussianSet):
    for name, block in a.numpy_blocks().items():
        assert np.array_equal(block, b.numpy_blocks()[name]), name


def test_roundtrip_is_bit_exact(tmp_path):
    gs = random_set()
    path = save_checkpoint(tmp_path, gs, "base", 0)
    loaded, stage, iteration = load_checkpoint(path)
    assert (stage, iteration) == ("base", 0)
    assert_identical(gs, loaded)


def test_distinct_iterations_get_distinct_paths(tmp_path):
    gs = random_set()
    p1 = save_checkpoint(tmp_path, gs, "color", 500)
    p2 = save_checkpoint(tmp_path, gs, "color", 1000)
    assert p1 != p2
    assert load_checkpoint(p1)[2] == 500
    assert load_checkpoint(p2)[2] == 1000


def test_truncated_file_is_integrity_error(tmp_path):
    path = save_checkpoint(tmp_path, random_set(50), "base", 0)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) // 2])
    with pytest.raises(IntegrityError):
        load_checkpoint(path)


def test_corrupted_byte_fails_checksum(tmp_path):
    path = save_checkpoint(tmp_path, random_set(50), "base", 0)
    blob = bytearray(path.read_bytes())
    blob[len(blob) // 2] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(IntegrityError):
        load_checkpoint(path)


def test_wrong_magic_rejected(tmp_path):
    path = tmp_path / "bogus.ckpt"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(IntegrityError):
        load_checkpoint(path)


def test_missing_file_is_integrity_error(tmp_path):
    with pytest.raises(IntegrityError):
        load_checkpoint(tmp_path / "absent.ckpt")


def test_optimizer_state_blocks_roundtrip(tmp_path):
    gs = random_set(20)
    extras = {
        "step": np.array([123.0], dtype=np.float32),
        "m/color_logits": np.random.default_rng(1).normal(0, 1e-3, 60).astype(np.float32),
    }
    path = save_checkpoint(tmp_path, gs, "texture", 1500, extras)
    _, stage, iteration, loaded = load_checkpoint_full(path)
    assert (stage, iteration) == ("texture", 1500)
    for key, arr in extras.items():
        assert np.array_equal(loaded[key], arr)


def test_project_base_checkpoint_roundtrip(tmp_path, fixture_project):
    base = fixture_project.load_base_gaussians()
    reloaded = fixture_project.load_base_gaussians()
    assert_identical(base, reloaded)
