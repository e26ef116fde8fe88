import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ect import imageio
from ect.config import CAUSES, TASKS, AugmentConfig
from ect.data import Sample, augment, batches, list_ids, load_sample, load_split, transform, union_of_causes
from ect.toy import write_toy_dataset


@pytest.fixture(scope="module")
def toy_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    write_toy_dataset(root, count=3)
    return root


def test_load_sample_layout_and_union(toy_root):
    s = load_sample(toy_root, "train", "scene00")
    assert s.image.dtype == np.float32 and s.image.shape == (64, 64, 3)
    assert 0 <= s.image.min() and s.image.max() <= 1
    assert set(s.gt) == set(TASKS)
    assert all(set(np.unique(m)) <= {0, 1} for m in s.gt.values())
    assert np.array_equal(s.gt["e"], union_of_causes(s.gt))


def test_loading_is_idempotent(toy_root):
    a, b = load_sample(toy_root, "train", "scene01"), load_sample(toy_root, "train", "scene01")
    assert np.array_equal(a.image, b.image)
    assert all(np.array_equal(a.gt[k], b.gt[k]) for k in TASKS)
    assert [s.id for s in load_split(toy_root, "train")] == list_ids(toy_root, "train") == ["scene00", "scene01", "scene02"]


def test_missing_cause_file_names_the_path(tmp_path):
    write_toy_dataset(tmp_path, count=1)
    victim = tmp_path / "gt" / "normal" / "train" / "scene00.png"
    victim.unlink()
    with pytest.raises(imageio.DataError, match="normal"):
        load_sample(tmp_path, "train", "scene00")


def test_corrupt_png_reports_path(tmp_path):
    write_toy_dataset(tmp_path, count=1)
    bad = tmp_path / "images" / "train" / "scene00.png"
    bad.write_bytes(b"not a png")
    with pytest.raises(imageio.DataError, match="scene00.png"):
        load_sample(tmp_path, "train", "scene00")


def test_explicit_generic_map_overrides_union(tmp_path):
    write_toy_dataset(tmp_path, count=1)
    generic = np.zeros((64, 64), np.uint8)
    generic[10, :] = 1
    imageio.write_binary(tmp_path / "gt" / "generic" / "train" / "scene00.png", generic)
    assert np.array_equal(load_sample(tmp_path, "train", "scene00").gt["e"], generic)


def test_empty_cause_maps_warn(tmp_path, caplog):
    write_toy_dataset(tmp_path, count=1)
    for c in ("reflectance", "illumination", "normal", "depth"):
        imageio.write_binary(tmp_path / "gt" / c / "train" / "scene00.png", np.zeros((64, 64), np.uint8))
    with caplog.at_level(logging.WARNING):
        s = load_sample(tmp_path, "train", "scene00")
    assert not s.gt["e"].any()
    assert "degenerate" in caplog.text


def _sample(seed, h=12, w=10):
    r = np.random.default_rng(seed)
    gt = {c: (r.random((h, w)) < 0.2).astype(np.uint8) for c in CAUSES}
    gt["e"] = union_of_causes(gt)
    return Sample(r.random((h, w, 3)).astype(np.float32), gt, "x")


def test_flip_twice_and_identity():
    s = _sample(0)
    twice = transform(transform(s, flip=True), flip=True)
    assert np.array_equal(twice.image, s.image)
    same = transform(s)
    assert np.array_equal(same.image, s.image)
    assert all(np.array_equal(same.gt[k], s.gt[k]) for k in TASKS)


@given(st.integers(0, 2**31 - 1))
def test_union_survives_augmentation_chain(seed):
    s = _sample(seed % 1000, 16, 16)
    rng = np.random.default_rng(seed)
    out = augment(s, AugmentConfig(scales=(1.0, 1.5), crop=(12, 12)), rng)
    out = augment(out, AugmentConfig(crop=(6, 6)), rng)
    assert np.array_equal(out.gt["e"], union_of_causes(out.gt))
    assert all(set(np.unique(m)) <= {0, 1} for m in out.gt.values())
    assert out.image.shape == (6, 6, 3)


def test_augment_is_deterministic_given_rng():
    s = _sample(3, 16, 16)
    cfg = AugmentConfig(crop=(8, 8))
    a = augment(s, cfg, np.random.default_rng(7))
    b = augment(s, cfg, np.random.default_rng(7))
    assert np.array_equal(a.image, b.image)


def test_crop_larger_than_image_fails():
    with pytest.raises(ValueError):
        transform(_sample(0), scale=0.5, crop=(12, 10))


def test_default_augmentation_skips_scales_below_the_crop():
    s = _sample(1, 16, 16)
    cfg = AugmentConfig(crop=(16, 16))  # scale 0.5 cannot hold the crop
    rng = np.random.default_rng(0)
    assert all(augment(s, cfg, rng).image.shape == (16, 16, 3) for _ in range(30))
    with pytest.raises(ValueError):
        augment(s, AugmentConfig(scales=(0.5,), crop=(16, 16)), rng)


def test_batch_sizes_and_order():
    data = list(range(10))
    assert [len(b) for b in batches(data, 4, shuffle_seed=1)] == [4, 4, 2]
    assert list(batches(data, 4, 1)) == list(batches(data, 4, 1))
    orders = {tuple(x for b in batches(data, 4, seed) for x in b) for seed in range(20)}
    assert len(orders) == 20
    assert sorted(x for b in batches(data, 3, 5) for x in b) == data


def test_batches_reject_bad_input():
    with pytest.raises(ValueError):
        next(batches([], 2))
    with pytest.raises(ValueError):
        next(batches([1], 0))
