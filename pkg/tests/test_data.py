import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cnlqnn.data import (
    DataFormatError,
    RawImage,
    downsample,
    downsample_array,
    idx_arrays,
    load_cifar_pool,
    load_idx_pool,
    make_split,
    parse_cifar10,
    parse_idx,
    read_bytes,
    synthetic_dataset,
    to_grayscale,
    write_idx,
)


def test_idx_images_example():
    buf = struct.pack(">IIII", 0x803, 2, 28, 28) + bytes(range(256)) * 6 + bytes(32)
    images = parse_idx(buf)
    assert len(images) == 2
    assert (images[0].width, images[0].height, images[0].channels) == (28, 28, 1)
    assert images[0].pixels[0, 0, 5] == 5


def test_idx_labels_example():
    assert parse_idx(struct.pack(">II", 0x801, 3) + bytes([7, 2, 1])) == [7, 2, 1]


def test_idx_truncated_names_lengths():
    buf = struct.pack(">II", 0x801, 5) + bytes([1, 2])
    with pytest.raises(DataFormatError, match=r"expected 13 bytes, got 10"):
        parse_idx(buf)


def test_idx_bad_magic_and_short_header():
    with pytest.raises(DataFormatError, match="magic"):
        parse_idx(struct.pack(">II", 0x802, 0))
    with pytest.raises(DataFormatError, match="offset"):
        parse_idx(b"\x00\x00\x08")
    with pytest.raises(DataFormatError):
        parse_idx(struct.pack(">II", 0x803, 1))


@settings(max_examples=30, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(0, 4), st.integers(1, 6), st.integers(1, 6))))
def test_idx_round_trip_images(images):
    assert np.array_equal(idx_arrays(write_idx(images)).reshape(images.shape), images)


@settings(max_examples=30, deadline=None)
@given(arrays(np.uint8, st.integers(0, 50)))
def test_idx_round_trip_labels(labels):
    assert parse_idx(write_idx(labels)) == labels.tolist()


def test_cifar_records():
    rec = bytes([9]) + bytes(3072)
    out = parse_cifar10(rec + bytes([3]) + bytes(range(256)) * 12)
    assert len(out) == 2
    assert out[0][0] == 9 and out[1][0] == 3
    assert out[0][1].channels == 3 and not out[0][1].pixels.any()
    with pytest.raises(DataFormatError):
        parse_cifar10(rec[:-1])


def test_rawimage_length_invariant():
    with pytest.raises(ValueError):
        RawImage(2, 2, 1, np.zeros(5, dtype=np.uint8))


@pytest.mark.parametrize("rgb,expected", [((255, 255, 255), 255), ((255, 0, 0), 76), ((0, 0, 0), 0)])
def test_grayscale(rgb, expected):
    img = RawImage(1, 1, 3, np.array(rgb, dtype=np.uint8))
    assert to_grayscale(img).pixels[0, 0, 0] == expected


def test_grayscale_needs_color():
    with pytest.raises(ValueError):
        to_grayscale(RawImage(1, 1, 1, np.zeros(1, dtype=np.uint8)))


@pytest.mark.parametrize("grid", [2, 3, 4])
def test_downsample_constant(grid):
    img = RawImage(28, 28, 1, np.full(784, 255, dtype=np.uint8))
    np.testing.assert_array_equal(downsample(img, grid), np.ones(grid * grid))


def test_downsample_half_split():
    px = np.zeros((4, 4), dtype=np.uint8)
    px[:, 2:] = 255
    np.testing.assert_array_equal(downsample(RawImage(4, 4, 1, px), 2), [0, 1, 0, 1])


def test_downsample_crop_drops_trailing_row_and_column():
    px = np.zeros((28, 28), dtype=np.uint8)
    px[27, :] = 255
    px[:, 27] = 255
    np.testing.assert_array_equal(downsample(RawImage(28, 28, 1, px), 3), np.zeros(9))
    px = np.zeros((28, 28), dtype=np.uint8)
    px[0, :] = 255
    assert downsample(RawImage(28, 28, 1, px), 3)[:3].min() > 0


def test_downsample_too_small():
    with pytest.raises(ValueError):
        downsample(RawImage(2, 2, 1, np.zeros(4, dtype=np.uint8)), 3)


@settings(max_examples=40, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 3), st.just(9), st.just(9))), st.sampled_from([2, 3, 4]))
def test_downsample_range(images, grid):
    out = downsample_array(images, grid)
    assert out.min() >= 0 and out.max() <= 1
    assert np.all(out.mean(axis=1) <= images.reshape(len(images), -1).max(axis=1) / 255 + 1e-12)


def _pool(n_per_class=30, classes=(0, 1, 2)):
    rng = np.random.default_rng(0)
    labels = np.repeat(classes, n_per_class)
    images = rng.integers(0, 256, size=(len(labels), 8, 8), dtype=np.uint8)
    return images, labels


def test_make_split_labels_and_sizes():
    images, labels = _pool()
    split = make_split(images, labels, (0, 1), 40, 15, 2, np.random.default_rng(1))
    assert split.x_train.shape == (40, 4) and split.x_test.shape == (15, 4)
    assert set(split.src_train) | set(split.src_test) <= {0, 1}
    for src, y in ((split.src_train, split.y_train), (split.src_test, split.y_test)):
        np.testing.assert_array_equal(np.where(src == 1, 1.0, -1.0), y)
        assert len(set(y)) == 2
    for s in split.train:
        assert s.label in (-1, 1) and s.features.min() >= 0 and s.features.max() <= 1


def test_make_split_mapping_before_shuffle():
    labels = np.array([0, 1, 0, 1])
    x = np.linspace(0, 1, 16).reshape(4, 4)
    split = make_split(x, labels, (0, 1), 4, 0, 2, np.random.default_rng(0))
    order = [int(np.flatnonzero((x == row).all(axis=1))[0]) for row in split.x_train]
    np.testing.assert_array_equal(split.y_train, np.array([-1.0, 1.0, -1.0, 1.0])[order])


def test_make_split_is_deterministic():
    images, labels = _pool()
    a = make_split(images, labels, (0, 2), 30, 10, 3, np.random.default_rng(5))
    b = make_split(images, labels, (0, 2), 30, 10, 3, np.random.default_rng(5))
    assert np.array_equal(a.x_train, b.x_train) and np.array_equal(a.y_test, b.y_test)


def test_make_split_insufficient_names_class():
    images, labels = _pool(n_per_class=5)
    labels[:4] = 2  # class 0 keeps a single example
    with pytest.raises(ValueError, match="class 0"):
        make_split(images, labels, (0, 1), 20, 5, 2, np.random.default_rng(0))


def test_synthetic_construction():
    split = synthetic_dataset(3, 200, 50, np.random.default_rng(0))
    assert split.x_train.shape == (200, 9) and len(split.y_test) == 50
    for x, y in zip(split.x_train, split.y_train):
        top, bottom = x[:3].mean(), x[6:].mean()
        assert (top > bottom) == (y > 0)
    assert split.x_train.min() >= 0 and split.x_train.max() <= 1


def test_loaders_read_standard_layout(tmp_path):
    images, labels = _pool(n_per_class=4)
    (tmp_path / "train-images-idx3-ubyte.gz").write_bytes(gzip.compress(write_idx(images)))
    (tmp_path / "train-labels-idx1-ubyte").write_bytes(write_idx(labels))
    got_x, got_y = load_idx_pool(tmp_path)
    assert np.array_equal(got_x, images) and np.array_equal(got_y, labels)
    assert read_bytes(tmp_path / "train-images-idx3-ubyte.gz") == write_idx(images)

    cifar = tmp_path / "cifar"
    cifar.mkdir()
    (cifar / "data_batch_1.bin").write_bytes(bytes([4]) + bytes([255]) * 1024 + bytes(2048))
    x, y = load_cifar_pool(cifar)
    assert x.shape == (1, 32, 32) and y.tolist() == [4] and x[0, 0, 0] == 76
    with pytest.raises(FileNotFoundError):
        load_cifar_pool(tmp_path)
