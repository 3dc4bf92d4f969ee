"""Image ingestion: IDX (MNIST / FashionMNIST), CIFAR-10 binary, block
downsampling to qubit grids and binary class-pair splits."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 3073
CIFAR_SIDE = 32
LUMA = (0.299, 0.587, 0.114)

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}
CIFAR_FILES = ["data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin",
               "data_batch_4.bin", "data_batch_5.bin", "test_batch.bin"]


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True)
class RawImage:
    width: int
    height: int
    channels: int
    pixels: np.ndarray = field(repr=False)  # uint8, shape (channels, height, width)

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.uint8)
        if px.size != self.width * self.height * self.channels:
            raise ValueError(
                f"{px.size} pixels for a {self.width}x{self.height}x{self.channels} image"
            )
        object.__setattr__(self, "pixels", px.reshape(self.channels, self.height, self.width))


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    label: int
    source_class: int


@dataclass
class DatasetSplit:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    grid: int
    class_pair: Tuple[int, int]
    src_train: np.ndarray = None
    src_test: np.ndarray = None

    def __post_init__(self):
        d = self.grid**2
        for x in (self.x_train, self.x_test):
            if x.ndim != 2 or x.shape[1] != d:
                raise ValueError(f"features must have {d} columns for grid {self.grid}, got {x.shape}")

    @property
    def train(self) -> List[Sample]:
        return _samples(self.x_train, self.y_train, self.src_train)

    @property
    def test(self) -> List[Sample]:
        return _samples(self.x_test, self.y_test, self.src_test)


def _samples(x, y, src):
    src = src if src is not None else np.full(len(y), -1)
    return [Sample(x[i], int(y[i]), int(src[i])) for i in range(len(y))]


# --------------------------------------------------------------------------
# Parsers
# --------------------------------------------------------------------------


def parse_idx(buf: bytes) -> Union[List[RawImage], List[int]]:
    """Parse an uncompressed IDX image (``0x803``) or label (``0x801``) file."""
    if len(buf) < 8:
        raise DataFormatError(f"IDX header truncated at byte offset {len(buf)}")
    (magic,) = struct.unpack_from(">I", buf, 0)
    if magic == IDX_LABELS_MAGIC:
        ndim = 1
    elif magic == IDX_IMAGES_MAGIC:
        ndim = 3
    else:
        raise DataFormatError(f"bad IDX magic 0x{magic:08x} at byte offset 0")
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise DataFormatError(f"IDX dimension header truncated at byte offset {len(buf)}")
    dims = struct.unpack_from(">" + "I" * ndim, buf, 4)
    expected = header + int(np.prod(dims))
    if len(buf) != expected:
        raise DataFormatError(
            f"IDX payload length mismatch: expected {expected} bytes, got {len(buf)} "
            f"(payload starts at byte offset {header})"
        )
    body = np.frombuffer(buf, dtype=np.uint8, offset=header)
    if ndim == 1:
        return body.tolist()
    count, rows, cols = dims
    images = body.reshape(count, rows, cols)
    return [RawImage(cols, rows, 1, images[i]) for i in range(count)]


def idx_arrays(buf: bytes) -> np.ndarray:
    """Like `parse_idx` but returns one uint8 array (N,) or (N, rows, cols)."""
    parsed = parse_idx(buf)
    if parsed and isinstance(parsed[0], RawImage):
        return np.stack([img.pixels[0] for img in parsed])
    return np.asarray(parsed, dtype=np.uint8)


def write_idx(data: np.ndarray) -> bytes:
    """Serialise uint8 labels (N,) or images (N, rows, cols) as IDX."""
    data = np.asarray(data, dtype=np.uint8)
    if data.ndim == 1:
        head = struct.pack(">II", IDX_LABELS_MAGIC, data.shape[0])
    elif data.ndim == 3:
        head = struct.pack(">IIII", IDX_IMAGES_MAGIC, *data.shape)
    else:
        raise ValueError(f"IDX writer supports 1-d labels or 3-d images, got {data.ndim}-d")
    return head + data.tobytes()


def parse_cifar10(buf: bytes) -> List[Tuple[int, RawImage]]:
    if len(buf) % CIFAR_RECORD:
        raise DataFormatError(
            f"CIFAR-10 length {len(buf)} is not a multiple of {CIFAR_RECORD}-byte records"
        )
    recs = np.frombuffer(buf, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    return [(int(r[0]), RawImage(CIFAR_SIDE, CIFAR_SIDE, 3, r[1:])) for r in recs]


def read_bytes(path: Union[str, Path]) -> bytes:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        return gzip.decompress(raw)
    return raw


# --------------------------------------------------------------------------
# Preprocessing
# --------------------------------------------------------------------------


def to_grayscale(img: RawImage) -> RawImage:
    if img.channels != 3:
        raise ValueError(f"grayscale conversion needs 3 channels, got {img.channels}")
    r, g, b = (img.pixels[c].astype(np.float64) for c in range(3))
    lum = np.rint(LUMA[0] * r + LUMA[1] * g + LUMA[2] * b)
    return RawImage(img.width, img.height, 1, np.clip(lum, 0, 255).astype(np.uint8))


def _crop_bounds(size: int, grid: int) -> Tuple[int, int]:
    excess = size - (size // grid) * grid
    lead = excess // 2
    return lead, size - (excess - lead)


def downsample_array(images: np.ndarray, grid: int) -> np.ndarray:
    """Block-mean ``(N, s, s)`` uint8 images to ``(N, grid**2)`` in [0, 1]."""
    images = np.asarray(images)
    n, h, w = images.shape
    if h != w:
        raise ValueError(f"downsampling needs square images, got {h}x{w}")
    if h < grid:
        raise ValueError(f"{h}x{w} image is smaller than the {grid}x{grid} grid")
    lo, hi = _crop_bounds(h, grid)
    crop = images[:, lo:hi, lo:hi].astype(np.float64)
    block = (hi - lo) // grid
    means = crop.reshape(n, grid, block, grid, block).mean(axis=(2, 4))
    return means.reshape(n, grid * grid) / 255.0


def downsample(img: RawImage, grid: int) -> np.ndarray:
    if img.channels != 1:
        raise ValueError("downsample expects a single-channel image")
    if img.width != img.height:
        raise ValueError(f"downsampling needs square images, got {img.width}x{img.height}")
    return downsample_array(img.pixels[0][None], grid)[0]


def make_split(
    images: np.ndarray,
    labels: Sequence[int],
    class_pair: Tuple[int, int],
    n_train: int,
    n_test: int,
    grid: int,
    rng: np.random.Generator,
) -> DatasetSplit:
    """Filter to ``class_pair``, map ``c0 -> -1`` and ``c1 -> +1``, shuffle, cut.

    ``images`` is either ``(N, s, s)`` uint8 pixels or ``(N, grid**2)``
    features already in [0, 1].
    """
    labels = np.asarray(labels)
    c0, c1 = class_pair
    if c0 == c1:
        raise ValueError("class pair must name two different classes")
    keep = np.flatnonzero((labels == c0) | (labels == c1))
    need = n_train + n_test
    counts = {c: int(np.sum(labels[keep] == c)) for c in (c0, c1)}
    scarce = min(counts, key=counts.get)
    if counts[scarce] == 0 or len(keep) < need:
        raise ValueError(
            f"insufficient samples: class {scarce} has {counts[scarce]} "
            f"(pair total {len(keep)}, {need} needed)"
        )
    order = keep[rng.permutation(len(keep))][:need]
    src = labels[order].astype(np.int64)
    y = np.where(src == c1, 1.0, -1.0)
    imgs = np.asarray(images)[order]
    x = downsample_array(imgs, grid) if imgs.ndim == 3 else imgs.astype(np.float64)
    tr, te = slice(0, n_train), slice(n_train, need)
    for name, part in (("train", y[tr]), ("test", y[te])):
        if len(part) and len(np.unique(part)) < 2:
            raise ValueError(f"{name} split ended up with a single class; increase its size")
    return DatasetSplit(x[tr], y[tr], x[te], y[te], grid, (c0, c1), src[tr], src[te])


def synthetic_dataset(grid: int, n_train: int, n_test: int, rng: np.random.Generator,
                      bright: float = 0.8, dark: float = 0.2, noise: float = 0.1) -> DatasetSplit:
    """Bright-top (+1) versus bright-bottom (-1) block images.

    Rows above the middle take ``bright``, rows below take ``dark`` (mirrored
    for -1); an odd grid's middle row sits halfway.  Gaussian noise is added
    and features are clipped to [0, 1].
    """
    n = n_train + n_test
    y = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    y = y[rng.permutation(n)]
    row_level = np.full(grid, 0.5 * (bright + dark))
    row_level[: grid // 2] = bright
    row_level[grid - grid // 2 :] = dark
    top_bright = np.repeat(row_level, grid)
    bottom_bright = np.repeat(row_level[::-1], grid)
    base = np.where(y[:, None] > 0, top_bright, bottom_bright)
    x = np.clip(base + noise * rng.standard_normal((n, grid * grid)), 0.0, 1.0)
    src = (y > 0).astype(np.int64)
    return DatasetSplit(x[:n_train], y[:n_train], x[n_train:], y[n_train:], grid, (0, 1),
                        src[:n_train], src[n_train:])


# --------------------------------------------------------------------------
# On-disk datasets
# --------------------------------------------------------------------------


def _find(directory: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx"), stem.replace("-idx", ".idx") + ".gz"):
        p = directory / name
        if p.exists():
            return p
    raise FileNotFoundError(f"{stem}[.gz] not found in {directory}")


def load_idx_pool(directory: Union[str, Path]) -> Tuple[np.ndarray, np.ndarray]:
    """All train and test images/labels in an MNIST-layout directory."""
    directory = Path(directory)
    imgs, labs = [], []
    for part in ("train", "test"):
        try:
            ip = _find(directory, MNIST_FILES[f"{part}_images"])
            lp = _find(directory, MNIST_FILES[f"{part}_labels"])
        except FileNotFoundError:
            if part == "train":
                raise
            continue
        im = idx_arrays(read_bytes(ip))
        lb = idx_arrays(read_bytes(lp))
        if len(im) != len(lb):
            raise DataFormatError(f"{ip.name} has {len(im)} images but {lp.name} has {len(lb)} labels")
        imgs.append(im)
        labs.append(lb)
    return np.concatenate(imgs), np.concatenate(labs)


def load_cifar_pool(directory: Union[str, Path]) -> Tuple[np.ndarray, np.ndarray]:
    """Grayscale CIFAR-10 images ``(N, 32, 32)`` and labels from binary batches."""
    directory = Path(directory)
    files = [directory / f for f in CIFAR_FILES if (directory / f).exists()]
    if not files:
        raise FileNotFoundError(f"no CIFAR-10 binary batches in {directory}")
    imgs, labs = [], []
    for f in files:
        buf = read_bytes(f)
        if len(buf) % CIFAR_RECORD:
            raise DataFormatError(f"{f.name}: {len(buf)} bytes is not a multiple of {CIFAR_RECORD}")
        recs = np.frombuffer(buf, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        rgb = recs[:, 1:].reshape(-1, 3, CIFAR_SIDE, CIFAR_SIDE).astype(np.float64)
        gray = np.rint(LUMA[0] * rgb[:, 0] + LUMA[1] * rgb[:, 1] + LUMA[2] * rgb[:, 2])
        imgs.append(np.clip(gray, 0, 255).astype(np.uint8))
        labs.append(recs[:, 0])
    return np.concatenate(imgs), np.concatenate(labs)
