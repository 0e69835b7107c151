"""Dataset ingestion, the two contamination recipes and deterministic splits.

Images are kept as ``uint8`` arrays of shape ``(n, H, W)`` until a
contamination recipe turns them into float features in ``[0, 1]``.
"""

from __future__ import annotations

import csv
import gzip
import math
import struct
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .dataset import Dataset
from .errors import DataError, FormatError, InvalidParameter
from .numerics import PrngStream, permutation

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

IDX_FILENAMES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass(frozen=True)
class RawImageSet:
    images: np.ndarray  # (n, H, W) uint8
    labels: np.ndarray  # (n,) int64

    def __post_init__(self):
        images = np.asarray(self.images)
        labels = np.asarray(self.labels, dtype=np.int64)
        if images.ndim != 3 or images.shape[0] != labels.shape[0]:
            raise DataError(f"{images.shape} images do not match {labels.shape[0]} labels")
        if images.dtype != np.uint8:
            if images.size and (images.min() < 0 or images.max() > 255):
                raise DataError("pixel values must lie in [0, 255]")
            images = images.astype(np.uint8)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return int(self.labels.shape[0])

    def subset(self, idx):
        return RawImageSet(self.images[idx], self.labels[idx])


@dataclass(frozen=True)
class ContaminationSpec:
    kind: str = "awgn"
    mean: float = 255 / 2
    variance: float = 255 / 2
    fraction: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("awgn", "superimpose"):
            raise InvalidParameter(f"unknown contamination kind {self.kind!r}")
        if self.variance < 0:
            raise InvalidParameter("variance must be non-negative")
        if not 0.0 < self.fraction <= 1.0:
            raise InvalidParameter("fraction must be in (0, 1]")


# -- IDX ---------------------------------------------------------------------

def _open(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def read_idx(path, expected_magic=None):
    """Parse an unsigned-byte IDX file into an ndarray."""
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated header", offset=len(raw))
    magic = struct.unpack(">I", raw[:4])[0]
    if expected_magic is not None and magic != expected_magic:
        raise FormatError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}", offset=0)
    if raw[0] != 0 or raw[1] != 0 or raw[2] != 0x08:
        raise FormatError(f"{path}: only unsigned-byte IDX files are supported", offset=2)
    ndim = raw[3]
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated dimension list", offset=len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = math.prod(dims)
    payload = len(raw) - header
    if payload != count:
        raise FormatError(f"{path}: header declares {count} elements, file holds {payload}", offset=header)
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims).copy()


def write_idx(path, array):
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise InvalidParameter("write_idx only writes uint8 arrays")
    header = struct.pack(">I", 0x00000800 | array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    opener = gzip.open if Path(path).suffix == ".gz" else open
    with opener(path, "wb") as fh:
        fh.write(header + array.tobytes())


def load_idx(images_path, labels_path) -> RawImageSet:
    images = read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels", offset=4)
    return RawImageSet(images, labels.astype(np.int64))


def _find(directory, name):
    for candidate in (name, name + ".gz"):
        p = Path(directory) / candidate
        if p.exists():
            return p
    raise FileNotFoundError(Path(directory) / name)


def load_idx_dir(directory, split="train") -> RawImageSet:
    """Load the standard ``train-*``/``t10k-*`` file pair (plain or gzipped)."""
    img, lab = IDX_FILENAMES[split]
    return load_idx(_find(directory, img), _find(directory, lab))


# -- CSV ---------------------------------------------------------------------

def load_csv_labeled(path, n_features=None, columns=None) -> Dataset:
    """Comma-separated numeric features with an integer label in the last column.

    A first row containing a non-numeric cell is treated as a header.
    ``columns`` selects feature columns by index; ``n_features`` (if given)
    is checked against the file's feature count.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(cell.strip() for cell in r)]
    if not rows:
        raise FormatError(f"{path}: empty file", offset="row 0")

    def numeric(row):
        try:
            [float(c) for c in row]
            return True
        except ValueError:
            return False

    start = 0 if numeric(rows[0]) else 1
    values = []
    for r, row in enumerate(rows[start:], start=start + 1):
        if len(row) != len(rows[start]):
            raise FormatError(f"{path}: ragged row", offset=f"row {r}")
        parsed = []
        for c, cell in enumerate(row):
            try:
                parsed.append(float(cell))
            except ValueError:
                raise FormatError(f"{path}: non-numeric cell {cell!r}", offset=f"row {r}, col {c + 1}") from None
        values.append(parsed)
    if not values:
        raise FormatError(f"{path}: no data rows", offset="row 1")
    table = np.array(values)
    features, labels = table[:, :-1], table[:, -1]
    if n_features is not None and features.shape[1] != n_features:
        raise FormatError(f"{path}: {features.shape[1]} feature columns, expected {n_features}")
    if np.any(labels != np.round(labels)) or labels.min() < 0:
        raise FormatError(f"{path}: labels must be non-negative integers")
    if columns is not None:
        features = features[:, list(columns)]
    return Dataset(features, labels.astype(np.int64))


def iris_path() -> Path:
    return Path(resources.files("proboost.resources") / "iris.csv")


def load_iris(columns=(0, 2)) -> Dataset:
    """The bundled Iris table; default columns are sepal length and petal length."""
    return load_csv_labeled(iris_path(), n_features=4, columns=columns)


# -- contamination -----------------------------------------------------------

def minmax_per_image(images):
    """Scale each image to [0, 1]; constant images become all zeros."""
    x = np.asarray(images, dtype=np.float64)
    flat = x.reshape(x.shape[0], -1)
    lo = flat.min(axis=1, keepdims=True)
    span = flat.max(axis=1, keepdims=True) - lo
    out = np.divide(flat - lo, span, out=np.zeros_like(flat), where=span > 0)
    return out.reshape(x.shape)


def contaminate_awgn(images, spec: ContaminationSpec, stream: PrngStream) -> np.ndarray:
    """Add N(mean, variance) noise per pixel, clip to [0, 255] and divide by 255."""
    images = getattr(images, "images", images)
    x = np.asarray(images, dtype=np.float64)
    noise = stream.standard_normal(x.shape) * math.sqrt(spec.variance) + spec.mean
    return np.clip(x + noise, 0.0, 255.0) / 255.0


def contaminate_superimpose(base: RawImageSet, donor: RawImageSet, spec: ContaminationSpec,
                            stream: PrngStream, return_pairs=False):
    """Overlay a same-class donor image on ``floor(fraction * n)`` random base images.

    Selected images are ``base + donor`` (pixel-wise) followed by per-image
    min-max scaling; the rest are min-max scaled on their own. With
    ``return_pairs`` the list of ``(base_index, base_label, donor_index,
    donor_label)`` tuples is returned as well.
    """
    n = len(base)
    n_sel = int(math.floor(spec.fraction * n))
    selected = np.sort(permutation(stream.child("select"), n)[:n_sel])
    by_class = {int(c): np.flatnonzero(donor.labels == c) for c in np.unique(donor.labels)}
    missing = sorted(set(int(c) for c in np.unique(base.labels[selected])) - set(by_class))
    if missing:
        raise DataError(f"donor set has no images of classes {missing}")
    x = base.images.astype(np.float64)
    picks = stream.child("donor").uniform(n_sel)
    pairs = []
    for i, u in zip(selected, picks):
        pool = by_class[int(base.labels[i])]
        j = int(pool[int(u * pool.size)])
        x[i] += donor.images[j]
        pairs.append((int(i), int(base.labels[i]), j, int(donor.labels[j])))
    out = minmax_per_image(x)
    return (out, pairs) if return_pairs else out


def contaminate(images: RawImageSet, spec: ContaminationSpec, donor: RawImageSet | None = None,
                stream: PrngStream | None = None):
    stream = stream or PrngStream(spec.seed)
    if spec.kind == "awgn":
        return contaminate_awgn(images, spec, stream)
    if donor is None:
        raise DataError("superimposition needs a donor image set")
    return contaminate_superimpose(images, donor, spec, stream)


# -- splits --------------------------------------------------------------------

def stratified_subsample(labels, n_total, stream: PrngStream):
    """``n_total`` indices spread as evenly as possible over the classes present.

    Leftover slots (when ``n_total`` is not divisible by the class count) go
    to the lowest class ids. Returned indices are sorted.
    """
    labels = np.asarray(labels, dtype=np.int64)
    classes = np.unique(labels)
    base, extra = divmod(int(n_total), classes.size)
    chosen = []
    for k, c in enumerate(classes):
        idx = np.flatnonzero(labels == c)
        want = base + (1 if k < extra else 0)
        if want > idx.size:
            raise DataError(f"class {c} has {idx.size} samples, {want} requested")
        chosen.append(idx[permutation(stream.child("class", int(c)), idx.size)[:want]])
    return np.sort(np.concatenate(chosen))


def train_test_interface(features, labels, train_idx, test_idx):
    """Materialise a split over one pool of samples, refusing overlapping index lists."""
    train_idx = np.asarray(train_idx, dtype=np.int64)
    test_idx = np.asarray(test_idx, dtype=np.int64)
    n = len(labels)
    for name, idx in (("train", train_idx), ("test", test_idx)):
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise DataError(f"{name} indices out of range for {n} samples")
    if np.intersect1d(train_idx, test_idx).size:
        raise DataError("train and test splits overlap")
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    return (
        Dataset(features[train_idx], labels[train_idx]),
        Dataset(features[test_idx], labels[test_idx]),
    )


def provider_split(train: RawImageSet, test: RawImageSet):
    """Pool a provider's train and test sets; returns (pool, train_idx, test_idx)."""
    pool = RawImageSet(np.concatenate([train.images, test.images]), np.concatenate([train.labels, test.labels]))
    return pool, np.arange(len(train)), np.arange(len(train), len(train) + len(test))
