"""Dataset loading, saving and synthetic generators."""

import csv
import gzip
import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .augment import AffineRanges, affine_distort
from .container import DATASET_MAGIC, read_tensors, write_tensors
from .errors import ConfigError, DataFormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray = None
    image_shape: tuple = None
    name: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise DataFormatError(f"features must be a non-empty (n, d) matrix, got {self.features.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.features.shape[0],):
                raise DataFormatError("label count does not match the number of points")
            if np.any(self.labels < 0):
                raise DataFormatError("labels must be non-negative integers")
        if self.image_shape is not None:
            self.image_shape = tuple(int(s) for s in self.image_shape)
            if self.image_shape[0] * self.image_shape[1] != self.features.shape[1]:
                raise DataFormatError(f"image shape {self.image_shape} does not match dimension {self.features.shape[1]}")

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def n_classes(self):
        return 0 if self.labels is None else int(self.labels.max()) + 1

    def subset(self, idx):
        labels = None if self.labels is None else self.labels[idx]
        return Dataset(self.features[idx], labels, self.image_shape, self.name)

    def fingerprint(self):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.features, dtype="<f8").tobytes())
        if self.labels is not None:
            h.update(np.ascontiguousarray(self.labels, dtype="<i8").tobytes())
        if self.image_shape is not None:
            h.update(repr(self.image_shape).encode())
        return h.hexdigest()


# -- IDX (MNIST) ---------------------------------------------------------------

def _open_bytes(path):
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix == ".gz":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw, expected_magic, path):
    if len(raw) < 4:
        raise DataFormatError(f"{path}: truncated header at byte offset {len(raw)}")
    (magic,) = struct.unpack_from(">I", raw, 0)
    if magic != expected_magic:
        raise DataFormatError(f"{path}: bad magic 0x{magic:08x} at byte offset 0")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataFormatError(f"{path}: truncated dimensions at byte offset {len(raw)}")
    dims = struct.unpack_from(">" + "I" * ndim, raw, 4)
    count = int(np.prod(dims))
    if len(raw) < header + count:
        raise DataFormatError(f"{path}: truncated payload at byte offset {len(raw)}, expected {header + count} bytes")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def load_idx(images_path, labels_path=None, name=None):
    """Load MNIST-style IDX files; pixels map linearly from [0, 255] to [-1, 1]."""
    pixels = _parse_idx(_open_bytes(images_path), IDX_IMAGES_MAGIC, images_path)
    n, h, w = pixels.shape
    features = pixels.reshape(n, h * w).astype(np.float64) * (2.0 / 255.0) - 1.0
    labels = None
    if labels_path is not None:
        labels = _parse_idx(_open_bytes(labels_path), IDX_LABELS_MAGIC, labels_path).astype(np.int64)
        if labels.shape[0] != n:
            raise DataFormatError(f"{labels_path}: {labels.shape[0]} labels for {n} images")
    return Dataset(features, labels, (h, w), name or Path(images_path).name)


def save_idx(images_path, pixels, labels_path=None, labels=None):
    """Write uint8 images (n, h, w) and optional labels as IDX files."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    n, h, w = pixels.shape
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w) + pixels.tobytes())
    if labels_path is not None:
        labels = np.asarray(labels, dtype=np.uint8)
        Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes())


# -- CSV ----------------------------------------------------------------------

def load_csv(path, label_column=None, name=None):
    rows = []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataFormatError(f"{path}: row {lineno} has {len(row)} cells, expected {width}")
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise DataFormatError(f"{path}: non-numeric cell in row {lineno}") from exc
    if not rows:
        raise DataFormatError(f"{path}: empty file")
    table = np.array(rows, dtype=np.float64)
    labels = None
    if label_column is not None:
        col = int(label_column)
        if not -width <= col < width:
            raise DataFormatError(f"{path}: label column {col} out of range for {width} columns")
        raw = table[:, col]
        if np.any(raw != np.round(raw)):
            raise DataFormatError(f"{path}: label column {col} is not integer")
        labels = raw.astype(np.int64)
        table = np.delete(table, col % width, axis=1)
    if table.shape[1] == 0:
        raise DataFormatError(f"{path}: no feature columns")
    return Dataset(table, labels, None, name or Path(path).stem)


def save_csv(dataset, path):
    """Write features (shortest round-trip decimal) with labels as the last column."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for i, row in enumerate(dataset.features):
            cells = [repr(float(v)) for v in row]
            if dataset.labels is not None:
                cells.append(str(int(dataset.labels[i])))
            writer.writerow(cells)


# -- native container -----------------------------------------------------------

def save_native(dataset, path):
    tensors = {"features": dataset.features}
    if dataset.labels is not None:
        tensors["labels"] = dataset.labels.astype(np.float64)
    if dataset.image_shape is not None:
        tensors["image_shape"] = np.array(dataset.image_shape, dtype=np.float64)
    write_tensors(path, tensors, DATASET_MAGIC)


def load_native(path, name=None):
    t = read_tensors(path, DATASET_MAGIC)
    if "features" not in t:
        raise DataFormatError(f"{path}: no 'features' tensor")
    labels = t.get("labels")
    shape = t.get("image_shape")
    return Dataset(
        t["features"],
        None if labels is None else labels.astype(np.int64),
        None if shape is None else tuple(int(s) for s in shape),
        name or Path(path).stem,
    )


def load_dataset(path, fmt=None, labels_path=None, label_column=None, image_shape=None):
    """Dispatch on ``fmt`` (native, csv, idx) or the file suffix."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    if fmt is None:
        if path.suffix == ".csv":
            fmt = "csv"
        elif "idx" in path.name or "ubyte" in path.name:
            fmt = "idx"
        else:
            fmt = "native"
    if fmt == "csv":
        ds = load_csv(path, label_column)
    elif fmt == "idx":
        ds = load_idx(path, labels_path)
    elif fmt == "native":
        ds = load_native(path)
    else:
        raise ConfigError(f"unknown dataset format {fmt!r}")
    if image_shape is not None:
        ds = Dataset(ds.features, ds.labels, image_shape, ds.name)
    return ds


# -- generators ------------------------------------------------------------------

SPIRAL_TURN = 2.5 * np.pi


def spiral_arc(phi, arc, arcs):
    """Noise-free point(s) of arc ``arc`` at angle ``phi``."""
    rho = phi / SPIRAL_TURN
    ang = phi + 2.0 * np.pi * arc / arcs
    return np.stack([rho * np.cos(ang), rho * np.sin(ang)], axis=-1)


def gen_spiral(arcs=3, per_arc=300, noise_std=0.05, seed=0):
    """Interleaved spiral arms; arm ``a`` is rotated by 2*pi*a/arcs."""
    if arcs < 2 or per_arc < 1:
        raise ConfigError("need at least 2 arcs and 1 point per arc")
    if noise_std < 0:
        raise ConfigError("noise_std must be non-negative")
    rng = np.random.default_rng(seed)
    phi = np.linspace(0.0, SPIRAL_TURN, per_arc, endpoint=False)
    pts = [spiral_arc(phi, a, arcs) for a in range(arcs)]
    X = np.concatenate(pts) + noise_std * rng.standard_normal((arcs * per_arc, 2))
    y = np.repeat(np.arange(arcs), per_arc)
    return Dataset(X, y, None, f"spiral{arcs}")


def gen_blobs(K=4, per_blob=200, dim=2, separation=10.0, noise_std=0.5, seed=0, max_tries=1000):
    """Isotropic Gaussian blobs whose centres are at least ``separation`` apart."""
    if K < 1 or per_blob < 1 or dim < 1:
        raise ConfigError("K, per_blob and dim must be positive")
    if separation <= 0:
        raise ConfigError("separation must be positive")
    rng = np.random.default_rng(seed)
    side = separation * 1.5 * max(2.0, np.ceil(K ** (1.0 / dim)))
    centers = []
    tries = 0
    while len(centers) < K:
        tries += 1
        if tries > max_tries * K:
            raise ConfigError(f"could not place {K} centres {separation} apart in {dim}-D")
        c = rng.uniform(0.0, side, size=dim)
        if all(np.linalg.norm(c - o) >= separation for o in centers):
            centers.append(c)
    centers = np.array(centers)
    X = np.repeat(centers, per_blob, axis=0) + noise_std * rng.standard_normal((K * per_blob, dim))
    y = np.repeat(np.arange(K), per_blob)
    ds = Dataset(X, y, None, f"blobs{K}")
    ds.centers = centers
    return ds


def _glyph_templates(size):
    c = (size - 1) / 2.0
    yy, xx = np.mgrid[0:size, 0:size]
    r = np.hypot(xx - c, yy - c)
    unit = size / 21.0
    ring = (np.abs(r - 6.0 * unit) < 1.3 * unit).astype(float)
    plus = ((np.abs(xx - c) < 1.3 * unit) & (np.abs(yy - c) < 7 * unit)) | \
           ((np.abs(yy - c) < 1.3 * unit) & (np.abs(xx - c) < 7 * unit))
    # lower-left corner shape
    ell = ((np.abs(xx - (c - 5 * unit)) < 1.3 * unit) & (np.abs(yy - c) < 7 * unit)) | \
          ((np.abs(yy - (c + 6 * unit)) < 1.3 * unit) & (xx > c - 6.3 * unit) & (xx < c + 6 * unit))
    return [ring, plus.astype(float), ell.astype(float)]


def gen_glyphs(copies=100, size=21, seed=0, ranges=None):
    """Three stroke templates, each copied ``copies`` times under random affine distortion."""
    if copies < 1 or size < 8:
        raise ConfigError("need at least one copy and a canvas of 8 pixels or more")
    rng = np.random.default_rng(seed)
    ranges = ranges or AffineRanges()
    rows, labels = [], []
    for k, tmpl in enumerate(_glyph_templates(size)):
        for _ in range(copies):
            rows.append(affine_distort(tmpl, ranges, rng).ravel())
            labels.append(k)
    return Dataset(np.array(rows), np.array(labels), (size, size), "glyphs3")


def stratified_subset(dataset, n, seed=0):
    """Class-balanced subset of ``n`` points (remainders go to the lowest classes)."""
    if dataset.labels is None:
        raise ConfigError("stratified subsets need labels")
    rng = np.random.default_rng(seed)
    classes = np.unique(dataset.labels)
    base, extra = divmod(n, len(classes))
    picks = []
    for i, c in enumerate(classes):
        idx = np.flatnonzero(dataset.labels == c)
        want = base + (1 if i < extra else 0)
        if want > len(idx):
            raise ConfigError(f"class {c} has only {len(idx)} points, need {want}")
        picks.append(rng.choice(idx, size=want, replace=False))
    return dataset.subset(np.sort(np.concatenate(picks)))
