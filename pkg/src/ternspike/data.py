"""Dataset ingestion and encoding.

Static datasets hold flat per-sample feature vectors that are repeated at
every timestep (direct encoding); neuromorphic datasets hold one sparse
signed frame per timestep and feed the network one frame at a time.

The IDX reader/writer speaks the classic big-endian format (magic
0x00000803 for ubyte image tensors, 0x00000801 for ubyte label vectors), and
writing a parsed dataset back reproduces the original bytes exactly.
Synthetic generators are pure functions of their parameters and generator
stream, recorded in a key=value manifest alongside generated corpora.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConsistencyError, DimensionError, FormatError, LengthError
from .numerics import Array

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    """Immutable sample collection.

    ``inputs`` is (N, D) for static data and (N, T, D) for neuromorphic
    event frames; labels are integers in [0, num_classes).
    """

    inputs: Array
    labels: Array
    kind: str
    num_classes: int

    def __post_init__(self) -> None:
        if self.kind not in ("static", "neuromorphic"):
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        want = 2 if self.kind == "static" else 3
        if self.inputs.ndim != want:
            raise DimensionError(f"{self.kind} inputs must be {want}-d, got shape {self.inputs.shape}")
        if len(self.labels) != len(self.inputs):
            raise ConsistencyError(f"{len(self.inputs)} inputs but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("labels out of range")

    @property
    def feature_dim(self) -> int:
        return self.inputs.shape[-1]

    def subset(self, idx) -> "Dataset":
        return replace(self, inputs=self.inputs[idx], labels=self.labels[idx])


def encode_batch(data: Dataset, idx, n_steps: int):
    """Materialize one batch as a per-timestep input sequence.

    Static samples are direct-encoded (repeated); neuromorphic samples must
    carry exactly ``n_steps`` frames.
    """
    labels = data.labels[idx]
    if data.kind == "static":
        return direct_encode(data.inputs[idx], n_steps), labels
    if data.inputs.shape[1] != n_steps:
        raise DimensionError(f"dataset has {data.inputs.shape[1]} frames per sample, network expects {n_steps}")
    frames = data.inputs[idx]
    return [frames[:, t, :] for t in range(n_steps)], labels


def direct_encode(x: Array, n_steps: int) -> list[Array]:
    """Repeat a static input identically at every timestep."""
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    x = np.asarray(x, dtype=np.float64)
    return [x for _ in range(n_steps)]


# ---------------------------------------------------------------------------
# IDX format
# ---------------------------------------------------------------------------


def _read_u32(blob: bytes, off: int, what: str) -> int:
    if off + 4 > len(blob):
        raise LengthError(f"{what}: truncated header at offset {off}")
    return struct.unpack(">I", blob[off : off + 4])[0]


def parse_idx_images(blob: bytes) -> np.ndarray:
    """Big-endian IDX ubyte image tensor -> uint8 array (N, rows, cols)."""
    magic = _read_u32(blob, 0, "idx images")
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(f"bad image magic 0x{magic:08x} at offset 0 (want 0x{IDX_IMAGES_MAGIC:08x})")
    n = _read_u32(blob, 4, "idx images")
    rows = _read_u32(blob, 8, "idx images")
    cols = _read_u32(blob, 12, "idx images")
    need = 16 + n * rows * cols
    if len(blob) < need:
        raise LengthError(f"image payload holds {len(blob) - 16} bytes, header promises {n * rows * cols}")
    return np.frombuffer(blob[16:need], dtype=np.uint8).reshape(n, rows, cols).copy()


def parse_idx_labels(blob: bytes) -> np.ndarray:
    """Big-endian IDX ubyte label vector -> uint8 array (N,)."""
    magic = _read_u32(blob, 0, "idx labels")
    if magic != IDX_LABELS_MAGIC:
        raise FormatError(f"bad label magic 0x{magic:08x} at offset 0 (want 0x{IDX_LABELS_MAGIC:08x})")
    n = _read_u32(blob, 4, "idx labels")
    need = 8 + n
    if len(blob) < need:
        raise LengthError(f"label payload holds {len(blob) - 8} bytes, header promises {n}")
    return np.frombuffer(blob[8:need], dtype=np.uint8).copy()


def write_idx_images(images: np.ndarray) -> bytes:
    images = np.ascontiguousarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    return struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + images.tobytes()


def write_idx_labels(labels: np.ndarray) -> bytes:
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    return struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes()


def load_idx(images_path, labels_path) -> Dataset:
    """Parse an IDX image/label file pair into a static dataset in [0, 1]."""
    with open(images_path, "rb") as f:
        images = parse_idx_images(f.read())
    with open(labels_path, "rb") as f:
        labels = parse_idx_labels(f.read())
    if len(images) != len(labels):
        raise ConsistencyError(f"{len(images)} images but {len(labels)} labels")
    flat = images.reshape(len(images), -1).astype(np.float64) / 255.0
    return Dataset(
        inputs=flat,
        labels=labels.astype(np.int64),
        kind="static",
        num_classes=int(labels.max()) + 1 if len(labels) else 0,
    )


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------


def dataset_stats(ds: Dataset) -> tuple[float, float]:
    """Global mean and standard deviation over every input value."""
    return float(ds.inputs.mean()), float(ds.inputs.std())


def normalize(ds: Dataset, mean: float, std: float) -> Dataset:
    """Shift and scale all input values: (x - mean) / std."""
    if std <= 0.0:
        raise ValueError(f"std must be positive, got {std}")
    return replace(ds, inputs=(ds.inputs - mean) / std)


# ---------------------------------------------------------------------------
# synthetic corpora
# ---------------------------------------------------------------------------


def synth_static(
    n: int,
    dims: int,
    classes: int,
    margin: float,
    rng: np.random.Generator,
    mirror: bool = False,
) -> Dataset:
    """Gaussian class blobs with unit noise and controllable separation.

    Class centers sit ``margin`` from the origin along orthogonal axes when
    ``dims >= classes`` (pairwise distance margin * sqrt(2)), otherwise along
    random unit directions.  Labels are assigned round-robin, so class counts
    differ by at most one sample.

    With ``mirror`` each class is an antipodal pair of blobs at +-center;
    the corpus then has no linear solution and hidden features must learn a
    sign-invariant. This is the default classification task of the command
    line, since it makes hidden-layer trainability the binding constraint.
    """
    if n < 1 or dims < 1 or classes < 1:
        raise ValueError("n, dims, classes must all be positive")
    if dims >= classes:
        centers = np.zeros((classes, dims))
        centers[np.arange(classes), np.arange(classes)] = margin
    else:
        dirs = rng.normal(size=(classes, dims))
        centers = margin * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    labels = np.arange(n, dtype=np.int64) % classes
    means = centers[labels]
    if mirror:
        means = np.where(rng.random(n)[:, None] < 0.5, means, -means)
    inputs = means + rng.standard_normal((n, dims))
    return Dataset(inputs=inputs, labels=labels, kind="static", num_classes=classes)


def synth_event_frames(
    n: int,
    dims: int,
    n_steps: int,
    rate: float,
    rng: np.random.Generator,
    classes: int = 2,
    sign_noise: float = 0.1,
) -> Dataset:
    """Sparse signed event frames with a class-specific spatiotemporal code.

    Each class owns a fixed {-1, +1} template per (timestep, pixel); a pixel
    is active independently with probability ``rate`` and carries the
    template sign, flipped with probability ``sign_noise``.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate must lie in [0, 1], got {rate}")
    templates = np.where(rng.random((classes, n_steps, dims)) < 0.5, -1.0, 1.0)
    labels = np.arange(n, dtype=np.int64) % classes
    active = rng.random((n, n_steps, dims)) < rate
    flips = np.where(rng.random((n, n_steps, dims)) < sign_noise, -1.0, 1.0)
    inputs = active * templates[labels] * flips
    return Dataset(inputs=inputs, labels=labels, kind="neuromorphic", num_classes=classes)


def write_manifest(path, params: dict) -> None:
    """Record generator parameters and seed as sorted key=value lines."""
    with open(path, "w") as f:
        for key in sorted(params):
            f.write(f"{key}={params[key]}\n")
