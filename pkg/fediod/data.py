"""
Datasets and heterogeneous partitioning.

  - make_blobs:          Gaussian class clusters on a circle (desk-scale stand-in)
  - load_idx:            MNIST-style IDX ingestion, area-averaged downsample
  - dirichlet_partition: per-class Dir(alpha) split across K nodes
  - local_weight / class_prior_ratio: the two statistics the server receives
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Tuple

import numpy as np

from .errors import DataFormatError, PartitionError

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

_BLOB_RADIUS = 0.7
_MAX_REDRAWS = 100


@dataclass
class Dataset:
    inputs: np.ndarray          # N x d, values in [-1, 1]
    labels: np.ndarray          # N ints in [0, C)
    num_classes: int
    name: str = "dataset"

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or len(self.inputs) != len(self.labels):
            raise DataFormatError(
                f"{self.name}: {self.inputs.shape} inputs vs "
                f"{self.labels.shape} labels")
        if len(self.labels) and (self.labels.min() < 0
                                 or self.labels.max() >= self.num_classes):
            raise DataFormatError(
                f"{self.name}: labels outside [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, indices, name: str = None) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.inputs[idx], self.labels[idx], self.num_classes,
                       name or self.name)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


# ======================================================================
# Synthesis and ingestion
# ======================================================================

def make_blobs(num_classes: int = 4, per_class: int = 400, dim: int = 2,
               spread: float = 0.15, seed: int = 0) -> Dataset:
    """Class c centred at angle 2*pi*c/C on a radius-0.7 circle (first two
    dims, remaining dims 0), isotropic Gaussian noise, clipped to [-1, 1]."""
    if num_classes < 2:
        raise ValueError(f"need at least 2 classes, got {num_classes}")
    if dim < 2:
        raise ValueError(f"need at least 2 dims, got {dim}")
    rng = np.random.default_rng(seed)
    centers = np.zeros((num_classes, dim))
    angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
    centers[:, 0] = _BLOB_RADIUS * np.cos(angles)
    centers[:, 1] = _BLOB_RADIUS * np.sin(angles)

    labels = np.repeat(np.arange(num_classes), per_class)
    inputs = centers[labels] + spread * rng.standard_normal((labels.size, dim))
    inputs = np.clip(inputs, -1.0, 1.0)
    return Dataset(inputs, labels, num_classes, name="blobs")


def _read_idx(path: str, magic: int) -> Tuple[Tuple[int, ...], np.ndarray]:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 8:
        raise DataFormatError(f"{path}: truncated header")
    found = int.from_bytes(raw[:4], "big")
    if found != magic:
        raise DataFormatError(
            f"{path}: bad magic number 0x{found:08X}, expected 0x{magic:08X}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataFormatError(f"{path}: truncated header")
    dims = tuple(int(d) for d in np.frombuffer(raw, ">u4", ndim, 4))
    expected = math.prod(dims)
    body = np.frombuffer(raw, np.uint8, offset=header)
    if body.size < expected:
        raise DataFormatError(
            f"{path}: truncated body ({body.size} of {expected} bytes)")
    return dims, body[:expected].reshape(dims)


def _area_downsample(images: np.ndarray, side: int) -> np.ndarray:
    """Average rectangular pixel blocks so each image becomes side x side."""
    n, rows, cols = images.shape
    r_edges = (np.arange(side) * rows) // side
    c_edges = (np.arange(side) * cols) // side
    r_sizes = np.diff(np.append(r_edges, rows))
    c_sizes = np.diff(np.append(c_edges, cols))
    summed = np.add.reduceat(images.astype(np.float64), r_edges, axis=1)
    summed = np.add.reduceat(summed, c_edges, axis=2)
    return summed / np.outer(r_sizes, c_sizes)


def load_idx(images_path: str, labels_path: str,
             downsample_to: int = 64, name: str = "idx") -> Dataset:
    """Read an IDX image/label pair; pixels scaled to [-1, 1] and area-averaged
    to sqrt(d) x sqrt(d)."""
    side = math.isqrt(downsample_to)
    if side * side != downsample_to or side < 1:
        raise ValueError(f"downsample_to must be a perfect square, "
                         f"got {downsample_to}")
    img_dims, images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    lbl_dims, labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if img_dims[0] != lbl_dims[0]:
        raise DataFormatError(
            f"count mismatch: {img_dims[0]} images vs {lbl_dims[0]} labels")
    if img_dims[1] < side or img_dims[2] < side:
        raise DataFormatError(
            f"images {img_dims[1]}x{img_dims[2]} smaller than {side}x{side}")

    small = _area_downsample(images, side)
    inputs = (small / 127.5 - 1.0).reshape(img_dims[0], side * side)
    labels = labels.astype(np.int64)
    num_classes = int(labels.max()) + 1 if labels.size else 0
    logger.info("Loaded %d IDX images (%dx%d -> %dx%d), %d classes",
                img_dims[0], img_dims[1], img_dims[2], side, side, num_classes)
    return Dataset(inputs, labels, max(num_classes, 2), name=name)


def train_test_split(ds: Dataset, test_fraction: float,
                     seed: int) -> Tuple[Dataset, Dataset]:
    """Global hold-out, taken before any partitioning."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ds))
    n_test = max(1, int(round(test_fraction * len(ds))))
    test_idx = np.sort(order[:n_test])
    train_idx = np.sort(order[n_test:])
    return (ds.subset(train_idx, f"{ds.name}-train"),
            ds.subset(test_idx, f"{ds.name}-test"))


# ======================================================================
# Partitioning
# ======================================================================

@dataclass
class PartitionSpec:
    node_indices: List[np.ndarray]
    label_histogram: np.ndarray     # K x C
    alpha: float
    seed: int
    sizes: np.ndarray = field(init=False)

    def __post_init__(self):
        self.node_indices = [np.asarray(ix, dtype=np.int64)
                             for ix in self.node_indices]
        self.label_histogram = np.asarray(self.label_histogram, dtype=np.int64)
        self.sizes = np.array([ix.size for ix in self.node_indices])

    @property
    def num_nodes(self) -> int:
        return len(self.node_indices)

    @property
    def num_classes(self) -> int:
        return self.label_histogram.shape[1]

    def validate(self, ds: Dataset):
        """Check exactness, disjointness and histogram consistency."""
        all_idx = np.concatenate(self.node_indices)
        if all_idx.size != len(ds) or np.unique(all_idx).size != len(ds):
            raise PartitionError("Partition is not an exact cover of the dataset")
        hist = _histogram(ds, self.node_indices)
        if not np.array_equal(hist, self.label_histogram):
            raise PartitionError("Stored label histogram does not match indices")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "alpha": self.alpha,
            "seed": self.seed,
            "node_indices": [ix.tolist() for ix in self.node_indices],
            "label_histogram": self.label_histogram.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "PartitionSpec":
        return cls(doc["node_indices"], doc["label_histogram"],
                   float(doc["alpha"]), int(doc["seed"]))


def _histogram(ds: Dataset, node_indices: List[np.ndarray]) -> np.ndarray:
    return np.stack([np.bincount(ds.labels[ix], minlength=ds.num_classes)
                     for ix in node_indices])


def _split_by_class(ds: Dataset, k: int, alpha: float,
                    rng: np.random.Generator) -> List[List[int]]:
    nodes: List[List[int]] = [[] for _ in range(k)]
    for c in range(ds.num_classes):
        idx = np.flatnonzero(ds.labels == c)
        if idx.size == 0:
            continue
        idx = rng.permutation(idx)
        p = rng.dirichlet(np.full(k, alpha))
        cuts = (np.cumsum(p) * idx.size).astype(int)[:-1]
        for node, part in zip(nodes, np.split(idx, cuts)):
            node.extend(part.tolist())
    return nodes


def dirichlet_partition(ds: Dataset, k: int, alpha: float,
                        seed: int) -> PartitionSpec:
    """Per-class Dirichlet split.  Every node gets at least one sample: the
    whole draw is repeated up to 100 times, then single samples move from the
    largest node to any node still empty."""
    if k < 1:
        raise PartitionError(f"K must be >= 1, got {k}")
    if not alpha > 0:
        raise PartitionError(f"alpha must be positive, got {alpha}")
    if len(ds) < k:
        raise PartitionError(f"dataset of {len(ds)} samples cannot feed {k} nodes")

    rng = np.random.default_rng(seed)
    nodes = _split_by_class(ds, k, alpha, rng)
    redraws = 0
    while min(len(n) for n in nodes) == 0 and redraws < _MAX_REDRAWS:
        nodes = _split_by_class(ds, k, alpha, rng)
        redraws += 1
    moved = 0
    while min(len(n) for n in nodes) == 0:
        empty = min(range(k), key=lambda i: len(nodes[i]))
        largest = max(range(k), key=lambda i: len(nodes[i]))
        nodes[empty].append(nodes[largest].pop())
        moved += 1
    if redraws or moved:
        logger.warning("Partition repair: %d redraws, %d samples moved",
                       redraws, moved)

    node_indices = [np.sort(np.asarray(n, dtype=np.int64)) for n in nodes]
    spec = PartitionSpec(node_indices, _histogram(ds, node_indices),
                         float(alpha), int(seed))
    logger.debug("Partition sizes: %s", spec.sizes.tolist())
    return spec


def local_weight(spec: PartitionSpec, k: int) -> float:
    """pi_k = |X'_k| / sum |X'_k'|."""
    return float(spec.sizes[k] / spec.sizes.sum())


def local_weights(spec: PartitionSpec) -> np.ndarray:
    return spec.sizes / spec.sizes.sum()


def class_prior_ratio(spec: PartitionSpec, k: int, c: int) -> float:
    """count_k(c) / sum_k' count_k'(c)."""
    total = spec.label_histogram[:, c].sum()
    if total == 0:
        raise PartitionError(f"class {c} is absent from every node")
    return float(spec.label_histogram[k, c] / total)


def class_prior_matrix(histogram: np.ndarray) -> np.ndarray:
    """K x C matrix of class_prior_ratio built from raw label counts."""
    histogram = np.asarray(histogram, dtype=np.float64)
    totals = histogram.sum(axis=0)
    if np.any(totals == 0):
        missing = np.flatnonzero(totals == 0).tolist()
        raise PartitionError(f"classes {missing} are absent from every node")
    return histogram / totals


def heterogeneity(spec: PartitionSpec) -> float:
    """Mean total-variation distance between node and global label mix."""
    hist = spec.label_histogram.astype(np.float64)
    global_dist = hist.sum(axis=0) / hist.sum()
    node_dist = hist / hist.sum(axis=1, keepdims=True)
    return float(np.mean(0.5 * np.abs(node_dist - global_dist).sum(axis=1)))
