"""
Evaluation metrics: Dice, sensitivity/specificity, HD95, AJI, object-level
Dice, and the adapted inception score.

Conventions where the formulas leave a gap:
  - both masks empty → Dice 1.0; zero denominator in sens/spec → 1.0
  - boundaries and instances use 4-connectivity; the image border counts
    as background
  - HD95 takes the linearly interpolated 95th percentile of each directed
    boundary-distance set, then the max of the two sides
  - AJI matches ground-truth instances greedily, in id order, without
    reusing a predicted instance
"""

import logging
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy.spatial.distance import cdist

from .core import Tensor, softmax_tau
from .errors import DataFormatError, ShapeError

logger = logging.getLogger(__name__)

_FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


@dataclass
class BinaryMask:
    bits: np.ndarray

    def __post_init__(self):
        self.bits = np.asarray(self.bits).astype(bool)
        if self.bits.ndim != 2 or 0 in self.bits.shape:
            raise ShapeError(f"mask must be a non-empty 2-D grid, got {self.bits.shape}")

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def area(self) -> int:
        return int(self.bits.sum())


@dataclass
class InstanceMap:
    ids: np.ndarray

    def __post_init__(self):
        self.ids = np.asarray(self.ids).astype(np.int64)
        if self.ids.ndim != 2 or 0 in self.ids.shape:
            raise ShapeError(f"instance map must be a non-empty 2-D grid, "
                             f"got {self.ids.shape}")
        if self.ids.min() < 0:
            raise ShapeError("instance ids must be non-negative")
        present = np.unique(self.ids[self.ids > 0])
        n = int(self.ids.max())
        if present.size != n:
            raise ShapeError(f"instance ids must be contiguous 1..{n}")

    @property
    def height(self) -> int:
        return self.ids.shape[0]

    @property
    def width(self) -> int:
        return self.ids.shape[1]

    @property
    def n_instances(self) -> int:
        return int(self.ids.max())

    def instance(self, i: int) -> np.ndarray:
        return self.ids == i

    def areas(self) -> np.ndarray:
        """Pixel count per instance id 1..n."""
        return np.bincount(self.ids.ravel(), minlength=self.n_instances + 1)[1:]


def instances_from_mask(mask: BinaryMask) -> InstanceMap:
    """4-connected component labelling."""
    labelled, _ = ndimage.label(mask.bits, structure=_FOUR_CONNECTED)
    return InstanceMap(labelled)


def _same_dims(a, b):
    if (a.height, a.width) != (b.height, b.width):
        raise ShapeError(f"dims differ: {a.height}x{a.width} vs "
                         f"{b.height}x{b.width}")


# ======================================================================
# Pixel-level
# ======================================================================

def dice(y: BinaryMask, yhat: BinaryMask) -> float:
    """2|y ∩ ŷ| / (|y| + |ŷ|)."""
    _same_dims(y, yhat)
    denom = y.area + yhat.area
    if denom == 0:
        return 1.0
    return 2.0 * float(np.logical_and(y.bits, yhat.bits).sum()) / denom


def sens_spec(y: BinaryMask, yhat: BinaryMask) -> Tuple[float, float]:
    _same_dims(y, yhat)
    pos = y.bits
    neg = ~y.bits
    tp = np.logical_and(pos, yhat.bits).sum()
    tn = np.logical_and(neg, ~yhat.bits).sum()
    sens = float(tp / pos.sum()) if pos.any() else 1.0
    spec = float(tn / neg.sum()) if neg.any() else 1.0
    return sens, spec


def boundary(mask: BinaryMask) -> np.ndarray:
    """Foreground pixels with at least one background 4-neighbour."""
    eroded = ndimage.binary_erosion(mask.bits, structure=_FOUR_CONNECTED,
                                    border_value=0)
    return mask.bits & ~eroded


def hd95(y: BinaryMask, yhat: BinaryMask) -> float:
    """Symmetric 95th-percentile boundary distance, in pixels."""
    _same_dims(y, yhat)
    if y.area == 0 or yhat.area == 0:
        raise ValueError("hd95 is undefined for an empty mask")
    a = np.argwhere(boundary(y))
    b = np.argwhere(boundary(yhat))
    dist = cdist(a, b)
    forward = np.percentile(dist.min(axis=1), 95)
    reverse = np.percentile(dist.min(axis=0), 95)
    return float(max(forward, reverse))


# ======================================================================
# Instance-level
# ======================================================================

def _overlaps(y: InstanceMap, yhat: InstanceMap) -> np.ndarray:
    """(n_y + 1) x (n_ŷ + 1) contingency table; row/col 0 is background."""
    table = np.zeros((y.n_instances + 1, yhat.n_instances + 1), dtype=np.int64)
    np.add.at(table, (y.ids.ravel(), yhat.ids.ravel()), 1)
    return table


def _jaccard_table(y: InstanceMap, yhat: InstanceMap):
    table = _overlaps(y, yhat)
    inter = table[1:, 1:].astype(np.float64)
    size_y = y.areas().astype(np.float64)
    size_p = yhat.areas().astype(np.float64)
    union = size_y[:, None] + size_p[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        jac = np.where(union > 0, inter / union, 0.0)
    return inter, union, jac, size_y, size_p


def aji(y: InstanceMap, yhat: InstanceMap) -> float:
    """Aggregated Jaccard Index."""
    _same_dims(y, yhat)
    if y.n_instances == 0 and yhat.n_instances == 0:
        return 1.0
    if y.n_instances == 0 or yhat.n_instances == 0:
        return 0.0
    inter, union, jac, size_y, size_p = _jaccard_table(y, yhat)
    used = np.zeros(yhat.n_instances, dtype=bool)
    c_total = 0.0
    u_total = 0.0
    for i in range(y.n_instances):
        candidates = np.where(used, -1.0, jac[i])
        j = int(np.argmax(candidates))
        if candidates[j] <= 0.0:
            u_total += size_y[i]
            continue
        used[j] = True
        c_total += inter[i, j]
        u_total += union[i, j]
    u_total += size_p[~used].sum()
    return float(c_total / u_total) if u_total > 0 else 0.0


def _side_dice(inter, size_a, size_b, jac) -> float:
    total = size_a.sum()
    score = 0.0
    for i in range(len(size_a)):
        j = int(np.argmax(jac[i]))
        if jac[i, j] <= 0.0:
            continue
        d = 2.0 * inter[i, j] / (size_a[i] + size_b[j])
        score += (size_a[i] / total) * d
    return score


def object_dice(y: InstanceMap, yhat: InstanceMap) -> float:
    """Area-weighted Dice of each instance against its best-Jaccard partner,
    averaged over the ground-truth and predicted sides."""
    _same_dims(y, yhat)
    if y.n_instances == 0 and yhat.n_instances == 0:
        return 1.0
    if y.n_instances == 0 or yhat.n_instances == 0:
        return 0.0
    inter, _, jac, size_y, size_p = _jaccard_table(y, yhat)
    gt_side = _side_dice(inter, size_y, size_p, jac)
    pred_side = _side_dice(inter.T, size_p, size_y, jac.T)
    return 0.5 * (gt_side + pred_side)


# ======================================================================
# Adapted inception score
# ======================================================================

def inception_score_from_probs(probs: np.ndarray) -> float:
    """exp(mean_x KL(q(x) || mean_x q(x))), with 0 log 0 = 0."""
    probs = np.asarray(probs, dtype=np.float64)
    marginal = probs.mean(axis=0, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(probs > 0, probs * np.log(probs / marginal), 0.0)
    return float(np.exp(terms.sum(axis=1).mean()))


def adapted_inception_score(gen_batch: np.ndarray, teachers: Sequence,
                            pi: Sequence[float], tau: float = 1.0) -> float:
    """Sum_k pi_k * IS_k, where IS_k scores the batch with teacher k."""
    gen_batch = np.asarray(gen_batch, dtype=np.float64)
    if gen_batch.ndim != 2 or gen_batch.shape[0] == 0:
        raise ValueError("adapted inception score needs a non-empty batch")
    if gen_batch.shape[0] < 2:
        raise ValueError("adapted inception score needs at least 2 samples")
    x = Tensor(gen_batch)
    score = 0.0
    for teacher, weight in zip(teachers, pi):
        q = softmax_tau(teacher(x), tau).values
        score += float(weight) * inception_score_from_probs(q)
    return score


# ======================================================================
# Plain-text grids
# ======================================================================

def read_grid(path: str) -> np.ndarray:
    """Read ``[P2] / W H / [maxval] / rows`` with '#' comments."""
    tokens = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            tokens.extend(line.split("#", 1)[0].split())
    if not tokens:
        raise DataFormatError(f"{path}: empty grid file")
    has_magic = tokens[0] == "P2"
    if has_magic:
        tokens = tokens[1:]
    try:
        width, height = int(tokens[0]), int(tokens[1])
        body = tokens[3:] if has_magic else tokens[2:]
        values = [int(t) for t in body]
    except (IndexError, ValueError) as e:
        raise DataFormatError(f"{path}: malformed grid ({e})") from e
    if width <= 0 or height <= 0 or len(values) != width * height:
        raise DataFormatError(
            f"{path}: expected {width}x{height} values, got {len(values)}")
    return np.asarray(values, dtype=np.int64).reshape(height, width)


def write_grid(grid: np.ndarray, path: str, magic: bool = False):
    grid = np.asarray(grid, dtype=np.int64)
    lines = []
    if magic:
        lines.append("P2")
    lines.append(f"{grid.shape[1]} {grid.shape[0]}")
    if magic:
        lines.append(str(max(int(grid.max()), 1)))
    lines.extend(" ".join(str(int(v)) for v in row) for row in grid)
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def read_mask(path: str) -> BinaryMask:
    return BinaryMask(read_grid(path) > 0)


def read_instance_map(path: str) -> InstanceMap:
    return InstanceMap(read_grid(path))
