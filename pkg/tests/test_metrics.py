import itertools

import numpy as np
import pytest

from fediod.core import Tensor, softmax_tau
from fediod.errors import DataFormatError, ShapeError
from fediod.metrics import (
    BinaryMask,
    InstanceMap,
    adapted_inception_score,
    aji,
    dice,
    hd95,
    inception_score_from_probs,
    instances_from_mask,
    object_dice,
    read_grid,
    read_instance_map,
    read_mask,
    sens_spec,
    write_grid,
)
from fediod.nets import build


# ======================================================================
# Oracles
# ======================================================================

def _pixels(ids, i):
    return set(zip(*np.nonzero(ids == i)))


def _boundary_points(bits):
    h, w = bits.shape
    pts = []
    for r, c in itertools.product(range(h), range(w)):
        if not bits[r, c]:
            continue
        for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            rr, cc = r + dr, c + dc
            if not (0 <= rr < h and 0 <= cc < w) or not bits[rr, cc]:
                pts.append((r, c))
                break
    return pts


def _hd95_oracle(a, b):
    pa, pb = _boundary_points(a), _boundary_points(b)

    def directed(src, dst):
        return [min(np.hypot(r - rr, c - cc) for rr, cc in dst) for r, c in src]

    return max(np.percentile(directed(pa, pb), 95),
               np.percentile(directed(pb, pa), 95))


def _instances(ids):
    return [_pixels(ids, i) for i in range(1, int(ids.max()) + 1)]


def _aji_oracle(y, p):
    gt, pr = _instances(y), _instances(p)
    used = set()
    inter = union = 0
    for g in gt:
        best, pick = 0.0, None
        for j, s in enumerate(pr):
            if j in used:
                continue
            jac = len(g & s) / len(g | s)
            if jac > best:
                best, pick = jac, j
        if pick is None:
            union += len(g)
            continue
        used.add(pick)
        inter += len(g & pr[pick])
        union += len(g | pr[pick])
    union += sum(len(s) for j, s in enumerate(pr) if j not in used)
    return inter / union


def _object_dice_oracle(y, p):
    def side(a_sets, b_sets):
        total = sum(len(a) for a in a_sets)
        score = 0.0
        for a in a_sets:
            jacs = [len(a & b) / len(a | b) for b in b_sets]
            j = int(np.argmax(jacs))
            if jacs[j] > 0:
                b = b_sets[j]
                score += len(a) / total * 2 * len(a & b) / (len(a) + len(b))
        return score

    gt, pr = _instances(y), _instances(p)
    return 0.5 * (side(gt, pr) + side(pr, gt))


def _random_instances(rng, h, w, n):
    ids = rng.integers(0, n + 1, size=(h, w))
    present = np.unique(ids[ids > 0])
    out = np.zeros_like(ids)
    for new, old in enumerate(present, start=1):
        out[ids == old] = new
    return out


# ======================================================================
# Pixel-level
# ======================================================================

def test_dice_examples():
    a = BinaryMask(np.eye(4))
    assert dice(a, a) == 1.0
    assert dice(a, BinaryMask(np.fliplr(np.eye(4)) * (1 - np.eye(4)))) == 0.0
    y = np.zeros((4, 4)); y[0, :] = 1
    p = np.zeros((4, 4)); p[0, :2] = 1; p[1, :2] = 1
    assert dice(BinaryMask(y), BinaryMask(p)) == 0.5
    empty = BinaryMask(np.zeros((3, 3)))
    assert dice(empty, empty) == 1.0


def test_dice_dims_must_match():
    with pytest.raises(ShapeError):
        dice(BinaryMask(np.ones((2, 2))), BinaryMask(np.ones((2, 3))))


def test_sens_spec_examples():
    y = BinaryMask([[1, 1, 0, 0]])
    assert sens_spec(y, y) == (1.0, 1.0)
    assert sens_spec(y, BinaryMask([[1, 1, 1, 1]])) == (1.0, 0.0)
    assert sens_spec(y, BinaryMask([[1, 0, 1, 0]])) == (0.5, 0.5)
    assert sens_spec(BinaryMask([[1, 1]]), BinaryMask([[1, 0]])) == (0.5, 1.0)


def test_pixel_metrics_match_counting(rng):
    for _ in range(100):
        h, w = rng.integers(1, 17, size=2)
        y = rng.random((h, w)) < 0.4
        p = rng.random((h, w)) < 0.4
        tp = sum(1 for a, b in zip(y.ravel(), p.ravel()) if a and b)
        tn = sum(1 for a, b in zip(y.ravel(), p.ravel()) if not a and not b)
        ny, np_ = int(y.sum()), int(p.sum())
        expected = 1.0 if ny + np_ == 0 else 2 * tp / (ny + np_)
        assert dice(BinaryMask(y), BinaryMask(p)) == pytest.approx(expected, abs=1e-12)
        assert dice(BinaryMask(y), BinaryMask(p)) == dice(BinaryMask(p), BinaryMask(y))
        sens, spec = sens_spec(BinaryMask(y), BinaryMask(p))
        assert sens == pytest.approx(tp / ny if ny else 1.0)
        assert spec == pytest.approx(tn / (h * w - ny) if h * w - ny else 1.0)


def test_hd95_examples():
    a = np.zeros((8, 8)); a[2:5, 2:6] = 1
    assert hd95(BinaryMask(a), BinaryMask(a)) == 0.0
    p = np.zeros((5, 5)); p[2, 0] = 1
    q = np.zeros((5, 5)); q[2, 3] = 1
    assert hd95(BinaryMask(p), BinaryMask(q)) == pytest.approx(3.0)


def test_hd95_empty_mask():
    with pytest.raises(ValueError):
        hd95(BinaryMask(np.zeros((3, 3))), BinaryMask(np.ones((3, 3))))


def test_hd95_matches_all_pairs_oracle(rng):
    for _ in range(100):
        y = rng.random((16, 16)) < 0.2
        p = rng.random((16, 16)) < 0.2
        y[rng.integers(16), rng.integers(16)] = True
        p[rng.integers(16), rng.integers(16)] = True
        value = hd95(BinaryMask(y), BinaryMask(p))
        assert value == pytest.approx(_hd95_oracle(y, p), abs=1e-9)
        assert value == pytest.approx(hd95(BinaryMask(p), BinaryMask(y)), abs=1e-12)


def test_hd95_translation_invariant():
    a = np.zeros((12, 12)); a[1:4, 1:5] = 1
    b = np.zeros((12, 12)); b[2:6, 3:5] = 1
    shifted_a = np.roll(np.roll(a, 3, axis=0), 4, axis=1)
    shifted_b = np.roll(np.roll(b, 3, axis=0), 4, axis=1)
    assert hd95(BinaryMask(a), BinaryMask(b)) == pytest.approx(
        hd95(BinaryMask(shifted_a), BinaryMask(shifted_b)))


# ======================================================================
# Instance-level
# ======================================================================

def _hand_built():
    y = np.zeros((8, 8), dtype=int)
    y[0:4, 0:4] = 1
    y[4:8, 4:8] = 2
    p = np.zeros((8, 8), dtype=int)
    p[0:4, 0:2] = 1
    p[4:8, 2:8] = 2
    p[0:2, 6:8] = 3
    return InstanceMap(y), InstanceMap(p)


def test_aji_examples():
    y, p = _hand_built()
    assert aji(y, y) == 1.0
    assert aji(y, InstanceMap(np.zeros((8, 8)))) == 0.0
    assert aji(y, p) == pytest.approx(24 / 44)


def test_object_dice_examples():
    y, p = _hand_built()
    assert object_dice(y, y) == 1.0
    assert object_dice(y, InstanceMap(np.zeros((8, 8)))) == 0.0
    gt_side = 0.5 * (2 / 3) + 0.5 * 0.8
    pred_side = (8 / 36) * (2 / 3) + (24 / 36) * 0.8
    assert object_dice(y, p) == pytest.approx(0.5 * (gt_side + pred_side))


def test_aji_hand_built_matches_exhaustive_assignment():
    y, p = _hand_built()
    gt, pr = _instances(y.ids), _instances(p.ids)
    best = 0.0
    for perm in itertools.permutations(range(len(pr)), len(gt)):
        inter = sum(len(g & pr[j]) for g, j in zip(gt, perm))
        union = sum(len(g | pr[j]) for g, j in zip(gt, perm))
        union += sum(len(pr[j]) for j in range(len(pr)) if j not in perm)
        best = max(best, inter / union)
    assert aji(y, p) == pytest.approx(best)


def test_instance_metrics_match_oracles(rng):
    trials = 0
    while trials < 100:
        h, w = rng.integers(2, 17, size=2)
        y = _random_instances(rng, h, w, 3)
        p = _random_instances(rng, h, w, 3)
        if y.max() == 0 or p.max() == 0:
            continue
        trials += 1
        value = aji(InstanceMap(y), InstanceMap(p))
        assert value == pytest.approx(_aji_oracle(y, p), abs=1e-12)
        assert 0.0 <= value <= 1.0
        od = object_dice(InstanceMap(y), InstanceMap(p))
        assert od == pytest.approx(_object_dice_oracle(y, p), abs=1e-12)
        assert 0.0 <= od <= 1.0


def test_instance_map_validation():
    with pytest.raises(ShapeError):
        InstanceMap([[0, 2]])
    with pytest.raises(ShapeError):
        InstanceMap([[-1, 0]])


def test_instances_from_mask_four_connected():
    inst = instances_from_mask(BinaryMask([[1, 0, 0], [0, 1, 1], [0, 0, 0]]))
    assert inst.n_instances == 2
    np.testing.assert_array_equal(inst.areas(), [1, 2])


# ======================================================================
# Adapted inception score
# ======================================================================

def _is_oracle(probs):
    n, c = probs.shape
    marginal = [sum(probs[i, j] for i in range(n)) / n for j in range(c)]
    kl = 0.0
    for i in range(n):
        for j in range(c):
            if probs[i, j] > 0:
                kl += probs[i, j] * np.log(probs[i, j] / marginal[j])
    return np.exp(kl / n)


def test_inception_score_bounds(rng):
    assert inception_score_from_probs(np.full((5, 3), 1 / 3)) == pytest.approx(1.0)
    assert inception_score_from_probs(np.eye(4)) == pytest.approx(4.0)
    for _ in range(100):
        probs = rng.dirichlet(np.ones(4) * 0.5, size=6)
        value = inception_score_from_probs(probs)
        assert value == pytest.approx(_is_oracle(probs), abs=1e-10)
        assert 1.0 - 1e-12 <= value <= 4.0 + 1e-12


def test_adapted_inception_score(rng):
    constant = build("teacher", [2, 4, 3], seed=0)
    for p in constant.parameters():
        p.values[...] = 0.0
    batch = rng.normal(size=(10, 2))
    assert adapted_inception_score(batch, [constant], [1.0]) == pytest.approx(1.0)

    teachers = [build("teacher", [2, 4, 3], seed=s) for s in (1, 2)]
    expected = sum(w * _is_oracle(softmax_tau(t(Tensor(batch))).values)
                   for t, w in zip(teachers, (0.3, 0.7)))
    assert adapted_inception_score(batch, teachers, [0.3, 0.7]) == pytest.approx(
        expected, abs=1e-10)


def test_adapted_inception_score_needs_batch():
    teacher = build("teacher", [2, 3], seed=0)
    with pytest.raises(ValueError):
        adapted_inception_score(np.zeros((1, 2)), [teacher], [1.0])


# ======================================================================
# Grid files
# ======================================================================

def test_read_plain_and_p2(tmp_path):
    plain = tmp_path / "mask.txt"
    plain.write_text("# two by three\n3 2\n0 1 1\n1 0 0\n")
    mask = read_mask(str(plain))
    assert (mask.height, mask.width, mask.area) == (2, 3, 3)

    pgm = tmp_path / "inst.pgm"
    pgm.write_text("P2\n2 2\n2\n1 0 # first row\n0 2\n")
    inst = read_instance_map(str(pgm))
    assert inst.n_instances == 2


def test_write_grid_readable(tmp_path, rng):
    grid = rng.integers(0, 3, size=(4, 5))
    path = tmp_path / "g.pgm"
    write_grid(grid, str(path), magic=True)
    assert path.read_text().startswith("P2\n5 4\n")
    np.testing.assert_array_equal(read_grid(str(path)), grid)


@pytest.mark.parametrize("text", ["", "2 2\n1 0 1\n", "x y\n"])
def test_malformed_grid(tmp_path, text):
    path = tmp_path / "bad.txt"
    path.write_text(text)
    with pytest.raises(DataFormatError):
        read_grid(str(path))
