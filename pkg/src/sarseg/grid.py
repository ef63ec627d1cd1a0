"""Grid containers, 8-connected cliques and label-field utilities.

Pixels are indexed row-major, ``index = row * width + col``. Labels are
1-based at every public interface.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment


@dataclass(frozen=True)
class IntensityGrid:
    """Nonnegative intensities stored as an (height, width) float array."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, copy=True)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"intensity grid must be a non-empty 2-D array, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("intensity grid contains non-finite values")
        if np.any(v < 0):
            raise ValueError("intensity grid contains negative values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def flat(self) -> np.ndarray:
        return self.values.ravel()


@dataclass(frozen=True)
class LabelField:
    """Labels in ``1..num_classes`` stored as an (height, width) int array."""

    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        lab = np.array(self.labels, dtype=np.int64, copy=True)
        if lab.ndim != 2 or lab.shape[0] < 1 or lab.shape[1] < 1:
            raise ValueError(f"label field must be a non-empty 2-D array, got shape {lab.shape}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if lab.min() < 1 or lab.max() > self.num_classes:
            raise ValueError(f"labels must lie in [1, {self.num_classes}]")
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)

    @classmethod
    def from_zero_based(cls, labels0, num_classes: int, shape=None) -> "LabelField":
        arr = np.asarray(labels0, dtype=np.int64) + 1
        if shape is not None:
            arr = arr.reshape(shape)
        return cls(arr, num_classes)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    @property
    def size(self) -> int:
        return self.labels.size

    def zero_based(self) -> np.ndarray:
        """Flat 0-based label vector, the representation solvers work on."""
        return self.labels.ravel() - 1

    def __eq__(self, other):
        if not isinstance(other, LabelField):
            return NotImplemented
        return self.num_classes == other.num_classes and np.array_equal(self.labels, other.labels)

    __hash__ = None


@dataclass(frozen=True)
class CliqueSet:
    """Pairwise cliques ``(i, j)`` with ``i > j`` on the 8-connected lattice.

    Ordered as all horizontal pairs, then vertical, then the two diagonals.
    """

    width: int
    height: int
    i: np.ndarray
    j: np.ndarray

    def __len__(self):
        return len(self.i)

    @property
    def num_pixels(self) -> int:
        return self.width * self.height

    def pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.i.tolist(), self.j.tolist()))


def expected_clique_count(width: int, height: int) -> int:
    return (width - 1) * height + width * (height - 1) + 2 * (width - 1) * (height - 1)


def neighbors(p: int, width: int, height: int) -> list[int]:
    """In-bounds 8-neighbors of pixel ``p``, in raster order."""
    if not 0 <= p < width * height:
        raise IndexError(f"pixel index {p} out of range for {width}x{height} grid")
    r, c = divmod(p, width)
    out = []
    for dr, dc in itertools.product((-1, 0, 1), repeat=2):
        if dr == 0 and dc == 0:
            continue
        rr, cc = r + dr, c + dc
        if 0 <= rr < height and 0 <= cc < width:
            out.append(rr * width + cc)
    return out


def build_cliques(width: int, height: int) -> CliqueSet:
    if width < 1 or height < 1:
        raise ValueError("grid dimensions must be >= 1")
    idx = np.arange(width * height, dtype=np.int64).reshape(height, width)
    parts_i, parts_j = [], []
    # (lower-index pixel block, higher-index pixel block)
    for lo, hi in (
        (idx[:, :-1], idx[:, 1:]),      # horizontal
        (idx[:-1, :], idx[1:, :]),      # vertical
        (idx[:-1, :-1], idx[1:, 1:]),   # diagonal
        (idx[:-1, 1:], idx[1:, :-1]),   # anti-diagonal
    ):
        parts_j.append(lo.ravel())
        parts_i.append(hi.ravel())
    i = np.concatenate(parts_i)
    j = np.concatenate(parts_j)
    i.setflags(write=False)
    j.setflags(write=False)
    return CliqueSet(width, height, i, j)


def cliques_for(field) -> CliqueSet:
    """Clique set matching the dimensions of a grid or label field."""
    return build_cliques(field.width, field.height)


def neighbor_counts(labels0: np.ndarray, num_classes: int) -> np.ndarray:
    """Per-pixel count of 8-neighbors carrying each label.

    ``labels0`` is a 0-based (height, width) array; returns (height, width, c).
    """
    h, w = labels0.shape
    onehot = np.zeros((h + 2, w + 2, num_classes), dtype=np.int64)
    onehot[1:-1, 1:-1][np.arange(h)[:, None], np.arange(w)[None, :], labels0] = 1
    out = np.zeros((h, w, num_classes), dtype=np.int64)
    for dr, dc in itertools.product((-1, 0, 1), repeat=2):
        if dr == 0 and dc == 0:
            continue
        out += onehot[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]
    return out


def overall_accuracy(estimate: LabelField, truth: LabelField) -> float:
    """Fraction of pixels whose label equals the ground truth."""
    if estimate.shape != truth.shape:
        raise ValueError(f"dimension mismatch: {estimate.shape} vs {truth.shape}")
    if estimate.num_classes != truth.num_classes:
        raise ValueError("class count mismatch")
    return float(np.mean(estimate.labels == truth.labels))


def permutation_accuracy(estimate: LabelField, truth: LabelField) -> tuple[float, tuple[int, ...]]:
    """Best OA over all relabelings of ``estimate``; returns (oa, mapping).

    ``mapping[k-1]`` is the truth label assigned to estimated label ``k``.
    """
    if estimate.shape != truth.shape:
        raise ValueError(f"dimension mismatch: {estimate.shape} vs {truth.shape}")
    c = estimate.num_classes
    est = estimate.labels.ravel() - 1
    tru = truth.labels.ravel() - 1
    confusion = np.zeros((c, c), dtype=np.int64)
    np.add.at(confusion, (est, tru), 1)
    rows, cols = linear_sum_assignment(confusion, maximize=True)
    mapping = np.empty(c, dtype=np.int64)
    mapping[rows] = cols
    return float(confusion[rows, cols].sum() / est.size), tuple(int(m) + 1 for m in mapping)
