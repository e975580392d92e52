"""
Supports, simplex vectors, empirical distributions, TV distance and the repair vector V
"""
from dataclasses import dataclass, field
from typing import Any, Dict, Hashable, Iterable, Sequence, Tuple

import numpy as np

from config import NEGATIVE_DUST, SIMPLEX_RENORM_TOL, ZERO_ENTRY_TOL
from errors import (
    DataError,
    DivisionBySupportHole,
    EmptyGroup,
    LengthMismatch,
    NegativeWeight,
    NotAProbabilityVector,
    PointOffSupport,
    SupportMismatch,
    ZeroTotalWeight,
)

Point = Tuple[float, ...]


def as_point(value: Any) -> Point:
    """Scalars become 1-tuples; sequences become float tuples."""
    if isinstance(value, (tuple, list, np.ndarray)):
        return tuple(float(v) for v in value)
    return (float(value),)


@dataclass(frozen=True)
class Support:
    """Ordered, duplicate-free discretisation points (lexicographic order)."""
    points: Tuple[Point, ...]
    _index: Dict[Point, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        points = tuple(sorted(as_point(p) for p in self.points))
        if not points:
            raise DataError("A support needs at least one point")
        dims = {len(p) for p in points}
        if len(dims) != 1:
            raise DataError(f"Support points have mixed dimensions: {sorted(dims)}")
        index = {p: i for i, p in enumerate(points)}
        if len(index) != len(points):
            raise DataError("Support points must be pairwise distinct")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "_index", index)

    @classmethod
    def from_values(cls, values: Iterable[Any]) -> "Support":
        """Build a support from observed values, dropping duplicates."""
        return cls(tuple(set(as_point(v) for v in values)))

    @classmethod
    def grid(cls, lo: int, hi: int) -> "Support":
        return cls(tuple((float(v),) for v in range(lo, hi + 1)))

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def dim(self) -> int:
        return len(self.points[0])

    @property
    def is_scalar(self) -> bool:
        return self.dim == 1

    def __len__(self) -> int:
        return self.size

    def index_of(self, point: Any) -> int:
        try:
            return self._index[as_point(point)]
        except KeyError:
            raise PointOffSupport(f"Point {point!r} is not on the support") from None

    def lookup(self, i: int) -> Point:
        return self.points[i]

    def indices_of(self, values: np.ndarray) -> np.ndarray:
        """Vectorised index lookup for an (n, d) or (n,) array of points."""
        arr = np.asarray(values, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.shape[1] != self.dim:
            raise PointOffSupport(f"Expected {self.dim}-dimensional points, got {arr.shape[1]}")
        out = np.empty(arr.shape[0], dtype=np.int64)
        for r, row in enumerate(map(tuple, arr.tolist())):
            i = self._index.get(row)
            if i is None:
                raise PointOffSupport(f"Row {r}: point {row!r} is not on the support")
            out[r] = i
        return out

    def as_array(self) -> np.ndarray:
        return np.asarray(self.points, dtype=float)

    def labels(self) -> Sequence[str]:
        return [format_point(p) for p in self.points]


def format_point(point: Point) -> str:
    if len(point) == 1:
        return f"{point[0]:.12g}"
    return "(" + ", ".join(f"{v:.12g}" for v in point) + ")"


def _frozen(values: np.ndarray) -> np.ndarray:
    values = np.array(values, dtype=float)
    values.setflags(write=False)
    return values


@dataclass(frozen=True)
class SimplexVector:
    values: np.ndarray
    support: Support

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))

    def __len__(self) -> int:
        return len(self.values)

    def same_support(self, other: "SimplexVector") -> bool:
        return self.support == other.support


def make_simplex(values: Sequence[float], support: Support) -> SimplexVector:
    """Validate a probability vector, clamping negative dust and small drift."""
    arr = np.asarray(values, dtype=float).ravel()
    if arr.shape[0] != support.size:
        raise LengthMismatch(f"Vector has {arr.shape[0]} entries, support has {support.size}")
    if not np.all(np.isfinite(arr)):
        raise NotAProbabilityVector("Vector has non-finite entries")
    if np.any(arr < -NEGATIVE_DUST):
        raise NotAProbabilityVector(f"Negative entry {arr.min():.3e}")
    arr = np.clip(arr, 0.0, None)
    total = arr.sum()
    if abs(total - 1.0) > SIMPLEX_RENORM_TOL:
        raise NotAProbabilityVector(f"Entries sum to {total:.12g}, not 1")
    return SimplexVector(arr / total, support)


def empirical_from_indices(indices: np.ndarray, weights: np.ndarray, support: Support) -> SimplexVector:
    """Weighted histogram over support indices (the array form of empirical_distribution)."""
    weights = np.asarray(weights, dtype=float)
    if np.any(weights < 0):
        raise NegativeWeight("Sample weights must be nonnegative")
    counts = np.bincount(np.asarray(indices, dtype=np.int64), weights=weights, minlength=support.size)
    total = counts.sum()
    if total <= 0:
        raise ZeroTotalWeight("Total sample weight is zero")
    return SimplexVector(counts / total, support)


def empirical_distribution(samples: Iterable[Tuple[Any, float]], support: Support) -> SimplexVector:
    samples = list(samples)
    idx = np.array([support.index_of(p) for p, _ in samples], dtype=np.int64)
    w = np.array([w for _, w in samples], dtype=float)
    return empirical_from_indices(idx, w, support)


def groupwise_from_indices(indices: np.ndarray, weights: np.ndarray, groups: np.ndarray,
                           support: Support) -> Dict[Hashable, SimplexVector]:
    indices = np.asarray(indices)
    weights = np.asarray(weights, dtype=float)
    groups = np.asarray(groups)
    out: Dict[Hashable, SimplexVector] = {}
    for g in sorted(set(groups.tolist()), key=str):
        mask = groups == g
        try:
            out[g] = empirical_from_indices(indices[mask], weights[mask], support)
        except ZeroTotalWeight:
            raise EmptyGroup(f"Group {g!r} has zero total weight") from None
    return out


def groupwise_empirical(samples: Iterable[Tuple[Any, float, Hashable]],
                        support: Support) -> Dict[Hashable, SimplexVector]:
    samples = list(samples)
    idx = np.array([support.index_of(p) for p, _, _ in samples], dtype=np.int64)
    w = np.array([w for _, w, _ in samples], dtype=float)
    g = np.array([s for _, _, s in samples], dtype=object)
    return groupwise_from_indices(idx, w, g, support)


def tv_distance(p: SimplexVector, q: SimplexVector) -> float:
    if not p.same_support(q):
        raise SupportMismatch("TV distance needs both vectors on the same support")
    return float(min(1.0, 0.5 * np.abs(p.values - q.values).sum()))


@dataclass(frozen=True)
class RepairVector:
    values: np.ndarray
    support: Support

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.support.size,):
            raise LengthMismatch(f"V has {values.size} entries, support has {self.support.size}")
        if not np.all(np.isfinite(values)):
            raise DataError("V must have finite entries")
        values[np.abs(values) < ZERO_ENTRY_TOL] = 0.0
        object.__setattr__(self, "values", _frozen(values))

    @property
    def active(self) -> np.ndarray:
        """Indices i with V_i != 0, ascending."""
        return np.flatnonzero(self.values)

    @property
    def is_zero(self) -> bool:
        return self.active.size == 0

    @classmethod
    def zeros(cls, support: Support) -> "RepairVector":
        return cls(np.zeros(support.size), support)


def repair_vector(px: SimplexVector, pxs0: SimplexVector, pxs1: SimplexVector) -> RepairVector:
    """V = (P^{X_s0} - P^{X_s1}) / P^X, zero where all three vanish."""
    if not (px.same_support(pxs0) and px.same_support(pxs1)):
        raise SupportMismatch("P^X and the group conditionals must share a support")
    diff = pxs0.values - pxs1.values
    holes = (px.values <= 0) & ((pxs0.values > 0) | (pxs1.values > 0))
    if np.any(holes):
        where = [px.support.lookup(i) for i in np.flatnonzero(holes)]
        raise DivisionBySupportHole(f"Group mass where P^X is zero at {where}")
    values = np.divide(diff, px.values, out=np.zeros_like(diff), where=px.values > 0)
    return RepairVector(values, px.support)
