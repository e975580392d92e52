"""
Group-blind projection maps built from couplings, and the weighted datasets they act on
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import sparse

from config import PRUNE_WEIGHT
from distributions import SimplexVector, Support, as_point
from errors import (
    EmptyDataset,
    MarginalMismatch,
    NegativeWeight,
    NonFiniteCoupling,
    SupportMismatch,
    UnknownColumn,
    UnreachableSourcePoint,
    ZeroTotalWeight,
)
from transport_core import Coupling

logger = logging.getLogger(__name__)

WEIGHT = "weight"
SOURCE_ROW = "source_row"


@dataclass(frozen=True)
class WeightedDataset:
    """Rows (x, u, s, y, score, w) held in a DataFrame.

    `adjusted` names the columns forming x; every other non-bookkeeping column is
    neutral (u). `source_row` records which original sample a row came from.
    """
    frame: pd.DataFrame
    adjusted: Tuple[str, ...]
    group: Optional[str] = None
    label: Optional[str] = None
    score: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "adjusted", tuple(self.adjusted))
        if not self.adjusted:
            raise UnknownColumn("At least one adjusted column is required")
        named = [*self.adjusted, *(c for c in (self.group, self.label, self.score) if c)]
        missing = [c for c in named if c not in self.frame.columns]
        if missing:
            raise UnknownColumn(f"Columns not in dataset: {missing}")
        frame = self.frame
        if WEIGHT not in frame.columns or SOURCE_ROW not in frame.columns:
            frame = frame.copy()
            if WEIGHT not in frame.columns:
                frame[WEIGHT] = 1.0
            if SOURCE_ROW not in frame.columns:
                frame[SOURCE_ROW] = np.arange(len(frame), dtype=np.int64)
            object.__setattr__(self, "frame", frame)
        if len(frame) == 0:
            raise EmptyDataset("Dataset has no rows")
        weights = frame[WEIGHT].to_numpy(dtype=float)
        if np.any(weights < 0):
            raise NegativeWeight("Row weights must be nonnegative")
        if weights.sum() <= 0:
            raise ZeroTotalWeight("Dataset has zero total weight")

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def neutral(self) -> Tuple[str, ...]:
        reserved = {*self.adjusted, self.group, self.label, self.score, WEIGHT, SOURCE_ROW}
        return tuple(c for c in self.frame.columns if c not in reserved)

    @property
    def weights(self) -> np.ndarray:
        return self.frame[WEIGHT].to_numpy(dtype=float)

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    @property
    def groups(self) -> Optional[np.ndarray]:
        return None if self.group is None else self.frame[self.group].to_numpy()

    def points(self) -> np.ndarray:
        return self.frame[list(self.adjusted)].to_numpy(dtype=float)

    def indices(self, support: Support) -> np.ndarray:
        return support.indices_of(self.points())

    def replace(self, frame: pd.DataFrame) -> "WeightedDataset":
        return WeightedDataset(frame, self.adjusted, self.group, self.label, self.score)

    def without_group(self) -> "WeightedDataset":
        if self.group is None:
            return self
        frame = self.frame.drop(columns=[self.group])
        return WeightedDataset(frame, self.adjusted, None, self.label, self.score)

    def subset(self, mask: np.ndarray) -> "WeightedDataset":
        return self.replace(self.frame.loc[np.asarray(mask, dtype=bool)].reset_index(drop=True))


@dataclass(frozen=True)
class ProjectionMap:
    weights: np.ndarray
    source: Support
    target: Support
    reachable: np.ndarray


def build_map(gamma: Coupling, px: SimplexVector, tol: float = 1e-6) -> ProjectionMap:
    """w_ij = gamma_ij / P^X_i; rows with P^X_i = 0 are unreachable."""
    if gamma.source != px.support:
        raise SupportMismatch("Coupling rows and P^X must share the source support")
    if not np.all(np.isfinite(gamma.entries)):
        raise NonFiniteCoupling("Coupling has non-finite entries")
    p = px.values
    gap = float(np.abs(gamma.row_sums - p).max())
    if not gap <= tol:
        raise MarginalMismatch(f"Coupling row sums differ from P^X by {gap:.3e}")
    reachable = p > 0
    w = np.zeros_like(gamma.entries)
    w[reachable] = gamma.entries[reachable] / p[reachable, None]
    sums = w[reachable].sum(axis=1)
    w[reachable] = w[reachable] / sums[:, None]
    return ProjectionMap(w, gamma.source, gamma.target, reachable)


def identity_map(px: SimplexVector) -> ProjectionMap:
    return build_map(Coupling(np.diag(px.values), px.support, px.support), px)


def _row_normalised(gamma: Coupling, p: SimplexVector) -> ProjectionMap:
    rows = gamma.row_sums
    reachable = (p.values > 0) & (rows > 0)
    w = np.zeros_like(gamma.entries)
    w[reachable] = gamma.entries[reachable] / rows[reachable, None]
    return ProjectionMap(w, gamma.source, gamma.target, reachable)


def group_maps(to_b0: Coupling, to_b1: Coupling, p0: SimplexVector, p1: SimplexVector) -> dict:
    """Per-group maps of the barycentre baseline, keyed 0 and 1.

    The second marginal of an entropic barycentre coupling is only met up to the
    solver residual, so rows are normalised without the build_map marginal check.
    """
    if to_b0.source != p0.support or to_b1.source != p1.support:
        raise SupportMismatch("Group couplings and group conditionals must share the source support")
    return {0: _row_normalised(to_b0, p0), 1: _row_normalised(to_b1, p1)}


def _pruned_csr(weights: np.ndarray) -> sparse.csr_matrix:
    w = np.where(weights >= PRUNE_WEIGHT, weights, 0.0)
    sums = w.sum(axis=1)
    w = np.divide(w, sums[:, None], out=np.zeros_like(w), where=sums[:, None] > 0)
    csr = sparse.csr_matrix(w)
    csr.sort_indices()
    return csr


def _expand(csr: sparse.csr_matrix, idx: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(input row, target index, split weight) triples in input order, targets ascending."""
    starts = csr.indptr[idx]
    counts = csr.indptr[idx + 1] - starts
    rows = np.repeat(np.arange(idx.size), counts)
    offsets = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    pos = np.repeat(starts, counts) + offsets
    return rows, csr.indices[pos], csr.data[pos]


def apply_map(pmap: ProjectionMap, data: WeightedDataset) -> WeightedDataset:
    """Split every row (x, u, s, y, w) into {(j, u, s, y, w * w_xj)}.

    Only x is consulted; group, label, score and neutral columns are copied.
    """
    idx = data.indices(pmap.source)
    unreachable = ~pmap.reachable[idx]
    if np.any(unreachable):
        first = int(np.flatnonzero(unreachable)[0])
        raise UnreachableSourcePoint(
            f"Row {first} sits at {pmap.source.lookup(idx[first])}, which has no source mass"
        )
    rows, targets, split = _expand(_pruned_csr(pmap.weights), idx)
    frame = data.frame.iloc[rows].reset_index(drop=True)
    frame[list(data.adjusted)] = pmap.target.as_array()[targets]
    frame[WEIGHT] = frame[WEIGHT].to_numpy(dtype=float) * split
    logger.debug("Projected %d rows into %d weighted rows", len(data), len(frame))
    return data.replace(frame)


def apply_group_maps(maps: dict, data: WeightedDataset) -> WeightedDataset:
    """Project each group with its own map (the group-aware barycentre baseline)."""
    groups = data.groups
    if groups is None:
        raise UnknownColumn("Group-wise projection needs a group column")
    parts = []
    for g, pmap in maps.items():
        mask = groups == g
        if mask.any():
            parts.append(apply_map(pmap, data.subset(mask)).frame)
    frame = pd.concat(parts, ignore_index=True)
    frame = frame.sort_values(SOURCE_ROW, kind="stable").reset_index(drop=True)
    return data.replace(frame)


def tuple_support(data: WeightedDataset, columns: Optional[Sequence[str]] = None) -> Support:
    """Distinct observed tuples of the given columns, lexicographically ordered."""
    columns = list(columns or data.adjusted)
    missing = [c for c in columns if c not in data.frame.columns]
    if missing:
        raise UnknownColumn(f"Columns not in dataset: {missing}")
    values = data.frame[columns].drop_duplicates().to_numpy(dtype=float)
    return Support(tuple(as_point(v) for v in values))


def projected_marginal(gamma: Coupling, px: SimplexVector, pxs: SimplexVector) -> np.ndarray:
    """gamma' (P^{X_s} / P^X): the group conditional after projection."""
    ratio = np.divide(pxs.values, px.values, out=np.zeros_like(pxs.values), where=px.values > 0)
    return gamma.entries.T @ ratio
