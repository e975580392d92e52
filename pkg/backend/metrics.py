"""
Fairness and accuracy indices, and the weighted-score threshold classifier
"""
import logging
from typing import Dict, Hashable, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from sklearn.metrics import confusion_matrix

from distributions import Support, groupwise_from_indices, tv_distance
from errors import EmptyGroup, EmptySample, LengthMismatch, ZeroPrivilegedPositiveRate
from projection import SOURCE_ROW, WEIGHT, WeightedDataset

logger = logging.getLogger(__name__)


class GroupCounts(BaseModel):
    tp: float = 0.0
    fp: float = 0.0
    fn: float = 0.0
    tn: float = 0.0


class MetricsReport(BaseModel):
    f1_micro: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    f1_macro: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    f1_weighted: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    disparate_impact: Optional[float] = Field(default=None, ge=0.0)
    swise_tv: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    iterations: int = 0
    stop_reason: Optional[str] = None
    counts: Dict[str, GroupCounts] = Field(default_factory=dict)

    def flat(self) -> Dict[str, object]:
        """The flat JSON object written to metrics.json."""
        return self.model_dump(exclude={"counts"})


# ---------- helpers ----------
def split_groups(groups: Sequence[Hashable], unprivileged: Optional[Hashable] = None) -> Tuple[Hashable, Hashable]:
    """(s0, s1): the unprivileged group first, by default the smallest label."""
    values = sorted(set(pd.Series(groups).dropna().tolist()), key=str)
    if unprivileged is not None:
        # matched as text so "0" from a config file finds the integer tag 0
        chosen = [v for v in values if str(v) == str(unprivileged)]
        if not chosen:
            raise EmptyGroup(f"Unprivileged group {unprivileged!r} has no samples")
        values = [chosen[0], *(v for v in values if v != chosen[0])]
    if len(values) != 2:
        raise EmptyGroup(f"Expected exactly two groups, found {values}")
    return values[0], values[1]


def _check_lengths(*arrays):
    sizes = {len(a) for a in arrays}
    if len(sizes) > 1:
        raise LengthMismatch(f"Inputs have different lengths: {sorted(sizes)}")


def _f1(tp: float, fp: float, fn: float) -> float:
    den = 2 * tp + fp + fn
    # a group with no positives and none predicted is scored as perfect
    return 1.0 if den == 0 else 2 * tp / den


# ---------- operations ----------
def threshold_classify(grouped_scores: Sequence[Sequence[Tuple[float, float]]], threshold: float) -> np.ndarray:
    """1 iff sum(w * score) over a sample's split rows reaches the threshold.

    The weights are the split fractions of the sample (a projection map row), so
    they are used as given rather than renormalised.
    """
    preds = np.zeros(len(grouped_scores), dtype=np.int64)
    for n, rows in enumerate(grouped_scores):
        arr = np.asarray(rows, dtype=float).reshape(-1, 2)
        total = arr[:, 0].sum()
        if arr.size == 0 or total <= 0:
            raise EmptySample(f"Sample {n} has no positive weight")
        preds[n] = int((arr[:, 0] * arr[:, 1]).sum() >= threshold)
    return preds


def classify_projected(frame: pd.DataFrame, score: str, threshold: float) -> pd.Series:
    """threshold_classify over a projected frame, indexed by source row.

    Row weights carry the sample weight times the split fraction; dividing by the
    source row's total turns them back into split fractions first.
    """
    w = frame[WEIGHT].to_numpy(dtype=float)
    sums = pd.DataFrame({
        SOURCE_ROW: frame[SOURCE_ROW].to_numpy(),
        "w": w,
        "ws": w * frame[score].to_numpy(dtype=float),
    }).groupby(SOURCE_ROW, sort=True).sum()
    if np.any(sums["w"].to_numpy() <= 0):
        raise EmptySample("A source sample has no positive weight after projection")
    return ((sums["ws"] / sums["w"]) >= threshold).astype(np.int64)


def group_counts(predictions, labels, groups, sample_weight=None,
                 unprivileged: Optional[Hashable] = None) -> Dict[Hashable, GroupCounts]:
    predictions, labels, groups = np.asarray(predictions), np.asarray(labels), np.asarray(groups)
    _check_lengths(predictions, labels, groups)
    weights = None if sample_weight is None else np.asarray(sample_weight, dtype=float)
    out = {}
    for g in split_groups(groups, unprivileged):
        mask = groups == g
        tn, fp, fn, tp = confusion_matrix(
            labels[mask], predictions[mask], labels=[0, 1],
            sample_weight=None if weights is None else weights[mask],
        ).ravel()
        out[g] = GroupCounts(tp=float(tp), fp=float(fp), fn=float(fn), tn=float(tn))
    return out


def f1_scores(predictions, labels, groups, sample_weight=None,
              unprivileged: Optional[Hashable] = None) -> Tuple[float, float, float]:
    """(micro, macro, weighted) F1 over the per-group confusion counts."""
    groups_arr = np.asarray(groups)
    _check_lengths(predictions, labels, groups_arr)
    values = sorted(set(groups_arr.tolist()), key=str)
    if len(values) == 1:
        counts = {}
        predictions, labels = np.asarray(predictions), np.asarray(labels)
        tn, fp, fn, tp = confusion_matrix(labels, predictions, labels=[0, 1], sample_weight=sample_weight).ravel()
        counts[values[0]] = GroupCounts(tp=float(tp), fp=float(fp), fn=float(fn), tn=float(tn))
    else:
        counts = group_counts(predictions, labels, groups_arr, sample_weight, unprivileged)
    weights = np.ones(len(groups_arr)) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    total = weights.sum()
    micro_num = sum(2 * c.tp for c in counts.values())
    micro_den = sum(2 * c.tp + c.fp + c.fn for c in counts.values())
    micro = 1.0 if micro_den == 0 else micro_num / micro_den
    per_group = {g: _f1(c.tp, c.fp, c.fn) for g, c in counts.items()}
    macro = sum(per_group.values()) / len(per_group)
    weighted = sum(weights[groups_arr == g].sum() / total * f for g, f in per_group.items())
    return float(micro), float(macro), float(weighted)


def disparate_impact(predictions, groups, sample_weight=None, unprivileged: Optional[Hashable] = None) -> float:
    """P(Y_hat = 1 | s0) / P(Y_hat = 1 | s1)."""
    predictions, groups = np.asarray(predictions, dtype=float), np.asarray(groups)
    _check_lengths(predictions, groups)
    weights = np.ones(len(groups)) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    s0, s1 = split_groups(groups, unprivileged)
    rates = []
    for g in (s0, s1):
        mask = groups == g
        total = weights[mask].sum()
        if total <= 0:
            raise EmptyGroup(f"Group {g!r} has no samples")
        rates.append((weights[mask] * predictions[mask]).sum() / total)
    if rates[1] <= 0:
        raise ZeroPrivilegedPositiveRate(f"Group {s1!r} has no positive predictions")
    return float(rates[0] / rates[1])


def swise_tv(projected: WeightedDataset, support: Support, group: Optional[str] = None,
             unprivileged: Optional[Hashable] = None) -> float:
    """TV distance between the two group-wise weighted empiricals of x."""
    column = group or projected.group
    if column is None:
        raise EmptyGroup("S-wise TV needs a group column")
    groups = projected.frame[column].to_numpy()
    s0, s1 = split_groups(groups, unprivileged)
    dists = groupwise_from_indices(projected.indices(support), projected.weights, groups, support)
    return tv_distance(dists[s0], dists[s1])


def evaluate(projected: WeightedDataset, support: Support, predictions: Optional[pd.Series] = None,
             original: Optional[WeightedDataset] = None, unprivileged: Optional[Hashable] = None) -> MetricsReport:
    """MetricsReport for a projected dataset.

    `predictions` are per source row; labels and groups are read from `original`
    (defaults to the projected rows' first occurrence per source row).
    """
    report = MetricsReport()
    if projected.group is None:
        return report
    report.swise_tv = swise_tv(projected, support, unprivileged=unprivileged)
    if predictions is None:
        return report
    base = original.frame if original is not None else projected.frame.drop_duplicates(SOURCE_ROW)
    base = base.set_index(SOURCE_ROW).loc[predictions.index]
    groups = base[projected.group].to_numpy()
    preds = predictions.to_numpy()
    try:
        report.disparate_impact = disparate_impact(preds, groups, unprivileged=unprivileged)
    except ZeroPrivilegedPositiveRate as e:
        logger.warning("Disparate impact undefined: %s", e)
    if projected.label is not None:
        labels = base[projected.label].to_numpy(dtype=np.int64)
        report.f1_micro, report.f1_macro, report.f1_weighted = f1_scores(preds, labels, groups,
                                                                          unprivileged=unprivileged)
        report.counts = {str(g): c for g, c in group_counts(preds, labels, groups,
                                                            unprivileged=unprivileged).items()}
    return report
