from typing import Any, Dict

import pandas as pd
from fastapi import APIRouter, HTTPException

from errors import RepairError
from metrics import disparate_impact, f1_scores, group_counts
from models import MetricsRequest, TVTableRequest
from pipeline import select_adjusted_features
from .repair_routes import http_error

router = APIRouter(prefix="/evaluation", tags=["evaluation"])


@router.post("/metrics", summary="Fairness and accuracy indices")
def compute_metrics(req: MetricsRequest) -> Dict[str, Any]:
    n = len(req.predictions)
    if len(req.groups) != n or (req.labels is not None and len(req.labels) != n):
        raise HTTPException(status_code=400, detail="predictions, groups and labels must have the same length")
    if req.sample_weight is not None and len(req.sample_weight) != n:
        raise HTTPException(status_code=400, detail="sample_weight must have one entry per prediction")

    out: Dict[str, Any] = {"disparate_impact": None, "f1_micro": None, "f1_macro": None, "f1_weighted": None}
    try:
        out["disparate_impact"] = disparate_impact(req.predictions, req.groups, req.sample_weight,
                                                   req.unprivileged_group)
    except RepairError as e:
        out["disparate_impact_error"] = f"{type(e).__name__}: {e}"

    if req.labels is not None:
        try:
            micro, macro, weighted = f1_scores(req.predictions, req.labels, req.groups, req.sample_weight,
                                               req.unprivileged_group)
            counts = group_counts(req.predictions, req.labels, req.groups, req.sample_weight,
                                  req.unprivileged_group)
        except RepairError as e:
            raise http_error(e)
        out.update(f1_micro=micro, f1_macro=macro, f1_weighted=weighted,
                   counts={str(g): c.model_dump() for g, c in counts.items()})
    return out


@router.post("/tv-table", summary="Group-wise TV distance per column")
def tv_table(req: TVTableRequest) -> Dict[str, Any]:
    frame = pd.DataFrame.from_records(req.rows)
    if frame.empty:
        raise HTTPException(status_code=400, detail="no rows provided")
    try:
        selected, table = select_adjusted_features(frame, req.group_column, req.threshold, req.columns,
                                                   req.unprivileged_group)
    except RepairError as e:
        raise http_error(e)
    return {
        "selected": selected,
        "table": [
            {"feature": r.feature, "tv": float(r.tv), "selected": bool(r.selected)}
            for r in table.itertuples(index=False)
        ],
        "threshold": req.threshold,
    }
