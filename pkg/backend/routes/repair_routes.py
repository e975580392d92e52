from fastapi import APIRouter, HTTPException

from errors import NumericalError, RepairError
from models import RepairResponse, RowsRepairRequest, SyntheticRepairRequest
from pipeline import RepairResult, dataset_from_records, run_repair

router = APIRouter(prefix="/repair", tags=["repair"])


# ---------- helpers ----------
def http_error(e: RepairError) -> HTTPException:
    """400 for bad input or configuration, 422 when the numerics fail."""
    status = 422 if isinstance(e, NumericalError) else 400
    return HTTPException(status_code=status, detail=f"{type(e).__name__}: {e}")


def to_response(method: str, result: RepairResult) -> RepairResponse:
    coupling = result.coupling
    table = result.distributions.astype(object).where(result.distributions.notna(), None)
    return RepairResponse(
        method=method,
        metrics=result.report.flat(),
        support=list(coupling.source.labels()),
        target_support=list(coupling.target.labels()),
        coupling=coupling.entries.tolist(),
        distributions=table.to_dict(orient="records"),
        projected_rows=len(result.projected),
    )


# ---------- routes ----------
@router.post("/synthetic", response_model=RepairResponse, summary="Repair a synthetic dataset")
def repair_synthetic(req: SyntheticRepairRequest):
    try:
        result = run_repair(req.spec, req.config, req.method)
    except RepairError as e:
        raise http_error(e)
    return to_response(req.method, result)


@router.post("/rows", response_model=RepairResponse, summary="Repair posted rows")
def repair_rows(req: RowsRepairRequest):
    try:
        data = dataset_from_records(req.rows, req.config)
        result = run_repair(data, req.config, req.method)
    except RepairError as e:
        raise http_error(e)
    return to_response(req.method, result)
