import pytest
from fastapi.testclient import TestClient

from errors import MissingColumn, RootNotBracketed
from main import app
from routes.repair_routes import http_error

client = TestClient(app)

ROWS = [
    {"x": 0, "s": 0, "y": 1},
    {"x": 0, "s": 1, "y": 0},
    {"x": 1, "s": 1, "y": 1},
    {"x": 1, "s": 0, "y": 1},
    {"x": 1, "s": 0, "y": 0},
    {"x": 2, "s": 1, "y": 0},
]


def test_health_check():
    response = client.get("/")
    assert response.status_code == 200
    assert response.json()["status"] == "healthy"


def test_repair_synthetic():
    payload = {"spec": {"samples": 500, "seed": 1}, "config": {"iterations": 60}}
    response = client.post("/repair/synthetic", json=payload)
    assert response.status_code == 200
    body = response.json()
    assert body["method"] == "dykstra"
    assert len(body["support"]) == 41
    assert len(body["coupling"]) == 41 and len(body["coupling"][0]) == 41
    assert len(body["distributions"]) == 41
    assert body["projected_rows"] >= 500
    assert 0.0 <= body["metrics"]["swise_tv"] <= 1.0


def test_repair_synthetic_identity():
    response = client.post("/repair/synthetic", json={"spec": {"samples": 200}, "method": "none"})
    assert response.status_code == 200
    body = response.json()
    assert body["metrics"]["stop_reason"] == "NoSolve"
    assert body["projected_rows"] == 200


def test_repair_rows():
    payload = {"rows": ROWS, "config": {"lambda": 0.0, "iterations": 90}}
    response = client.post("/repair/rows", json=payload)
    assert response.status_code == 200
    body = response.json()
    assert body["support"] == ["0", "1", "2"]
    assert sum(map(sum, body["coupling"])) == pytest.approx(1.0, abs=1e-3)
    assert body["metrics"]["swise_tv"] < 0.5


def test_repair_rows_missing_column():
    response = client.post("/repair/rows", json={"rows": [{"x": 1, "s": 0}]})
    assert response.status_code == 400
    assert response.json()["detail"].startswith("MissingColumn")


@pytest.mark.parametrize("payload", [
    {"rows": []},
    {"rows": ROWS, "config": {"unknown_setting": 1}},
    {"rows": ROWS, "config": {"epsilon": 0}},
    {"rows": ROWS, "method": "magic"},
])
def test_repair_rows_rejects_invalid_payloads(payload):
    assert client.post("/repair/rows", json=payload).status_code == 422


def test_http_error_status():
    assert http_error(MissingColumn("y")).status_code == 400
    assert http_error(RootNotBracketed("no root")).status_code == 422


def test_metrics_endpoint():
    payload = {"predictions": [1, 0, 1, 1], "groups": [0, 0, 1, 1], "labels": [1, 0, 1, 0]}
    body = client.post("/evaluation/metrics", json=payload).json()
    assert body["disparate_impact"] == pytest.approx(0.5)
    assert body["f1_macro"] == pytest.approx((1.0 + 2 / 3) / 2)
    assert body["counts"]["1"] == {"tp": 1.0, "fp": 1.0, "fn": 0.0, "tn": 0.0}


def test_metrics_endpoint_undefined_disparate_impact():
    body = client.post("/evaluation/metrics", json={"predictions": [1, 0], "groups": ["a", "b"]}).json()
    assert body["disparate_impact"] is None
    assert body["disparate_impact_error"].startswith("ZeroPrivilegedPositiveRate")


def test_metrics_endpoint_length_mismatch():
    response = client.post("/evaluation/metrics", json={"predictions": [1, 0], "groups": [0]})
    assert response.status_code == 400


def test_tv_table_endpoint():
    payload = {"rows": ROWS, "group_column": "s", "columns": ["x"], "threshold": 0.08}
    body = client.post("/evaluation/tv-table", json=payload).json()
    # group 0 sits at (0, 1, 1), group 1 at (0, 1, 2)
    assert body["table"] == [{"feature": "x", "tv": pytest.approx(1 / 3), "selected": True}]
    assert body["selected"] == ["x"]


def test_tv_table_unknown_group():
    response = client.post("/evaluation/tv-table", json={"rows": ROWS, "group_column": "race"})
    assert response.status_code == 400
