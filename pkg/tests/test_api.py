import pytest
from fastapi.testclient import TestClient

from ssdiff.api import app
from ssdiff.metrics import build_report
from ssdiff.run_config import dump_run_config, load_run_config
from ssdiff.run_store import append_train_record, write_report


@pytest.fixture
def client(tmp_path):
    app.state.runs_root = tmp_path
    try:
        yield TestClient(app)
    finally:
        del app.state.runs_root


@pytest.fixture
def finished_run(tmp_path):
    run_dir = tmp_path / "v4-run"
    run_dir.mkdir()
    dump_run_config(load_run_config(None, ["network.variant=V4"]), run_dir / "config.yaml")
    for iteration in range(1, 4):
        append_train_record(run_dir, iteration, 1.0 / iteration, 1e-3, "joint")
    write_report(run_dir, build_report([{"SAM": 2.0, "ERGAS": 1.5, "Q2n": 0.9, "SCC": 0.95}], "reduced"))
    return run_dir


def test_root_and_health(client):
    body = client.get("/").json()
    assert body["service"] == "ssdiff-reports"
    assert "runs" in body["routes"]
    assert client.get("/health").json() == {"status": "ok"}


def test_lists_only_directories_with_a_config(client, finished_run, tmp_path):
    (tmp_path / "scratch").mkdir()
    runs = client.get("/runs").json()
    assert [run["run_id"] for run in runs] == ["v4-run"]
    assert runs[0]["variant"] == "V4"
    assert runs[0]["last_iteration"] == 3
    assert runs[0]["has_report"] is True


def test_run_detail_carries_config(client, finished_run):
    body = client.get("/runs/v4-run").json()
    assert body["summary"]["run_id"] == "v4-run"
    assert body["config"]["network"]["variant"] == "V4"


def test_log_limit(client, finished_run):
    records = client.get("/runs/v4-run/log", params={"limit": 2}).json()
    assert [record["iteration"] for record in records] == [2, 3]
    assert client.get("/runs/v4-run/log", params={"limit": 0}).status_code == 422


def test_report(client, finished_run):
    report = client.get("/runs/v4-run/report").json()
    assert report["resolution_mode"] == "reduced"
    assert report["summary"]["SAM"][0] == pytest.approx(2.0)


def test_unknown_run_and_missing_report(client, finished_run):
    assert client.get("/runs/nope").status_code == 404
    assert client.get("/runs/nope/log").status_code == 404
    (finished_run / "eval" / "report.json").unlink()
    assert client.get("/runs/v4-run/report").status_code == 404
