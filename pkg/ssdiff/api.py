from pathlib import Path
from typing import Any

import yaml
from fastapi import FastAPI, HTTPException, Query

from .config import RUNS_ROOT
from .run_store import (
    CONFIG_NAME,
    list_runs,
    normalize_run_id,
    read_config_text,
    read_report,
    read_train_records,
    run_dir_for,
    summarize_run,
)
from .schemas import MetricsReport, RunSummary, TrainRecord

app = FastAPI()


def _runs_root() -> Path:
    return app.state.runs_root if hasattr(app.state, "runs_root") else RUNS_ROOT


def _existing_run(run_id: str) -> Path:
    run_dir = run_dir_for(run_id, _runs_root())
    if not (run_dir / CONFIG_NAME).exists():
        raise HTTPException(status_code=404, detail=f"run {normalize_run_id(run_id)!r} not found")
    return run_dir


@app.get("/")
def root() -> dict[str, Any]:
    return {
        "service": "ssdiff-reports",
        "status": "ok",
        "routes": {
            "runs": "/runs",
            "run": "/runs/{run_id}",
            "run_log": "/runs/{run_id}/log?limit=50",
            "run_report": "/runs/{run_id}/report",
            "docs": "/docs",
        },
        "runs_root": str(_runs_root()),
    }


@app.get("/health")
def health() -> dict[str, str]:
    return {"status": "ok"}


@app.get("/runs", response_model=list[RunSummary])
def runs() -> list[RunSummary]:
    return list_runs(_runs_root())


@app.get("/runs/{run_id}")
def run_detail(run_id: str) -> dict[str, Any]:
    run_dir = _existing_run(run_id)
    config = yaml.safe_load(read_config_text(run_dir) or "") or {}
    return {"summary": summarize_run(run_dir), "config": config}


@app.get("/runs/{run_id}/log", response_model=list[TrainRecord])
def run_log(run_id: str, limit: int = Query(default=50, ge=1, le=500)) -> list[TrainRecord]:
    run_dir = _existing_run(run_id)
    return [TrainRecord.model_validate(record) for record in read_train_records(run_dir, limit=limit)]


@app.get("/runs/{run_id}/report", response_model=MetricsReport)
def run_report(run_id: str) -> MetricsReport:
    report = read_report(_existing_run(run_id))
    if report is None:
        raise HTTPException(status_code=404, detail="run has no evaluation report yet")
    return report
