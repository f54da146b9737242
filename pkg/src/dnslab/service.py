"""HTTP front-end: the task runner behind FastAPI."""
from __future__ import annotations

from typing import Any

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from . import __version__
from .tasks import TASKS, ExperimentConfig, TaskError, run


class Criterion(BaseModel):
    name: str
    passed: bool
    value: Any = None
    threshold: Any = None


class Report(BaseModel):
    task: str
    passed: bool
    criteria: list[Criterion]
    measurements: dict[str, Any]
    config: dict[str, Any]
    versions: dict[str, str]


class Health(BaseModel):
    status: str
    version: str


app = FastAPI(title="dnslab", version=__version__)


@app.get("/health", response_model=Health)
def health() -> Health:
    return Health(status="ok", version=__version__)


@app.get("/tasks", response_model=list[str])
def tasks() -> list[str]:
    return list(TASKS)


@app.post("/run", response_model=Report)
def run_task(config: ExperimentConfig) -> Report:
    # file outputs are a client concern
    config = config.model_copy(update={"out": None, "dump_ops": None, "csv": None})
    try:
        return Report(**run(config))
    except TaskError as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc
