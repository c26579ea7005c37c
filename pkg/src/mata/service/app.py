"""FastAPI service wrapping the experiment core.

Endpoints map one-to-one onto the CLI verbs; domain failures come back as
structured errors so clients can translate them into exit codes.
"""

from __future__ import annotations

from fastapi import FastAPI
from fastapi.responses import JSONResponse

from .. import experiments
from ..data import DataError
from ..harness import TrainingError
from .schemas import (
    CompareRequest,
    ErrorBody,
    InspectRequest,
    RunRequest,
    SynthRequest,
)

app = FastAPI(title="embedding-fusion experiments", version="0.1.0")


def _error(kind: str, message: str, status: int) -> JSONResponse:
    body = ErrorBody(errorKind=kind, message=" ".join(str(message).split()))
    return JSONResponse(status_code=status, content=body.model_dump())


@app.exception_handler(experiments.ConfigError)
async def _config_error(_request, exc):
    return _error("config", str(exc), 400)


@app.exception_handler(DataError)
async def _data_error(_request, exc):
    return _error("data", str(exc), 422)


@app.exception_handler(TrainingError)
async def _training_error(_request, exc):
    return _error("training", str(exc), 500)


@app.get("/health")
def health() -> dict:
    return {"status": "ok"}


@app.post("/synth")
def synth(req: SynthRequest) -> dict:
    return experiments.execute_synth(req.model_dump())


@app.post("/run")
def run(req: RunRequest) -> dict:
    return experiments.execute_run(req.model_dump())


@app.post("/compare")
def compare(req: CompareRequest) -> dict:
    return experiments.execute_compare(req.model_dump())


@app.post("/inspect")
def inspect(req: InspectRequest) -> dict:
    return experiments.execute_inspect(req.path)
