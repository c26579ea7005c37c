"""Request/response models for the experiment service."""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field


class SinkhornOptions(BaseModel):
    epsilon: float = 0.1
    maxIterations: int = 100
    tolerance: float = 1e-6
    logDomain: bool = True


class TrainOptions(BaseModel):
    epochs: int = 50
    learningRate: float = 1e-3
    batchSize: int = 32
    earlyStopPatience: int | None = 8
    validationFraction: float = 0.15
    dropoutRate: float = 0.3


class RunRequest(BaseModel):
    variant: Literal["individual", "concat", "ot", "mata"]
    sources: list[str] = Field(min_length=1, max_length=2)
    outputDir: str
    seed: int = 0
    folds: int = 5
    sinkhorn: SinkhornOptions = SinkhornOptions()
    train: TrainOptions = TrainOptions()


class CompareRequest(BaseModel):
    variants: list[Literal["individual", "concat", "ot", "mata"]]
    sources: list[str] = Field(min_length=2, max_length=2)
    outputDir: str
    seed: int = 0
    folds: int = 5
    sinkhorn: SinkhornOptions = SinkhornOptions()
    train: TrainOptions = TrainOptions()


class SynthRequest(BaseModel):
    classes: int = 4
    perClass: int = 100
    dim1: int = 64
    dim2: int = 64
    sigma: float = 1.0
    seed: int = 7
    outputDir: str
    merged1: list[list[int]] | None = None
    merged2: list[list[int]] | None = None


class InspectRequest(BaseModel):
    path: str


class ErrorBody(BaseModel):
    errorKind: Literal["config", "data", "training", "internal"]
    message: str
