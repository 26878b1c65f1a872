"""HTTP scoring service.

Serves the contract the engine's external reranker consumes:
POST /score {"pairs": [{"query", "candidate"}]} -> {"scores": [...]}.
"""

from __future__ import annotations

from contextlib import asynccontextmanager
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .model import load_artifact, score_pairs


class PairIn(BaseModel):
    query: str
    candidate: str


class ScoreRequest(BaseModel):
    pairs: list[PairIn]


class ScoreResponse(BaseModel):
    scores: list[float]


def create_app(model_path: str | Path | None = None) -> FastAPI:
    """Build the app; the model loads on startup so requests never race it."""

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        if model_path is not None:
            app.state.scorer = load_artifact(model_path)
        yield

    app = FastAPI(title="reranker-service", lifespan=lifespan)
    app.state.scorer = None

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request, exc):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    @app.get("/healthz")
    def healthz():
        return {"status": "ok" if app.state.scorer is not None else "loading"}

    @app.post("/score", response_model=ScoreResponse)
    def score(request: ScoreRequest):
        if app.state.scorer is None:
            raise HTTPException(status_code=503, detail="model is loading")
        pairs = [(pair.query, pair.candidate) for pair in request.pairs]
        return ScoreResponse(scores=score_pairs(app.state.scorer, pairs))

    return app
