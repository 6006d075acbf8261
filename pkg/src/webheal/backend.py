"""HTTP service over the error store.

POST /errors          structured error report for one page load
GET  /errors?url=...  known errors whose page or failing resource matches
POST /activations     a strategy's self-report that its rewrite executed
GET  /stats           effectiveness aggregates as JSON
GET  /stats/summary   one developer-readable sentence per aggregate
POST /purge           operator reset
GET  /health          liveness and store counters
"""

from __future__ import annotations

from typing import Optional

from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import PlainTextResponse
from pydantic import BaseModel, Field, field_validator

from .model import (
    ErrorType,
    FailurePoint,
    JsError,
    StrategyActivation,
    StrategyKind,
    is_page_uuid,
)
from .store import BackendStore, StoreError

__all__ = ["build_backend_app"]


class FailurePointIn(BaseModel):
    resource_url: Optional[str] = None
    line: Optional[int] = Field(default=None, ge=1)
    column: Optional[int] = Field(default=None, ge=0)


class ErrorIn(BaseModel):
    error_type: str
    identifier: Optional[str] = None
    raw_message: str
    failure_point: FailurePointIn = FailurePointIn()
    page_url: str = Field(min_length=1)
    observed_at: str = ""

    @field_validator("error_type")
    @classmethod
    def _known_type(cls, value: str) -> str:
        try:
            ErrorType(value)
        except ValueError:
            raise ValueError(f"unknown error type: {value!r}")
        return value

    def to_error(self) -> JsError:
        return JsError(
            error_type=ErrorType(self.error_type),
            identifier=self.identifier,
            raw_message=self.raw_message,
            failure_point=FailurePoint(
                resource_url=self.failure_point.resource_url,
                line=self.failure_point.line,
                column=self.failure_point.column,
            ),
            page_url=self.page_url,
            observed_at=self.observed_at,
        )


class ErrorReportIn(BaseModel):
    page_uuid: str
    error: ErrorIn

    @field_validator("page_uuid")
    @classmethod
    def _uuid(cls, value: str) -> str:
        if not is_page_uuid(value):
            raise ValueError(f"not a canonical v4 UUID: {value!r}")
        return value


class ActivationIn(BaseModel):
    page_uuid: str
    strategy: str
    target_error: str = ""
    resource_url: str
    occurred_at: str = ""

    @field_validator("page_uuid")
    @classmethod
    def _uuid(cls, value: str) -> str:
        if not is_page_uuid(value):
            raise ValueError(f"not a canonical v4 UUID: {value!r}")
        return value

    @field_validator("strategy")
    @classmethod
    def _known_strategy(cls, value: str) -> str:
        try:
            StrategyKind(value)
        except ValueError:
            raise ValueError(f"unknown strategy: {value!r}")
        return value

    def to_activation(self) -> StrategyActivation:
        return StrategyActivation(
            page_uuid=self.page_uuid,
            strategy=StrategyKind(self.strategy),
            target_error=self.target_error,
            resource_url=self.resource_url,
            occurred_at=self.occurred_at,
        )


def build_backend_app(store: BackendStore) -> FastAPI:
    app = FastAPI(title="self-healing backend", docs_url=None, redoc_url=None)

    @app.post("/errors")
    def post_error(report: ErrorReportIn) -> dict:
        try:
            record = store.record_error(report.error.to_error(), report.page_uuid)
        except StoreError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {"key": record.key, "count": record.count}

    @app.get("/errors")
    def get_errors(url: str = Query(min_length=1)) -> dict:
        errors = store.query_errors(url)
        return {"errors": [error.to_dict() for error in errors]}

    @app.post("/activations")
    def post_activation(activation: ActivationIn) -> dict:
        stored = store.record_activation(activation.to_activation())
        return {
            "stored": stored,
            "known_page": store.known_page_uuid(activation.page_uuid),
        }

    @app.get("/stats")
    def get_stats() -> dict:
        return {"stats": [stat.to_dict() for stat in store.compute_stats()]}

    @app.get("/stats/summary", response_class=PlainTextResponse)
    def get_summary() -> str:
        lines = store.summaries()
        return "\n".join(lines) + ("\n" if lines else "")

    @app.post("/purge")
    def post_purge() -> dict:
        return {"dropped": store.purge()}

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", **store.counts()}

    return app
