"""
sigpricer/main.py – FastAPI entry point for the pricing service.

    uvicorn sigpricer.main:app --reload
"""
from __future__ import annotations

import logging
import uuid

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from starlette.middleware.base import BaseHTTPMiddleware

from sigpricer.config import settings
from sigpricer.errors import ConfigError, NumericalError
from sigpricer.routes.coefficients import router as coefficients_router
from sigpricer.routes.health import router as health_router
from sigpricer.routes.pricing import router as pricing_router

logging.basicConfig(
    level=settings.log_level.upper(),
    format="%(levelname)s %(name)s – %(message)s",
)
logger = logging.getLogger(__name__)


# ── Request-ID middleware (echoes X-Request-ID for tracing) ───────────────────


class RequestIDMiddleware(BaseHTTPMiddleware):
    async def dispatch(self, request: Request, call_next):
        request.state.request_id = request.headers.get("X-Request-ID") or str(uuid.uuid4())
        response = await call_next(request)
        response.headers["X-Request-ID"] = request.state.request_id
        return response


# ── App ───────────────────────────────────────────────────────────────────────

app = FastAPI(
    title=settings.app_name,
    version=settings.app_version,
    docs_url="/docs",
    redoc_url="/redoc",
)

app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"])
app.add_middleware(RequestIDMiddleware)


@app.exception_handler(ConfigError)
async def _config_error(request: Request, exc: ConfigError) -> JSONResponse:
    return JSONResponse(status_code=422, content={"detail": str(exc)})


@app.exception_handler(NumericalError)
async def _numerical_error(request: Request, exc: NumericalError) -> JSONResponse:
    logger.warning(
        "Numerical failure",
        extra={"request_id": getattr(request.state, "request_id", None), "error": type(exc).__name__},
    )
    return JSONResponse(status_code=502, content={"detail": str(exc), "error": type(exc).__name__})


app.include_router(health_router)
app.include_router(coefficients_router)
app.include_router(pricing_router)
