"""
sigpricer/routes/health.py – liveness and readiness endpoints.
"""
from __future__ import annotations

import logging
import os
from pathlib import Path

from fastapi import APIRouter

from sigpricer.config import settings
from sigpricer.models import HealthResponse, ReadinessResponse

logger = logging.getLogger(__name__)

router = APIRouter(tags=["Health"])


@router.get(
    "/healthz",
    response_model=HealthResponse,
    summary="Liveness probe",
    description="Returns 200 as long as the application process is running.",
)
async def healthz() -> HealthResponse:
    return HealthResponse(status="ok", version=settings.app_version)


def _cache_writable() -> bool:
    directory = Path(settings.cache_dir)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError:
        return False
    return os.access(directory, os.W_OK)


@router.get(
    "/readyz",
    response_model=ReadinessResponse,
    summary="Readiness probe",
    description="Returns ready when the benchmark cache directory is writable.",
)
async def readyz() -> ReadinessResponse:
    cache_ok = _cache_writable()
    checks: dict = {
        "cache_dir": str(settings.cache_dir),
        "cache_writable": cache_ok,
        "workers": str(settings.workers),
    }
    if not cache_ok:
        logger.warning("Cache directory not writable", extra={"cache_dir": str(settings.cache_dir)})
    return ReadinessResponse(ready=cache_ok, checks=checks)
