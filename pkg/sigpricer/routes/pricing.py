"""
sigpricer/routes/pricing.py – single put prices by benchmark, signature Monte Carlo or PDE.

Requests are capped (see PriceRequest) so one call stays interactive; large
experiments go through the CLI.
"""
from __future__ import annotations

import logging

from fastapi import APIRouter, HTTPException, Request, status

from sigpricer.errors import ConfigError
from sigpricer.models import PdeGrid, PriceMethod, PriceReport, PriceRequest, RepKind
from sigpricer.services.analytic_rep import AnalyticProvider, ExactProvider, RepProvider, ZeroProvider
from sigpricer.services.pricing import mc_price_benchmark, mc_price_sig, pde_price

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/v1", tags=["Pricing"])


def build_provider(payload: PriceRequest) -> RepProvider:
    kind = RepKind(payload.representation)
    if kind is RepKind.EXACT:
        return ExactProvider(level=payload.level)
    if kind is RepKind.ZERO:
        return ZeroProvider(level=payload.level)
    try:
        return AnalyticProvider.for_model(payload.model, payload.level, payload.sig_mode)
    except ValueError as exc:
        raise ConfigError(str(exc), cause=exc) from exc


@router.post(
    "/price",
    response_model=PriceReport,
    summary="Price a European put",
    description=(
        "Benchmark Euler Monte Carlo with the true variance, Monte Carlo driven by the "
        "signature representation, or the mixed Monte Carlo / Crank–Nicolson PDE scheme."
    ),
)
def price(payload: PriceRequest, request: Request) -> PriceReport:
    request_id = getattr(request.state, "request_id", None)
    if abs(payload.option.maturity - payload.grid.maturity) > 1e-12:
        raise HTTPException(
            status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
            detail="option.maturity must equal grid.maturity",
        )
    logger.info(
        "Pricing request",
        extra={"request_id": request_id, "method": payload.method.value, "model": payload.model.kind},
    )
    try:
        if payload.method is PriceMethod.BENCHMARK:
            return mc_price_benchmark(
                payload.model, payload.sabr, payload.option, payload.grid, payload.paths, payload.x_init, payload.seed
            )
        provider = build_provider(payload)
        if payload.method is PriceMethod.MC_SIG:
            return mc_price_sig(
                provider,
                payload.model,
                payload.sabr,
                payload.option,
                payload.grid,
                payload.paths,
                payload.x_init,
                payload.seed,
            )
        return pde_price(
            provider,
            payload.model,
            payload.sabr,
            payload.option,
            payload.grid,
            PdeGrid.for_option(payload.option),
            payload.w_paths,
            payload.x_init,
            payload.seed,
            payload.coeff_mode,
            payload.sig_mode,
        )
    except ValueError as exc:
        raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=str(exc)) from exc
