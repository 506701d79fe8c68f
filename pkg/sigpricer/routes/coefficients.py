"""
sigpricer/routes/coefficients.py – closed-form representation coefficients.
"""
from __future__ import annotations

import logging

from fastapi import APIRouter

from sigpricer.models import CoefficientsRequest, CoefficientsResponse
from sigpricer.services.analytic_rep import integral_coefficients, model_coefficients

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/v1", tags=["Coefficients"])


@router.post(
    "/coefficients",
    response_model=CoefficientsResponse,
    summary="Truncated representation coefficients",
    description="ℓ for v and p for the integral ∫v dW, both truncated at `level`.",
)
def coefficients(payload: CoefficientsRequest) -> CoefficientsResponse:
    ell = model_coefficients(payload.model, payload.level)
    p = integral_coefficients(ell, payload.level)
    logger.info("Coefficients computed", extra={"model": payload.model.kind, "level": payload.level})
    return CoefficientsResponse(
        level=payload.level,
        ell=ell.render(),
        p=p.render(),
        ell_terms={str(w): c for w, c in ell},
        p_terms={str(w): c for w, c in p},
    )
