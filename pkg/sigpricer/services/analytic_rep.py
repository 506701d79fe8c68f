"""
sigpricer/services/analytic_rep.py – closed-form signature coefficients and (ṽ, Ĩ) reconstruction.

ℓ^OU   = (v0·∅ + κθ·1 + η·2) ⊗ exp⧢(−κ·1)
ℓ^mGBM = (v0·∅ + γ·1 + η·2) ⊗ exp⧢(λ·1 + σ·2),  λ = −(κ + σ²/2), γ = κθ − ση/2
p      = ℓ with the letter 2 appended to every word (integral shift)

Representations are exposed through providers sharing one interface,
`streams(paths) -> RepBatch`, so both pricers can consume analytic, learned,
exact or zero volatility streams interchangeably.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np

from sigpricer.config import settings
from sigpricer.models import MGBMParams, ModelParams, OUParams, SigMode
from sigpricer.services.rng import chunked
from sigpricer.services.signature import (
    SigStream,
    TimeExtendedPath,
    ito_integral_series,
    pair_batch,
    pair_series,
    signature_batch,
)
from sigpricer.services.tensor_algebra import (
    TensorPoly,
    append_letter,
    project,
    shuffle_exp,
    tensor_product,
)
from sigpricer.services.vol_models import PathSet

logger = logging.getLogger(__name__)


# ── Coefficients ──────────────────────────────────────────────────────────────


def _expand(base: dict[str, float], exponent: dict[str, float], n: int) -> TensorPoly:
    if n < 0:
        raise ValueError(f"level must be >= 0, got {n}")
    return tensor_product(
        project(TensorPoly.from_terms(base), n),
        shuffle_exp(TensorPoly.from_terms(exponent), n),
        n,
    )


def ou_coefficients(params: OUParams, n: int) -> TensorPoly:
    return _expand(
        {"": params.v0, "1": params.kappa * params.theta, "2": params.eta},
        {"1": -params.kappa},
        n,
    )


def mgbm_lambda_gamma(params: MGBMParams) -> tuple[float, float]:
    lam = -(params.kappa + 0.5 * params.sigma**2)
    gam = params.kappa * params.theta - 0.5 * params.sigma * params.eta
    return lam, gam


def mgbm_coefficients(params: MGBMParams, n: int) -> TensorPoly:
    lam, gam = mgbm_lambda_gamma(params)
    return _expand(
        {"": params.v0, "1": gam, "2": params.eta},
        {"1": lam, "2": params.sigma},
        n,
    )


def model_coefficients(model: ModelParams, n: int) -> TensorPoly:
    if isinstance(model, OUParams):
        return ou_coefficients(model, n)
    if isinstance(model, MGBMParams):
        return mgbm_coefficients(model, n)
    raise ValueError(f"{model.kind} has no closed-form signature coefficients; use a learned representation")


def integral_coefficients(ell: TensorPoly, n: int) -> TensorPoly:
    if n < 1:
        raise ValueError(f"integral coefficients need level >= 1, got {n}")
    return append_letter(project(ell, n - 1), 2, n)


# ── Reconstruction ────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class RepStream:
    v_tilde: np.ndarray
    i_tilde: np.ndarray
    level: int
    provenance: str

    def __post_init__(self) -> None:
        if self.v_tilde.shape != self.i_tilde.shape:
            raise ValueError("v_tilde and i_tilde must have the same length")
        if self.i_tilde[0] != 0.0:
            raise ValueError("i_tilde must start at 0")


@dataclass(frozen=True)
class RepBatch:
    """Reconstructed streams for a batch of paths, arrays of shape (M, J+1)."""

    v_tilde: np.ndarray
    i_tilde: np.ndarray
    level: int
    provenance: str
    coefficients: Optional[TensorPoly] = None

    @property
    def count(self) -> int:
        return self.v_tilde.shape[0]

    def stream(self, m: int) -> RepStream:
        return RepStream(self.v_tilde[m], self.i_tilde[m], self.level, self.provenance)


def reconstruct(
    ell: TensorPoly,
    sig: SigStream,
    path: TimeExtendedPath,
    mode: Optional[SigMode] = None,
    provenance: str = "analytic",
) -> RepStream:
    if mode is not None and mode is not sig.mode:
        raise ValueError(f"signature was built in {sig.mode.value} mode, not {mode.value}")
    v_tilde = pair_series(ell, sig)
    return RepStream(
        v_tilde=v_tilde,
        i_tilde=ito_integral_series(v_tilde, path.dw),
        level=sig.level_cap,
        provenance=provenance,
    )


# ── Error metrics ─────────────────────────────────────────────────────────────


def mae_pathwise(a: np.ndarray, b: np.ndarray) -> float | np.ndarray:
    """(1/(J+1)) Σ_j |a_j − b_j|, per row for 2-D input."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"series shapes differ: {a.shape} vs {b.shape}")
    eps = np.abs(a - b).mean(axis=-1)
    return float(eps) if eps.ndim == 0 else eps


def mae_overall(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Mean and sample standard deviation across paths of the pathwise MAE."""
    eps = np.atleast_1d(mae_pathwise(np.atleast_2d(a), np.atleast_2d(b)))
    sd = float(eps.std(ddof=1)) if eps.size > 1 else 0.0
    return float(eps.mean()), sd


# ── Providers ─────────────────────────────────────────────────────────────────


class RepProvider(Protocol):
    level: int
    provenance: str

    def streams(self, paths: PathSet) -> RepBatch: ...


@dataclass(frozen=True)
class AnalyticProvider:
    """Pairs fixed coefficients ℓ with the signature of each W-path."""

    coefficients: TensorPoly
    level: int
    mode: SigMode = SigMode.ITO_LEFT
    provenance: str = "analytic"

    @classmethod
    def for_model(cls, model: ModelParams, level: int, mode: SigMode = SigMode.ITO_LEFT) -> AnalyticProvider:
        return cls(model_coefficients(model, level), level, mode, f"analytic-{model.kind}")

    def streams(self, paths: PathSet) -> RepBatch:
        logger.debug(
            "Pairing coefficients with path signatures",
            extra={"level": self.level, "mode": self.mode.value, "paths": paths.count, "terms": len(self.coefficients)},
        )
        blocks = chunked(np.arange(paths.count), settings.path_batch_size)
        v_tilde = np.concatenate(
            [
                pair_batch(
                    self.coefficients,
                    signature_batch(paths.grid.dt, paths.dw[rows], self.level, self.mode),
                    self.level,
                )
                for rows in blocks
            ]
        )
        return RepBatch(
            v_tilde=v_tilde,
            i_tilde=ito_integral_series(v_tilde, paths.dw),
            level=self.level,
            provenance=self.provenance,
            coefficients=self.coefficients,
        )


@dataclass(frozen=True)
class ExactProvider:
    """The simulated variance itself; the oracle representation."""

    level: int = 0
    provenance: str = "exact"

    def streams(self, paths: PathSet) -> RepBatch:
        return RepBatch(paths.v, paths.i, self.level, self.provenance)


@dataclass(frozen=True)
class ZeroProvider:
    """ṽ ≡ 0, reduces every pricer to the intrinsic value."""

    level: int = 0
    provenance: str = "zero"

    def streams(self, paths: PathSet) -> RepBatch:
        zeros = np.zeros_like(paths.v)
        return RepBatch(zeros, zeros.copy(), self.level, self.provenance, TensorPoly.zero(self.level))
