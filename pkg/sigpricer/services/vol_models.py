"""
sigpricer/services/vol_models.py – seeded simulation of the four volatility models.

Every model is driven by the same per-path increments (ΔW, ΔB) from `rng`;
ΔB is carried along for the asset pricer and never enters v. The integrated
process I_t = ∫ v dW is accumulated with left-point sums.

Schemes
───────
OU, MGBM   Euler–Maruyama.
RHESTON    left-point Volterra sum, kernel at lags ≥ Δt, full truncation v⁺ = max(v, 0).
RBERGOMI   v0 · exp(η Σ_{i<j} (t_j − t_i)^(−α) ΔW_i), no variance compensator; paths
           whose exponent exceeds 700 in magnitude are redrawn from the next attempt stream.
"""
from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd
from scipy.special import gamma

from sigpricer.config import settings
from sigpricer.errors import NumericalError, PathRejectionError
from sigpricer.models import (
    Grid,
    MeanCheckReport,
    MGBMParams,
    ModelParams,
    OUParams,
    RBergomiParams,
    RHestonParams,
)
from sigpricer.services.rng import brownian_increments, chunked, ordered_map
from sigpricer.services.signature import TimeExtendedPath, ito_integral_series

logger = logging.getLogger(__name__)

EXPONENT_LIMIT = 700.0


@dataclass(frozen=True)
class PathSet:
    """M simulated paths; row m of every array belongs to path index m."""

    model: ModelParams
    grid: Grid
    seed: int
    dw: np.ndarray  # (M, J)
    db: np.ndarray  # (M, J)
    v: np.ndarray  # (M, J+1)
    i: np.ndarray  # (M, J+1)
    resampled: int = 0

    @property
    def count(self) -> int:
        return self.v.shape[0]

    @property
    def w(self) -> np.ndarray:
        return np.concatenate([np.zeros((self.count, 1)), np.cumsum(self.dw, axis=1)], axis=1)

    def path(self, m: int) -> TimeExtendedPath:
        return TimeExtendedPath.from_increments(self.grid.dt, self.dw[m])

    def subset(self, rows: np.ndarray) -> PathSet:
        return PathSet(
            model=self.model,
            grid=self.grid,
            seed=self.seed,
            dw=self.dw[rows],
            db=self.db[rows],
            v=self.v[rows],
            i=self.i[rows],
            resampled=self.resampled,
        )

    def with_rows(self, rows: np.ndarray, fresh: PathSet) -> PathSet:
        """Copy with `rows` replaced by the paths of `fresh`, in order."""
        arrays = {name: getattr(self, name).copy() for name in ("dw", "db", "v", "i")}
        for name, array in arrays.items():
            array[rows] = getattr(fresh, name)
        return PathSet(
            model=self.model,
            grid=self.grid,
            seed=self.seed,
            resampled=self.resampled + fresh.resampled,
            **arrays,
        )


# ── Variance schemes ──────────────────────────────────────────────────────────


def _euler(model: OUParams | MGBMParams, dt: float, dw: np.ndarray) -> np.ndarray:
    paths, steps = dw.shape
    v = np.empty((paths, steps + 1))
    v[:, 0] = model.v0
    sigma = model.sigma if isinstance(model, MGBMParams) else 0.0
    for j in range(steps):
        vj = v[:, j]
        v[:, j + 1] = vj + model.kappa * (model.theta - vj) * dt + (model.eta + sigma * vj) * dw[:, j]
    return v


def volterra_kernel(alpha: float, dt: float, steps: int) -> np.ndarray:
    """K(kΔt) = (kΔt)^(−α) / Γ(1−α) for lags k = 1..steps."""
    lags = dt * np.arange(1, steps + 1)
    return lags ** (-alpha) / gamma(1.0 - alpha)


def _rough_heston(model: RHestonParams, dt: float, dw: np.ndarray) -> np.ndarray:
    paths, steps = dw.shape
    kernel = volterra_kernel(model.alpha, dt, steps)
    v = np.empty((paths, steps + 1))
    v[:, 0] = model.v0
    innovations = np.empty((paths, steps))
    for j in range(1, steps + 1):
        vp = np.maximum(v[:, j - 1], 0.0)
        innovations[:, j - 1] = model.kappa * (model.theta - vp) * dt + model.sigma * np.sqrt(vp) * dw[:, j - 1]
        # lags j − i for i = 0..j−1
        v[:, j] = model.v0 + innovations[:, :j] @ kernel[j - 1 :: -1]
    return v


def bergomi_exponent(model: RBergomiParams, dt: float, dw: np.ndarray) -> np.ndarray:
    """η Σ_{i<j} (t_j − t_i)^(−α) ΔW_i for j = 0..J."""
    steps = dw.shape[1]
    lag = np.arange(steps + 1)[:, None] - np.arange(steps)[None, :]
    weights = np.where(lag > 0, (np.maximum(lag, 1) * dt) ** (-model.alpha), 0.0)
    return model.eta * dw @ weights.T


def _variance(model: ModelParams, dt: float, dw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Variance paths and a mask of rows that must be redrawn."""
    if isinstance(model, (OUParams, MGBMParams)):
        v = _euler(model, dt, dw)
    elif isinstance(model, RHestonParams):
        v = _rough_heston(model, dt, dw)
    else:
        exponent = bergomi_exponent(model, dt, dw)
        overflow = (np.abs(exponent) > EXPONENT_LIMIT).any(axis=1)
        v = model.v0 * np.exp(np.clip(exponent, -EXPONENT_LIMIT, EXPONENT_LIMIT))
        return v, overflow
    return v, ~np.isfinite(v).all(axis=1)


# ── Simulation ────────────────────────────────────────────────────────────────


def attempt_stride() -> int:
    return settings.max_resample_rounds + 1


def _simulate_block(
    model: ModelParams, grid: Grid, seed: int, indices: np.ndarray, attempt: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    attempts = np.full(indices.size, attempt, dtype=int)
    dw, db = brownian_increments(seed, indices, grid.steps, grid.dt, attempts)
    v, bad = _variance(model, grid.dt, dw)
    redrawn = 0
    for _ in range(settings.max_resample_rounds):
        if not bad.any():
            break
        rows = np.flatnonzero(bad)
        redrawn += rows.size
        attempts[rows] += 1
        dw[rows], db[rows] = brownian_increments(seed, indices[rows], grid.steps, grid.dt, attempts[rows])
        v[rows], bad_rows = _variance(model, grid.dt, dw[rows])
        bad[:] = False
        bad[rows] = bad_rows
    if bad.any():
        raise PathRejectionError(
            f"{int(bad.sum())} {model.kind} paths still unbounded after "
            f"{settings.max_resample_rounds} resample rounds"
        )
    return dw, db, v, redrawn


def simulate(
    model: ModelParams,
    grid: Grid,
    count: int,
    seed: int,
    *,
    workers: Optional[int] = None,
    batch_size: Optional[int] = None,
    indices: Optional[Sequence[int]] = None,
    attempt: int = 0,
) -> PathSet:
    """Simulate paths 0 .. count − 1, or the given path indices.

    `attempt` selects a fresh stream family for the same indices; internal
    redraws use the following `max_resample_rounds` attempt numbers, so callers
    resampling whole paths step `attempt` by `attempt_stride()`.

    The result does not depend on `workers` or `batch_size`: each path owns
    its random stream and blocks are reassembled in index order.
    """
    index_array = np.arange(count) if indices is None else np.asarray(indices, dtype=int)
    if index_array.size != count or count < 1:
        raise ValueError(f"count must be >= 1 and match the indices, got {count}")
    workers = workers or settings.workers
    blocks = chunked(index_array, batch_size or settings.path_batch_size)

    results = ordered_map(lambda idx: _simulate_block(model, grid, seed, idx, attempt), blocks, workers)
    dw = np.concatenate([r[0] for r in results])
    db = np.concatenate([r[1] for r in results])
    v = np.concatenate([r[2] for r in results])
    redrawn = sum(r[3] for r in results)

    if redrawn:
        logger.warning(
            "Resampled unbounded variance paths",
            extra={"model": model.kind, "resampled": redrawn, "paths": count},
        )
    if not np.isfinite(v).all():
        raise NumericalError(f"{model.kind} simulation produced non-finite variance values")

    i = ito_integral_series(v, dw)
    logger.debug("Simulated paths", extra={"model": model.kind, "paths": count, "steps": grid.steps})
    return PathSet(model=model, grid=grid, seed=seed, dw=dw, db=db, v=v, i=i, resampled=redrawn)


# ── Sanity oracle ─────────────────────────────────────────────────────────────


def expected_terminal_mean(model: ModelParams, maturity: float) -> float:
    if isinstance(model, (OUParams, MGBMParams)):
        return model.theta + (model.v0 - model.theta) * np.exp(-model.kappa * maturity)
    if isinstance(model, RBergomiParams):
        h = 1.0 - 2.0 * model.alpha
        return model.v0 * np.exp(model.eta**2 * maturity**h / (2.0 * h))
    raise ValueError(f"no closed-form mean for model {model.kind!r}")


def mean_check(model: ModelParams, grid: Grid, count: int, seed: int, **kwargs) -> MeanCheckReport:
    """z-score of the sample mean of v_T against its closed form."""
    if count < 1000:
        raise ValueError(f"mean_check needs at least 1000 paths, got {count}")
    expected = float(expected_terminal_mean(model, grid.maturity))
    terminal = simulate(model, grid, count, seed, **kwargs).v[:, -1]
    mean = float(terminal.mean())
    stderr = float(terminal.std(ddof=1) / np.sqrt(count))
    z = (mean - expected) / stderr if stderr > 0 else (0.0 if mean == expected else np.inf)
    return MeanCheckReport(
        model=model.kind,
        paths=count,
        maturity=grid.maturity,
        sample_mean=mean,
        expected_mean=expected,
        stderr=stderr,
        z_score=float(z),
    )


# ── Export ────────────────────────────────────────────────────────────────────


def pathset_frame(paths: PathSet) -> pd.DataFrame:
    """Long table (path, j, t, dW, dB, v, I); the increments at j = J are empty."""
    count, points = paths.v.shape
    pad = np.full((count, 1), np.nan)
    return pd.DataFrame(
        {
            "path": np.repeat(np.arange(count), points),
            "j": np.tile(np.arange(points), count),
            "t": np.tile(paths.grid.times, count),
            "dW": np.hstack([paths.dw, pad]).reshape(-1),
            "dB": np.hstack([paths.db, pad]).reshape(-1),
            "v": paths.v.reshape(-1),
            "I": paths.i.reshape(-1),
        }
    )
