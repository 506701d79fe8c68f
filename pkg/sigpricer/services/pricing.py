"""
sigpricer/services/pricing.py – European put prices from signature volatility representations.

Three estimators share the SABR-type dynamics f(x) = ρx^β, g(x) = √(1−ρ²)x^β:

mc-sig     X_{j+1} = X_j + [f + ∂f·f·ĩ_j]ṽ_j ΔW_j + g·ṽ_j ΔB_j   (signature SDE, rough-lift correction)
benchmark  X_{j+1} = X_j + f·v_j ΔW_j + g·v_j ΔB_j                (Euler on the original SDE)
pde        per W-path Crank–Nicolson solve of u_t + ½a u_xx = 0, averaged over W-paths

Monte Carlo estimators use the same W and B paths as the simulator (common random
numbers), so benchmark and mc-sig prices differ only through the representation.
"""
from __future__ import annotations

import logging
import time
from collections.abc import Callable
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import solve_banded
from scipy.stats import norm

from sigpricer.config import settings
from sigpricer.errors import PathRejectionError, PdeSolveError
from sigpricer.models import (
    CoeffMode,
    Grid,
    ModelParams,
    OptionSpec,
    PdeGrid,
    PriceMethod,
    PriceReport,
    SabrSpec,
    SigMode,
)
from sigpricer.services.analytic_rep import RepBatch, RepProvider, RepStream, integral_coefficients
from sigpricer.services.rng import chunked, ordered_map
from sigpricer.services.signature import SigStream, pair_batch, signature_batch
from sigpricer.services.tensor_algebra import TensorPoly, shuffle
from sigpricer.services.vol_models import PathSet, attempt_stride, simulate

logger = logging.getLogger(__name__)


def black_scholes_put(x: float, strike: float, vol: float, maturity: float) -> float:
    """Undiscounted (r = 0) Black–Scholes put."""
    if vol <= 0 or maturity <= 0:
        return max(strike - x, 0.0)
    width = vol * np.sqrt(maturity)
    d1 = (np.log(x / strike) + 0.5 * width**2) / width
    d2 = d1 - width
    return float(strike * norm.cdf(-d2) - x * norm.cdf(-d1))


# ── Monte Carlo ───────────────────────────────────────────────────────────────


def _evolve(
    sabr: SabrSpec,
    x_init: float,
    v: np.ndarray,
    dw: np.ndarray,
    db: np.ndarray,
    i_tilde: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Terminal X for every row; `i_tilde` switches the rough-lift correction on."""
    x = np.full(dw.shape[0], float(x_init))
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        for j in range(dw.shape[1]):
            fx = sabr.f(x)
            drift_w = fx if i_tilde is None else fx + sabr.df(x) * fx * i_tilde[:, j]
            x = x + drift_w * v[:, j] * dw[:, j] + sabr.g(x) * v[:, j] * db[:, j]
    return x


def _monte_carlo(
    terminal: Callable[[PathSet], np.ndarray],
    model: ModelParams,
    grid: Grid,
    count: int,
    seed: int,
    workers: Optional[int],
) -> tuple[np.ndarray, int]:
    """Terminal values with non-finite paths redrawn; returns (X_T, rejected)."""
    paths = simulate(model, grid, count, seed, workers=workers)
    x_t = terminal(paths)
    rejected = 0
    for round_ in range(1, settings.max_resample_rounds + 1):
        rows = np.flatnonzero(~np.isfinite(x_t))
        if rows.size == 0:
            break
        rejected += rows.size
        fresh = simulate(
            model, grid, rows.size, seed, workers=workers, indices=rows, attempt=round_ * attempt_stride()
        )
        paths = paths.with_rows(rows, fresh)
        x_t[rows] = terminal(fresh)

    if rejected:
        logger.warning(
            "Rejected non-finite Monte Carlo paths",
            extra={"rejected": rejected, "paths": count, "model": model.kind},
        )
    if rejected > settings.max_rejection_rate * count or not np.isfinite(x_t).all():
        raise PathRejectionError(
            f"{rejected} of {count} paths rejected (limit {settings.max_rejection_rate:.0%}); "
            f"{int((~np.isfinite(x_t)).sum())} still non-finite"
        )
    return x_t, rejected


def _report(
    payoffs: np.ndarray, method: PriceMethod, provenance: str, started: float, **fields
) -> PriceReport:
    stderr = float(payoffs.std(ddof=1) / np.sqrt(payoffs.size)) if payoffs.size > 1 else 0.0
    return PriceReport(
        estimate=float(payoffs.mean()),
        stderr=stderr,
        method=method,
        provenance=provenance,
        wall_clock_s=time.perf_counter() - started,
        **fields,
    )


def mc_price_sig(
    provider: RepProvider,
    model: ModelParams,
    sabr: SabrSpec,
    option: OptionSpec,
    grid: Grid,
    count: int,
    x_init: float,
    seed: int,
    workers: Optional[int] = None,
) -> PriceReport:
    if x_init <= 0:
        raise ValueError(f"x_init must be positive, got {x_init}")
    started = time.perf_counter()

    def terminal(paths: PathSet) -> np.ndarray:
        rep = provider.streams(paths)
        return _evolve(sabr, x_init, rep.v_tilde, paths.dw, paths.db, rep.i_tilde)

    x_t, rejected = _monte_carlo(terminal, model, grid, count, seed, workers)
    return _report(
        option.payoff(x_t),
        PriceMethod.MC_SIG,
        provider.provenance,
        started,
        level=provider.level,
        x_init=x_init,
        paths=count,
        rejected_paths=rejected,
    )


def mc_price_benchmark(
    model: ModelParams,
    sabr: SabrSpec,
    option: OptionSpec,
    grid: Grid,
    count: int,
    x_init: float,
    seed: int,
    workers: Optional[int] = None,
) -> PriceReport:
    if x_init <= 0:
        raise ValueError(f"x_init must be positive, got {x_init}")
    started = time.perf_counter()
    x_t, rejected = _monte_carlo(
        lambda paths: _evolve(sabr, x_init, paths.v, paths.dw, paths.db), model, grid, count, seed, workers
    )
    return _report(
        option.payoff(x_t),
        PriceMethod.BENCHMARK,
        "exact",
        started,
        x_init=x_init,
        paths=count,
        rejected_paths=rejected,
    )


# ── PDE coefficients ──────────────────────────────────────────────────────────


@dataclass(frozen=True)
class CoefficientField:
    """a[j, l], the diffusion coefficient of u_t + ½ a u_xx = 0 on the (time, space) grid."""

    values: np.ndarray
    clamped: int = 0


@dataclass(frozen=True)
class ShufflePairTensors:
    """ℓ⧢ℓ, ℓ⧢r and r⧢r with r = p⧢ℓ, all truncated at the level."""

    ll: TensorPoly
    lr: TensorPoly
    rr: TensorPoly

    @classmethod
    def from_coefficients(cls, ell: TensorPoly, level: int) -> ShufflePairTensors:
        r = shuffle(integral_coefficients(ell, level), ell, level)
        return cls(shuffle(ell, ell, level), shuffle(ell, r, level), shuffle(r, r, level))

    def pairings(self, values: np.ndarray, level: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(pair_batch(t, values, level) for t in (self.ll, self.lr, self.rr))  # type: ignore[return-value]


def _scalar_square(v: np.ndarray, i: np.ndarray, sabr: SabrSpec, x: np.ndarray) -> np.ndarray:
    fx, gx, dfx = sabr.f(x)[None, :], sabr.g(x)[None, :], sabr.df(x)[None, :]
    v2 = (v**2)[:, None]
    return (fx + dfx * fx * i[:, None]) ** 2 * v2 + gx**2 * v2


def _shuffle_pair(
    pairings: tuple[np.ndarray, np.ndarray, np.ndarray], sabr: SabrSpec, x: np.ndarray
) -> np.ndarray:
    p_ll, p_lr, p_rr = (p[:, None] for p in pairings)
    fx, gx, dfx = sabr.f(x)[None, :], sabr.g(x)[None, :], sabr.df(x)[None, :]
    corr = dfx * fx
    return (fx**2 + gx**2) * p_ll + 2.0 * fx * corr * p_lr + corr**2 * p_rr


def _clamp(field: np.ndarray) -> CoefficientField:
    negative = field < 0.0
    clamped = int(negative.sum())
    if clamped:
        field = np.where(negative, 0.0, field)
    return CoefficientField(values=field, clamped=clamped)


def pde_coefficients(
    rep: RepStream,
    sabr: SabrSpec,
    pde_grid: PdeGrid,
    mode: CoeffMode = CoeffMode.SCALAR_SQUARE,
    sig: Optional[SigStream] = None,
    coefficients: Optional[TensorPoly] = None,
) -> CoefficientField:
    x = pde_grid.x
    if mode is CoeffMode.SCALAR_SQUARE:
        result = _clamp(_scalar_square(rep.v_tilde, rep.i_tilde, sabr, x))
    else:
        if sig is None:
            raise ValueError("shuffle-pair coefficients need the signature stream")
        if coefficients is None:
            raise ValueError("shuffle-pair coefficients need time-independent representation coefficients")
        tensors = ShufflePairTensors.from_coefficients(coefficients, sig.level_cap)
        result = _clamp(_shuffle_pair(tensors.pairings(sig.values, sig.level_cap), sabr, x))
    if result.clamped:
        logger.warning("Clamped negative PDE coefficients", extra={"clamped": result.clamped, "mode": mode.value})
    return result


# ── Crank–Nicolson ────────────────────────────────────────────────────────────


def cn_solve(
    a: np.ndarray,
    pde_grid: PdeGrid,
    option: OptionSpec,
    dt: float,
    boundary: Optional[tuple[float, float]] = None,
) -> np.ndarray:
    """u(0, x_l) for u_t + ½ a u_xx = 0, u(T, ·) = Φ, Dirichlet values at both ends.

    Each backward step solves
    (I − ¼(Δt/Δx²) diag(a_j) D₂) u_j = (I + ¼(Δt/Δx²) diag(a_{j+1}) D₂) u_{j+1}
    with D₂ the [1, −2, 1] stencil.
    """
    a = np.asarray(a, dtype=float)
    nodes = pde_grid.nodes
    if a.ndim != 2 or a.shape[1] != nodes:
        raise ValueError(f"coefficient field of shape {a.shape} does not match {nodes} space nodes")
    if (a < 0).any():
        raise ValueError("coefficient field must be non-negative")
    psi_lo, psi_hi = boundary if boundary is not None else (option.strike - pde_grid.x_lo, 0.0)

    ratio = 0.25 * dt / pde_grid.dx**2
    u = option.payoff(pde_grid.x)
    banded = np.zeros((3, nodes))
    for j in range(a.shape[0] - 2, -1, -1):
        r_now, r_next = ratio * a[j], ratio * a[j + 1]
        rhs = u.copy()
        rhs[1:-1] += r_next[1:-1] * (u[:-2] - 2.0 * u[1:-1] + u[2:])
        rhs[0], rhs[-1] = psi_lo, psi_hi

        banded[1] = 1.0 + 2.0 * r_now
        banded[0, 2:] = -r_now[1:-1]
        banded[2, :-2] = -r_now[1:-1]
        banded[1, 0] = banded[1, -1] = 1.0
        banded[0, 1] = banded[2, -2] = 0.0
        u = solve_banded((1, 1), banded, rhs, check_finite=False)
        if not np.isfinite(u).all():
            raise PdeSolveError(
                f"Crank–Nicolson step {j} produced non-finite values "
                f"(max a = {a[j].max():.3g}, Δt = {dt:.3g}, Δx = {pde_grid.dx:.3g})"
            )
    return u


# ── PDE pricing ───────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class PdeRun:
    values: np.ndarray  # u_0(x_init) per W-path
    profile: np.ndarray  # u_0(x) averaged over W-paths
    clamped: int


def _shuffle_pairings(
    rep: RepBatch, paths: PathSet, mode: SigMode
) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    if rep.coefficients is None:
        raise ValueError(
            f"shuffle-pair coefficients need a time-independent representation, got {rep.provenance}"
        )
    tensors = ShufflePairTensors.from_coefficients(rep.coefficients, rep.level)
    out: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
    for rows in chunked(np.arange(paths.count), settings.path_batch_size):
        sig = signature_batch(paths.grid.dt, paths.dw[rows], rep.level, mode)
        ll, lr, rr = tensors.pairings(sig, rep.level)
        out.extend(zip(ll, lr, rr))
    return out


def pde_solve_paths(
    provider: RepProvider,
    model: ModelParams,
    sabr: SabrSpec,
    option: OptionSpec,
    grid: Grid,
    pde_grid: PdeGrid,
    w_paths: int,
    x_init: float,
    seed: int,
    mode: CoeffMode = CoeffMode.SCALAR_SQUARE,
    sig_mode: SigMode = SigMode.ITO_LEFT,
    workers: Optional[int] = None,
) -> PdeRun:
    if not pde_grid.contains(x_init):
        raise ValueError(f"x_init {x_init} outside the PDE domain ({pde_grid.x_lo}, {pde_grid.x_hi})")
    paths = simulate(model, grid, w_paths, seed, workers=workers)
    rep = provider.streams(paths)
    x = pde_grid.x
    pairings = _shuffle_pairings(rep, paths, sig_mode) if mode is CoeffMode.SHUFFLE_PAIR else None

    def solve(m: int) -> tuple[np.ndarray, int]:
        if pairings is None:
            field = _clamp(_scalar_square(rep.v_tilde[m], rep.i_tilde[m], sabr, x))
        else:
            field = _clamp(_shuffle_pair(pairings[m], sabr, x))
        return cn_solve(field.values, pde_grid, option, grid.dt), field.clamped

    solved = ordered_map(solve, range(paths.count), workers or settings.workers)
    profiles = np.stack([u for u, _ in solved])
    clamped = sum(c for _, c in solved)
    if clamped:
        logger.warning("Clamped negative PDE coefficients", extra={"clamped": clamped, "mode": mode.value})
    values = np.array([np.interp(x_init, x, u) for u in profiles])
    return PdeRun(values=values, profile=profiles.mean(axis=0), clamped=clamped)


def pde_price_with_profile(
    provider: RepProvider,
    model: ModelParams,
    sabr: SabrSpec,
    option: OptionSpec,
    grid: Grid,
    pde_grid: PdeGrid,
    w_paths: int,
    x_init: float,
    seed: int,
    mode: CoeffMode = CoeffMode.SCALAR_SQUARE,
    sig_mode: SigMode = SigMode.ITO_LEFT,
    workers: Optional[int] = None,
) -> tuple[PriceReport, np.ndarray]:
    """Price and the W-path average of u_0(x) on the space grid."""
    started = time.perf_counter()
    run = pde_solve_paths(
        provider, model, sabr, option, grid, pde_grid, w_paths, x_init, seed, mode, sig_mode, workers
    )
    report = _report(
        run.values,
        PriceMethod.PDE,
        provider.provenance,
        started,
        level=provider.level,
        x_init=x_init,
        paths=0,
        w_paths=w_paths,
        clamped_coefficients=run.clamped,
    )
    return report, run.profile


def pde_price(*args, **kwargs) -> PriceReport:
    return pde_price_with_profile(*args, **kwargs)[0]
