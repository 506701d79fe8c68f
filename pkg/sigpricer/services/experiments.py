"""
sigpricer/services/experiments.py – seeded experiment drivers behind the CLI tables.

run_repr_error      reconstruction MAEs of (v, I) per truncation level
run_pricing_table   benchmark vs mc-sig and pde put prices per level and moneyness
run_learned_sweep   linear and nonlinear learned representations, their held-out
                    MAEs and the prices they produce

Drivers return result rows and timings; writing files is left to the caller.
Every level reuses the same simulated paths (common random numbers).
"""
from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from sigpricer import __version__
from sigpricer.errors import ConfigError
from sigpricer.models import (
    CoeffMode,
    ExperimentConfig,
    PriceErrorRow,
    PriceReport,
    ReprErrorRow,
    RepKind,
)
from sigpricer.services.analytic_rep import (
    AnalyticProvider,
    ExactProvider,
    RepProvider,
    ZeroProvider,
    mae_overall,
)
from sigpricer.services.cache import benchmark_cache
from sigpricer.services.learned_rep import (
    LearnedProvider,
    LinearRepModel,
    NonlinearRepModel,
    fit_linear,
    load_model,
    save_model,
    train_nonlinear,
)
from sigpricer.services.pricing import mc_price_benchmark, mc_price_sig, pde_price
from sigpricer.services.vol_models import PathSet, simulate

logger = logging.getLogger(__name__)

# bump when the benchmark simulation or its RNG layout changes
BENCHMARK_CACHE_FORMAT = 1


@dataclass
class ExperimentResult:
    repr_rows: list[ReprErrorRow] = field(default_factory=list)
    price_rows: list[PriceErrorRow] = field(default_factory=list)
    runtimes: dict[str, float] = field(default_factory=dict)


# ── Helpers ───────────────────────────────────────────────────────────────────


def experiment_id(cfg: ExperimentConfig, kind: str) -> str:
    """Stable id over everything that changes results (not workers or output_dir)."""
    data = cfg.model_dump(mode="json", exclude={"output_dir": True, "run": {"workers"}})
    digest = hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()[:12]
    return f"{kind}-{digest}"


def moneyness(spot: float, strike: float) -> str:
    if np.isclose(spot, strike):
        return "ATM"
    return "ITM" if spot < strike else "OTM"


def model_path(model_dir: str | Path, model_kind: str, rep: RepKind, level: int) -> Path:
    return Path(model_dir) / f"{model_kind}-{rep.value}-N{level}.npz"


def build_provider(cfg: ExperimentConfig, level: int, kind: Optional[RepKind] = None) -> RepProvider:
    kind = kind or cfg.representation.kind
    if kind is RepKind.ANALYTIC:
        try:
            return AnalyticProvider.for_model(cfg.model, level, cfg.signature.mode)
        except ValueError as exc:
            raise ConfigError(str(exc), cause=exc) from exc
    if kind is RepKind.EXACT:
        return ExactProvider(level=level)
    if kind is RepKind.ZERO:
        return ZeroProvider(level=level)
    if cfg.representation.model_dir is None:
        raise ConfigError(f"representation.model_dir is required for {kind.value} representations")
    path = model_path(cfg.representation.model_dir, cfg.model.kind, kind, level)
    if not path.exists():
        raise ConfigError(f"trained model file not found: {path}")
    model = load_model(path)
    if model.level != level:
        raise ConfigError(f"{path} holds a level-{model.level} model, expected level {level}")
    return LearnedProvider(model, cfg.signature.mode)


def _run_meta(cfg: ExperimentConfig) -> dict:
    return {
        "seed": cfg.run.seed,
        "J": cfg.grid.steps,
        "T": cfg.grid.maturity,
        "sig_mode": cfg.signature.mode.value,
    }


def repr_row(
    cfg: ExperimentConfig, exp_id: str, paths: PathSet, provider: RepProvider, label: str
) -> ReprErrorRow:
    rep = provider.streams(paths)
    mae_v, sd_v = mae_overall(paths.v, rep.v_tilde)
    mae_i, sd_i = mae_overall(paths.i, rep.i_tilde)
    return ReprErrorRow(
        experiment_id=exp_id,
        model=cfg.model.kind,
        representation=label,
        N=provider.level,
        mae_v=mae_v,
        sd_v=sd_v,
        mae_I=mae_i,
        sd_I=sd_i,
        M=paths.count,
        **_run_meta(cfg),
    )


# ── Reconstruction errors ─────────────────────────────────────────────────────


def run_repr_error(cfg: ExperimentConfig) -> ExperimentResult:
    cfg = cfg.effective()
    exp_id = experiment_id(cfg, "repr")
    result = ExperimentResult()
    started = time.perf_counter()
    paths = simulate(cfg.model, cfg.grid, cfg.run.paths, cfg.run.seed, workers=cfg.run.workers)
    result.runtimes["simulate"] = time.perf_counter() - started

    for level in cfg.run.levels:
        t0 = time.perf_counter()
        provider = build_provider(cfg, level)
        result.repr_rows.append(repr_row(cfg, exp_id, paths, provider, cfg.representation.kind.value))
        result.runtimes[f"N{level}"] = time.perf_counter() - t0
        logger.info(
            "Representation error computed",
            extra={"model": cfg.model.kind, "level": level, "mae_v": result.repr_rows[-1].mae_v},
        )
    return result


# ── Pricing errors ────────────────────────────────────────────────────────────


def benchmark_price(cfg: ExperimentConfig, spot: float) -> PriceReport:
    """Benchmark price for one spot, served from the disk cache when available."""
    key = {
        "format": BENCHMARK_CACHE_FORMAT,
        "version": __version__,
        "model": cfg.model.model_dump(mode="json"),
        "sabr": cfg.sabr.model_dump(mode="json"),
        "option": cfg.option.model_dump(mode="json"),
        "grid": cfg.grid.model_dump(mode="json"),
        "paths": cfg.run.paths,
        "seed": cfg.run.seed,
        "spot": spot,
    }
    cache = benchmark_cache()
    cached = cache.get(key)
    if cached is not None:
        logger.debug("Benchmark cache hit", extra={"spot": spot, "model": cfg.model.kind})
        return PriceReport.model_validate(cached)
    report = mc_price_benchmark(
        cfg.model, cfg.sabr, cfg.option, cfg.grid, cfg.run.paths, spot, cfg.run.seed, cfg.run.workers
    )
    cache.set(key, report.model_dump(mode="json"))
    return report


def _price_rows(
    cfg: ExperimentConfig,
    exp_id: str,
    provider: RepProvider,
    label: str,
    benchmarks: dict[float, PriceReport],
) -> list[PriceErrorRow]:
    rows: list[PriceErrorRow] = []
    pde_grid = cfg.pde_grid()
    for spot in cfg.run.spots:
        mc = mc_price_sig(
            provider, cfg.model, cfg.sabr, cfg.option, cfg.grid, cfg.run.paths, spot, cfg.run.seed, cfg.run.workers
        )
        pde = pde_price(
            provider,
            cfg.model,
            cfg.sabr,
            cfg.option,
            cfg.grid,
            pde_grid,
            cfg.run.w_paths,
            spot,
            cfg.run.seed,
            cfg.signature.coeff_mode,
            cfg.signature.mode,
            cfg.run.workers,
        )
        bench = benchmarks[spot].estimate
        for report in (mc, pde):
            rows.append(
                PriceErrorRow(
                    experiment_id=exp_id,
                    model=cfg.model.kind,
                    method=report.method.value,
                    representation=label,
                    N=provider.level,
                    moneyness=moneyness(spot, cfg.option.strike),
                    x_init=spot,
                    price=report.estimate,
                    stderr=report.stderr,
                    benchmark=bench,
                    error=abs(report.estimate - bench),
                    M=cfg.run.paths,
                    M_w=cfg.run.w_paths,
                    coeff_mode=cfg.signature.coeff_mode.value,
                    **_run_meta(cfg),
                )
            )
    return rows


def run_pricing_table(cfg: ExperimentConfig) -> ExperimentResult:
    cfg = cfg.effective()
    exp_id = experiment_id(cfg, "price")
    result = ExperimentResult()
    t0 = time.perf_counter()
    benchmarks = {spot: benchmark_price(cfg, spot) for spot in cfg.run.spots}
    result.runtimes["benchmark"] = time.perf_counter() - t0

    for level in cfg.run.levels:
        t0 = time.perf_counter()
        provider = build_provider(cfg, level)
        result.price_rows += _price_rows(cfg, exp_id, provider, cfg.representation.kind.value, benchmarks)
        result.runtimes[f"N{level}"] = time.perf_counter() - t0
        logger.info("Pricing rows computed", extra={"model": cfg.model.kind, "level": level})
    return result


# ── Learned sweep ─────────────────────────────────────────────────────────────


def train_models(
    cfg: ExperimentConfig, train: PathSet, level: int
) -> tuple[LinearRepModel, NonlinearRepModel]:
    linear = fit_linear(train, level, cfg.train, cfg.signature.mode)
    nonlinear = train_nonlinear(train, level, cfg.train, cfg.signature.mode)
    if cfg.representation.model_dir is not None:
        save_model(linear, model_path(cfg.representation.model_dir, cfg.model.kind, RepKind.LINEAR, level))
        save_model(nonlinear, model_path(cfg.representation.model_dir, cfg.model.kind, RepKind.NONLINEAR, level))
    return linear, nonlinear


def run_learned_sweep(cfg: ExperimentConfig) -> ExperimentResult:
    """Per level: 2 held-out MAE rows and 12 pricing rows (2 reps × 2 methods × 3 spots)."""
    cfg = cfg.effective()
    if cfg.signature.coeff_mode is CoeffMode.SHUFFLE_PAIR:
        raise ConfigError("learned representations are time dependent; use coeff_mode = \"scalar\"")
    exp_id = experiment_id(cfg, "learned")
    result = ExperimentResult()
    run = cfg.run

    t0 = time.perf_counter()
    train = simulate(cfg.model, cfg.grid, run.train_paths, run.seed, workers=run.workers)
    test = simulate(
        cfg.model,
        cfg.grid,
        run.test_paths,
        run.seed,
        workers=run.workers,
        indices=np.arange(run.train_paths, run.train_paths + run.test_paths),
    )
    benchmarks = {spot: benchmark_price(cfg, spot) for spot in run.spots}
    result.runtimes["setup"] = time.perf_counter() - t0

    for level in run.levels:
        t0 = time.perf_counter()
        linear, nonlinear = train_models(cfg, train, level)
        for model, kind in ((linear, RepKind.LINEAR), (nonlinear, RepKind.NONLINEAR)):
            provider = LearnedProvider(model, cfg.signature.mode)
            result.repr_rows.append(repr_row(cfg, exp_id, test, provider, kind.value))
            result.price_rows += _price_rows(cfg, exp_id, provider, kind.value, benchmarks)
        result.runtimes[f"N{level}"] = time.perf_counter() - t0
        logger.info(
            "Learned sweep level done",
            extra={
                "model": cfg.model.kind,
                "level": level,
                "mae_linear": result.repr_rows[-2].mae_v,
                "mae_nonlinear": result.repr_rows[-1].mae_v,
            },
        )
    return result
