"""
sigpricer/cli.py – command-line harness.

    sigpricer [global flags] <command> [command flags]

Commands: simulate, repr-error, train, price, table2, table3, learned-sweep.
Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from collections.abc import Sequence
from pathlib import Path
from typing import Any, Optional

import numpy as np
import pandas as pd
from pydantic import ValidationError

from sigpricer.config import config_load, settings
from sigpricer.errors import ConfigError, NumericalError
from sigpricer.models import (
    CoeffMode,
    ExperimentConfig,
    MGBMParams,
    OUParams,
    PriceErrorRow,
    PriceMethod,
    RBergomiParams,
    ReprErrorRow,
    RepKind,
    RHestonParams,
    SigMode,
)
from sigpricer.services import experiments
from sigpricer.services.learned_rep import LearnedProvider
from sigpricer.services.pricing import mc_price_benchmark, mc_price_sig, pde_price_with_profile
from sigpricer.services.results import results_write, write_frame, write_metadata
from sigpricer.services.signature import signature_stream, stream_frame
from sigpricer.services.vol_models import mean_check, pathset_frame, simulate

logger = logging.getLogger(__name__)

DEFAULT_PARAMS = {
    "ou": OUParams,
    "mgbm": MGBMParams,
    "rheston": RHestonParams,
    "rbergomi": RBergomiParams,
}


# ── Parser ────────────────────────────────────────────────────────────────────


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sigpricer", description="Signature volatility representations and option pricing.")
    ap.add_argument("--config", type=Path, help="TOML experiment configuration.")
    ap.add_argument("--seed", type=int, help="Master seed (overrides the config).")
    ap.add_argument("--out", type=Path, help="Output directory (overrides the config).")
    ap.add_argument(
        "--paper-scale",
        "--full-scale",
        dest="full_scale",
        action="store_true",
        help="Use 10^4 paths and 200 W-paths.",
    )
    ap.add_argument("--sig-mode", choices=[m.value for m in SigMode], help="Signature construction.")
    ap.add_argument("--coeff-mode", choices=[m.value for m in CoeffMode], help="PDE coefficient assembly.")
    ap.add_argument("--workers", type=int, help="Worker threads for path-level fan-out.")
    ap.add_argument("--log-level", default=None, help="Logging level (default from SIGPRICER_LOG_LEVEL).")

    sub = ap.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="Simulate the configured volatility model and dump paths.")
    sim.add_argument("--mean-check", action="store_true", help="Print the terminal-mean z-score report.")
    sim.add_argument("--dump-signature", type=Path, help="Write the signature stream of path 0 to this CSV.")
    sim.add_argument("--level", type=int, default=3, help="Truncation level for --dump-signature.")

    sub.add_parser("repr-error", help="Reconstruction MAEs for the configured model and representation.")

    train = sub.add_parser("train", help="Train linear and nonlinear representations per level.")
    train.add_argument("--model-dir", type=Path, help="Where to save models (default <out>/models).")

    price = sub.add_parser("price", help="Price one put.")
    price.add_argument("--method", choices=[m.value for m in PriceMethod], default=PriceMethod.MC_SIG.value)
    price.add_argument("--spot", type=float, help="Initial asset value (default: the strike).")
    price.add_argument("--level", type=int, help="Truncation level (default: highest configured level).")
    price.add_argument("--representation", choices=[k.value for k in RepKind], help="Overrides the config.")
    price.add_argument("--model-dir", type=Path, help="Directory holding trained models.")
    price.add_argument("--profile", type=Path, help="Also write the averaged u_0(x) profile (pde only).")

    for name, default, text in (
        ("table2", "ou,mgbm", "Reconstruction MAE table for several models."),
        ("table3", "ou,mgbm", "Pricing error table for several models."),
        ("learned-sweep", "rheston,rbergomi", "Learned representation sweep."),
    ):
        cmd = sub.add_parser(name, help=text)
        cmd.add_argument("--models", default=default, help=f"Comma-separated model kinds (default {default}).")
    return ap


# ── Configuration ─────────────────────────────────────────────────────────────


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = config_load(args.config) if args.config else ExperimentConfig()
    data: dict[str, Any] = cfg.model_dump(mode="json")
    if args.seed is not None:
        data["run"]["seed"] = args.seed
    if args.workers is not None:
        data["run"]["workers"] = args.workers
    if args.full_scale:
        data["run"]["full_scale"] = True
    if args.sig_mode:
        data["signature"]["mode"] = args.sig_mode
    if args.coeff_mode:
        data["signature"]["coeff_mode"] = args.coeff_mode
    if args.out is not None:
        data["output_dir"] = str(args.out)
    elif args.config is None:
        data["output_dir"] = settings.output_dir
    model_dir = getattr(args, "model_dir", None)
    if model_dir is not None:
        data["representation"]["model_dir"] = str(model_dir)
    if getattr(args, "representation", None):
        data["representation"]["kind"] = args.representation
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid command-line override: {exc.errors()[0]['msg']}", cause=exc) from exc


def for_model(cfg: ExperimentConfig, kind: str) -> ExperimentConfig:
    """`cfg` with its model swapped for `kind` (configured parameters kept when the kind matches)."""
    if kind not in DEFAULT_PARAMS:
        raise ConfigError(f"unknown model kind {kind!r}; choose from {', '.join(DEFAULT_PARAMS)}")
    if cfg.model.kind == kind:
        return cfg
    data = cfg.model_dump(mode="json")
    data["model"] = DEFAULT_PARAMS[kind]().model_dump(mode="json")
    return ExperimentConfig.model_validate(data)


def _kinds(text: str) -> list[str]:
    return [k.strip() for k in text.split(",") if k.strip()]


# ── Commands ──────────────────────────────────────────────────────────────────


def cmd_simulate(cfg: ExperimentConfig, args: argparse.Namespace) -> None:
    cfg = cfg.effective()
    out = Path(cfg.output_dir)
    t0 = time.perf_counter()
    paths = simulate(cfg.model, cfg.grid, cfg.run.paths, cfg.run.seed, workers=cfg.run.workers)
    csv_path = write_frame(pathset_frame(paths), out / "simulate.csv")
    write_metadata(
        out / "simulate.meta.json",
        cfg,
        {"resampled": paths.resampled, "runtimes_s": {"simulate": time.perf_counter() - t0}},
    )
    print(f"wrote {csv_path}")
    if args.mean_check:
        try:
            report = mean_check(cfg.model, cfg.grid, max(cfg.run.paths, 1000), cfg.run.seed, workers=cfg.run.workers)
        except ValueError as exc:
            raise ConfigError(f"--mean-check: {exc}", cause=exc) from exc
        print(report.model_dump_json(indent=2))
    if args.dump_signature:
        sig = signature_stream(paths.path(0), args.level, cfg.signature.mode)
        print(f"wrote {write_frame(stream_frame(sig), args.dump_signature)}")


def cmd_repr_error(cfg: ExperimentConfig, args: argparse.Namespace) -> None:
    result = experiments.run_repr_error(cfg)
    print(f"wrote {results_write(result.repr_rows, cfg.output_dir, 'repr_error', cfg, result.runtimes)}")


def cmd_train(cfg: ExperimentConfig, args: argparse.Namespace) -> None:
    if cfg.representation.model_dir is None:
        data = cfg.model_dump(mode="json")
        data["representation"]["model_dir"] = str(Path(cfg.output_dir) / "models")
        cfg = ExperimentConfig.model_validate(data)
    cfg = cfg.effective()
    run = cfg.run
    train = simulate(cfg.model, cfg.grid, run.train_paths, run.seed, workers=run.workers)
    test = simulate(
        cfg.model,
        cfg.grid,
        run.test_paths,
        run.seed,
        workers=run.workers,
        indices=np.arange(run.train_paths, run.train_paths + run.test_paths),
    )
    exp_id = experiments.experiment_id(cfg, "train")
    rows, runtimes = [], {}
    for level in run.levels:
        t0 = time.perf_counter()
        linear, nonlinear = experiments.train_models(cfg, train, level)
        for model, kind in ((linear, RepKind.LINEAR), (nonlinear, RepKind.NONLINEAR)):
            provider = LearnedProvider(model, cfg.signature.mode)
            rows.append(experiments.repr_row(cfg, exp_id, test, provider, kind.value))
        runtimes[f"N{level}"] = time.perf_counter() - t0
    print(f"models saved under {cfg.representation.model_dir}")
    print(f"wrote {results_write(rows, cfg.output_dir, 'train', cfg, runtimes)}")


def cmd_price(cfg: ExperimentConfig, args: argparse.Namespace) -> None:
    cfg = cfg.effective()
    spot = args.spot if args.spot is not None else cfg.option.strike
    level = args.level if args.level is not None else cfg.run.levels[-1]
    method = PriceMethod(args.method)
    run = cfg.run
    if method is PriceMethod.BENCHMARK:
        report = mc_price_benchmark(cfg.model, cfg.sabr, cfg.option, cfg.grid, run.paths, spot, run.seed, run.workers)
    else:
        provider = experiments.build_provider(cfg, level)
        if method is PriceMethod.MC_SIG:
            report = mc_price_sig(
                provider, cfg.model, cfg.sabr, cfg.option, cfg.grid, run.paths, spot, run.seed, run.workers
            )
        else:
            report, profile = pde_price_with_profile(
                provider,
                cfg.model,
                cfg.sabr,
                cfg.option,
                cfg.grid,
                cfg.pde_grid(),
                run.w_paths,
                spot,
                run.seed,
                cfg.signature.coeff_mode,
                cfg.signature.mode,
                run.workers,
            )
            if args.profile:
                frame = pd.DataFrame({"x": cfg.pde_grid().x, "u0": profile})
                print(f"wrote {write_frame(frame, args.profile)}")
    print(report.model_dump_json(indent=2))
    print(f"wrote {results_write([report], cfg.output_dir, 'price', cfg, {'price': report.wall_clock_s})}")


def _table(cfg: ExperimentConfig, kinds: Sequence[str], runner, name: str, repr_rows: bool, price_rows: bool) -> None:
    rows, runtimes = [], {}
    for kind in kinds:
        result = runner(for_model(cfg, kind))
        rows += (result.repr_rows if repr_rows else []) + (result.price_rows if price_rows else [])
        runtimes.update({f"{kind}.{key}": value for key, value in result.runtimes.items()})
    if repr_rows and price_rows:
        repr_only = [r for r in rows if isinstance(r, ReprErrorRow)]
        price_only = [r for r in rows if isinstance(r, PriceErrorRow)]
        print(f"wrote {results_write(repr_only, cfg.output_dir, f'{name}_mae', cfg, runtimes)}")
        print(f"wrote {results_write(price_only, cfg.output_dir, f'{name}_prices', cfg, runtimes)}")
        return
    print(f"wrote {results_write(rows, cfg.output_dir, name, cfg, runtimes)}")


def cmd_table2(cfg: ExperimentConfig, args: argparse.Namespace) -> None:
    _table(cfg, _kinds(args.models), experiments.run_repr_error, "table2", True, False)


def cmd_table3(cfg: ExperimentConfig, args: argparse.Namespace) -> None:
    _table(cfg, _kinds(args.models), experiments.run_pricing_table, "table3", False, True)


def cmd_learned_sweep(cfg: ExperimentConfig, args: argparse.Namespace) -> None:
    _table(cfg, _kinds(args.models), experiments.run_learned_sweep, "learned_sweep", True, True)


COMMANDS = {
    "simulate": cmd_simulate,
    "repr-error": cmd_repr_error,
    "train": cmd_train,
    "price": cmd_price,
    "table2": cmd_table2,
    "table3": cmd_table3,
    "learned-sweep": cmd_learned_sweep,
}


# ── Entry point ───────────────────────────────────────────────────────────────


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=(args.log_level or settings.log_level).upper(),
        format="%(levelname)s %(name)s – %(message)s",
    )
    try:
        cfg = resolve_config(args)
        COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        where = f" (line {exc.line}, column {exc.column})" if exc.line is not None else ""
        print(f"configuration error{where}: {exc}", file=sys.stderr)
        return 2
    except ValidationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
