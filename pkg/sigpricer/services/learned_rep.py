"""
sigpricer/services/learned_rep.py – data-driven signature representations of the variance.

LinearRepModel
    One ridge regression per grid index j on the signature features Ŵ_j^N,
    solved from the normal equations with a Cholesky factorisation. The
    coefficient rows live in the canonical word basis, so row j reads as a
    TensorPoly ℓ̂_j comparable with the closed-form coefficients.

NonlinearRepModel
    A feed-forward network on (t_j, Ŵ_j^N) trained by mini-batch Adam on the
    mean squared error, with the best validation checkpoint kept. By default
    it learns the residual of the linear fit and starts from a zero output
    layer, so training begins exactly at the linear model.

Training and validation rows are split by whole path.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from tenacity import before_sleep_log, retry, retry_if_exception_type, stop_after_attempt

from sigpricer.config import settings
from sigpricer.errors import ConfigError, LevelMismatchError, NonFiniteLossError, SingularSystemError
from sigpricer.models import Activation, SigMode, TrainConfig
from sigpricer.services.analytic_rep import RepBatch, RepStream
from sigpricer.services.rng import chunked
from sigpricer.services.signature import SigStream, TimeExtendedPath, ito_integral_series, signature_batch
from sigpricer.services.tensor_algebra import TensorPoly, dense_dimension
from sigpricer.services.vol_models import PathSet

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


# ── Features ──────────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class FeatureMatrix:
    """Rows (path, j) of [t_j, Ŵ_j^N in canonical word order]; shape (M, J+1, 1 + D)."""

    level: int
    dt: float
    mode: SigMode
    values: np.ndarray

    @property
    def signature(self) -> np.ndarray:
        return self.values[..., 1:]

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1, self.values.shape[-1])


def build_features(dt: float, dw: np.ndarray, n: int, mode: SigMode = SigMode.ITO_LEFT) -> FeatureMatrix:
    sig = signature_batch(dt, dw, n, mode)
    times = np.broadcast_to(dt * np.arange(sig.shape[1])[None, :, None], sig.shape[:2] + (1,))
    return FeatureMatrix(level=n, dt=dt, mode=mode, values=np.concatenate([times, sig], axis=-1))


def _budget_count(item_bytes: int, cap: Optional[int] = None) -> int:
    """How many items of `item_bytes` fit in the gram memory budget, at least one."""
    count = max(1, int(settings.gram_memory_mb * 2**20 // item_bytes))
    return count if cap is None else min(count, cap)


def _signature_blocks(dt: float, dw: np.ndarray, n: int, mode: SigMode):
    steps, dim = dw.shape[1], dense_dimension(n)
    size = _budget_count((steps + 1) * dim * 8, settings.path_batch_size)
    for rows in chunked(np.arange(dw.shape[0]), size):
        yield rows, signature_batch(dt, dw[rows], n, mode)


# ── Linear representation ─────────────────────────────────────────────────────


@dataclass(frozen=True)
class LinearRepModel:
    level: int
    dt: float
    mode: SigMode
    ridge: float
    coefficients: np.ndarray  # (J+1, D)

    @property
    def steps(self) -> int:
        return self.coefficients.shape[0] - 1

    def ell(self, j: int) -> TensorPoly:
        return TensorPoly.from_dense(self.coefficients[j], self.level)

    def predict_values(self, dt: float, dw: np.ndarray) -> np.ndarray:
        _check_grid(self, dt, dw)
        out = np.empty((dw.shape[0], dw.shape[1] + 1))
        for rows, sig in _signature_blocks(dt, dw, self.level, self.mode):
            out[rows] = np.einsum("mjd,jd->mj", sig, self.coefficients)
        return out


def fit_linear(
    train: PathSet, n: int, cfg: TrainConfig, mode: SigMode = SigMode.ITO_LEFT
) -> LinearRepModel:
    """Per-j ridge regression of v_j on Ŵ_j^N: (XᵀX + ridge·I) ℓ = Xᵀv."""
    dim = dense_dimension(n)
    if cfg.ridge == 0.0 and train.count < dim:
        raise SingularSystemError(
            f"{train.count} training paths for {dim} signature features; set train.ridge > 0"
        )
    steps = train.grid.steps
    coefficients = np.empty((steps + 1, dim))
    eye = np.eye(dim)
    # at most gram_memory_mb of normal equations live at once; signatures are re-streamed per window
    windows = chunked(np.arange(steps + 1), _budget_count(dim * dim * 8))
    for cols in windows:
        gram = np.zeros((cols.size, dim, dim))
        rhs = np.zeros((cols.size, dim))
        for rows, sig in _signature_blocks(train.grid.dt, train.dw, n, mode):
            block = sig[:, cols]
            gram += np.einsum("mjd,mje->jde", block, block)
            rhs += np.einsum("mjd,mj->jd", block, train.v[rows][:, cols])
        for k, j in enumerate(cols):
            coefficients[j] = _solve_normal(gram[k] + cfg.ridge * eye, rhs[k], int(j))

    logger.info(
        "Fitted linear signature representation",
        extra={"level": n, "paths": train.count, "ridge": cfg.ridge, "mode": mode.value, "windows": len(windows)},
    )
    return LinearRepModel(level=n, dt=train.grid.dt, mode=mode, ridge=cfg.ridge, coefficients=coefficients)


def _solve_normal(system: np.ndarray, rhs: np.ndarray, j: int) -> np.ndarray:
    # Jacobi scaling leaves the solution unchanged and keeps the factorisation stable
    diag = np.diag(system)
    scale = np.where(diag > 0, 1.0 / np.sqrt(np.where(diag > 0, diag, 1.0)), 0.0)
    if not np.all(scale > 0):
        raise SingularSystemError(f"normal equations at grid index {j} are singular; set train.ridge > 0")
    try:
        factor = cho_factor(system * scale[:, None] * scale[None, :])
    except LinAlgError as exc:
        raise SingularSystemError(
            f"normal equations at grid index {j} are not positive definite; set train.ridge > 0",
            cause=exc,
        ) from exc
    return scale * cho_solve(factor, scale * rhs)


# ── Nonlinear representation ──────────────────────────────────────────────────


@dataclass(frozen=True)
class NonlinearRepModel:
    level: int
    dt: float
    steps: int
    mode: SigMode
    activation: Activation
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float
    base: Optional[LinearRepModel] = None
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        sizes = self.layer_sizes
        for k, (w, b) in enumerate(zip(self.weights, self.biases, strict=True)):
            if w.shape != (sizes[k], sizes[k + 1]) or b.shape != (sizes[k + 1],):
                raise ValueError(f"layer {k} has shape {w.shape}/{b.shape}, expected chain {sizes}")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError(f"layer {k} holds non-finite weights")
        if sizes[-1] != 1:
            raise ValueError("the network must have a scalar output")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def predict_values(self, dt: float, dw: np.ndarray) -> np.ndarray:
        _check_grid(self, dt, dw)
        out = np.empty((dw.shape[0], dw.shape[1] + 1))
        for rows in chunked(np.arange(dw.shape[0]), settings.path_batch_size):
            features = build_features(dt, dw[rows], self.level, self.mode)
            x = (features.flat - self.x_mean) / self.x_std
            scaled = _forward(self.weights, self.biases, x, self.activation)[-1][:, 0]
            out[rows] = (self.y_mean + self.y_std * scaled).reshape(rows.size, -1)
        if self.base is not None:
            out += self.base.predict_values(dt, dw)
        return out


def _activate(z: np.ndarray, activation: Activation) -> np.ndarray:
    return np.tanh(z) if activation is Activation.TANH else np.maximum(z, 0.0)


def _activate_grad(a: np.ndarray, activation: Activation) -> np.ndarray:
    """Derivative expressed through the activation output."""
    return 1.0 - a**2 if activation is Activation.TANH else (a > 0).astype(float)


def _forward(
    weights: list[np.ndarray], biases: list[np.ndarray], x: np.ndarray, activation: Activation
) -> list[np.ndarray]:
    """Layer outputs [x, a_1, ..., a_L]; the last layer is linear."""
    outs = [x]
    for k, (w, b) in enumerate(zip(weights, biases)):
        z = outs[-1] @ w + b
        outs.append(z if k == len(weights) - 1 else _activate(z, activation))
    return outs


def loss_and_grads(
    weights: list[np.ndarray],
    biases: list[np.ndarray],
    x: np.ndarray,
    y: np.ndarray,
    activation: Activation,
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Mean squared error and its gradients by backpropagation."""
    outs = _forward(weights, biases, x, activation)
    residual = outs[-1][:, 0] - y
    loss = float(np.mean(residual**2))
    delta = (2.0 / y.size) * residual[:, None]
    grad_w: list[np.ndarray] = [np.empty(0)] * len(weights)
    grad_b: list[np.ndarray] = [np.empty(0)] * len(weights)
    for k in range(len(weights) - 1, -1, -1):
        grad_w[k] = outs[k].T @ delta
        grad_b[k] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ weights[k].T) * _activate_grad(outs[k], activation)
    return loss, grad_w, grad_b


def gradient_check(
    weights: list[np.ndarray],
    biases: list[np.ndarray],
    x: np.ndarray,
    y: np.ndarray,
    activation: Activation = Activation.TANH,
    eps: float = 1e-5,
) -> float:
    """Largest relative error between backprop and central-difference gradients."""
    _, grad_w, grad_b = loss_and_grads(weights, biases, x, y, activation)
    worst = 0.0
    for params, grads in ((weights, grad_w), (biases, grad_b)):
        for p, g in zip(params, grads):
            flat, gflat = p.reshape(-1), g.reshape(-1)
            for idx in range(flat.size):
                saved = flat[idx]
                flat[idx] = saved + eps
                up = loss_and_grads(weights, biases, x, y, activation)[0]
                flat[idx] = saved - eps
                down = loss_and_grads(weights, biases, x, y, activation)[0]
                flat[idx] = saved
                numeric = (up - down) / (2.0 * eps)
                denom = max(abs(numeric), abs(gflat[idx]), 1e-12)
                worst = max(worst, abs(numeric - gflat[idx]) / denom)
    return worst


def _init_layers(
    sizes: list[int], rng: np.random.Generator, zero_output: bool
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    weights, biases = [], []
    for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        if zero_output and k == len(sizes) - 2:
            w = np.zeros_like(w)
        weights.append(w)
        biases.append(np.zeros(fan_out))
    return weights, biases


def split_paths(count: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """(train rows, validation rows), whole paths only."""
    perm = np.random.default_rng(seed).permutation(count)
    n_val = min(max(1, int(round(fraction * count))), count - 1)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def train_nonlinear(
    train: PathSet, n: int, cfg: TrainConfig, mode: SigMode = SigMode.ITO_LEFT
) -> NonlinearRepModel:
    if train.count < 2:
        raise ValueError("nonlinear training needs at least two paths")
    fit_rows, val_rows = split_paths(train.count, cfg.validation_fraction, cfg.seed)
    # base fitted on the training rows only
    base = fit_linear(train.subset(fit_rows), n, cfg, mode) if cfg.residual_on_linear else None
    target = train.v - base.predict_values(train.grid.dt, train.dw) if base is not None else train.v

    features = build_features(train.grid.dt, train.dw, n, mode)
    width = features.values.shape[-1]
    x_fit = features.values[fit_rows].reshape(-1, width)
    x_val = features.values[val_rows].reshape(-1, width)
    y_fit, y_val = target[fit_rows].reshape(-1), target[val_rows].reshape(-1)

    x_mean = x_fit.mean(axis=0)
    x_std = x_fit.std(axis=0)
    x_std[x_std == 0.0] = 1.0
    y_mean = float(y_fit.mean())
    y_std = float(y_fit.std()) or 1.0
    x_fit, x_val = (x_fit - x_mean) / x_std, (x_val - x_mean) / x_std
    y_fit, y_val = (y_fit - y_mean) / y_std, (y_val - y_mean) / y_std

    rng = np.random.default_rng(cfg.seed)
    sizes = [width, *cfg.hidden_sizes, 1]
    weights, biases = _init_layers(sizes, rng, zero_output=cfg.residual_on_linear)
    state = {
        "weights": weights,
        "biases": biases,
        "best": (np.inf, [w.copy() for w in weights], [b.copy() for b in biases]),
        "lr": cfg.learning_rate,
        "attempts": 0,
        "train_loss": [],
        "val_loss": [],
    }

    @retry(
        retry=retry_if_exception_type(NonFiniteLossError),
        stop=stop_after_attempt(cfg.max_restarts + 1),
        before_sleep=before_sleep_log(logger, logging.WARNING),
        reraise=True,
    )
    def _run() -> None:
        _, best_w, best_b = state["best"]
        state["attempts"] += 1
        if state["attempts"] > 1:
            # restart after divergence from the best checkpoint at half the step size
            state["lr"] *= 0.5
            state["weights"] = [w.copy() for w in best_w]
            state["biases"] = [b.copy() for b in best_b]
        _adam_epochs(state, x_fit, y_fit, x_val, y_val, cfg, rng)

    _run()

    best_val, best_w, best_b = state["best"]
    logger.info(
        "Trained nonlinear signature representation",
        extra={
            "level": n,
            "paths": train.count,
            "epochs": cfg.epochs,
            "best_val_loss": best_val,
            "residual_on_linear": cfg.residual_on_linear,
        },
    )
    return NonlinearRepModel(
        level=n,
        dt=train.grid.dt,
        steps=train.grid.steps,
        mode=mode,
        activation=cfg.activation,
        weights=best_w,
        biases=best_b,
        x_mean=x_mean,
        x_std=x_std,
        y_mean=y_mean,
        y_std=y_std,
        base=base,
        train_loss=list(state["train_loss"]),
        val_loss=list(state["val_loss"]),
    )


def _adam_epochs(
    state: dict,
    x_fit: np.ndarray,
    y_fit: np.ndarray,
    x_val: np.ndarray,
    y_val: np.ndarray,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> None:
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    weights, biases = state["weights"], state["biases"]
    params = weights + biases
    m = [np.zeros_like(p) for p in params]
    s = [np.zeros_like(p) for p in params]
    step = 0

    def _val_loss() -> float:
        pred = _forward(weights, biases, x_val, cfg.activation)[-1][:, 0]
        return float(np.mean((pred - y_val) ** 2))

    if not np.isfinite(state["best"][0]):
        state["best"] = (_val_loss(), [w.copy() for w in weights], [b.copy() for b in biases])

    for epoch in range(cfg.epochs):
        lr = state["lr"] * cfg.lr_decay**epoch
        order = rng.permutation(y_fit.size)
        epoch_loss = 0.0
        for batch in chunked(order, cfg.batch_size):
            loss, grad_w, grad_b = loss_and_grads(weights, biases, x_fit[batch], y_fit[batch], cfg.activation)
            if not np.isfinite(loss):
                raise NonFiniteLossError(f"training loss became {loss} at epoch {epoch}")
            step += 1
            for k, (p, g) in enumerate(zip(params, grad_w + grad_b)):
                m[k] = beta1 * m[k] + (1 - beta1) * g
                s[k] = beta2 * s[k] + (1 - beta2) * g**2
                m_hat = m[k] / (1 - beta1**step)
                s_hat = s[k] / (1 - beta2**step)
                p -= lr * m_hat / (np.sqrt(s_hat) + eps)
            epoch_loss += loss * batch.size
        val = _val_loss()
        if not np.isfinite(val):
            raise NonFiniteLossError(f"validation loss became {val} at epoch {epoch}")
        state["train_loss"].append(epoch_loss / y_fit.size)
        state["val_loss"].append(val)
        if val < state["best"][0]:
            state["best"] = (val, [w.copy() for w in weights], [b.copy() for b in biases])


# ── Prediction ────────────────────────────────────────────────────────────────


RepModel = Union[LinearRepModel, NonlinearRepModel]


def _check_grid(model: RepModel, dt: float, dw: np.ndarray) -> None:
    if dw.shape[-1] != model.steps or not np.isclose(dt, model.dt, rtol=1e-12, atol=0.0):
        raise ValueError(
            f"model trained on {model.steps} steps of {model.dt}, got {dw.shape[-1]} steps of {dt}"
        )


def _check_mode(model: RepModel, mode: SigMode) -> None:
    if mode is not model.mode:
        raise ConfigError(
            f"model trained on {model.mode.value} signatures cannot score {mode.value} signatures"
        )


def predict(model: RepModel, sig: SigStream, path: TimeExtendedPath) -> RepStream:
    _check_mode(model, sig.mode)
    if sig.level_cap != model.level:
        raise LevelMismatchError(f"model of level {model.level} given a level-{sig.level_cap} signature")
    if isinstance(model, LinearRepModel):
        _check_grid(model, path.dt, path.dw[None, :])
        v_hat = np.einsum("jd,jd->j", sig.values, model.coefficients)
    else:
        v_hat = model.predict_values(path.dt, path.dw[None, :])[0]
    kind = "learned-linear" if isinstance(model, LinearRepModel) else "learned-nonlinear"
    return RepStream(v_hat, ito_integral_series(v_hat, path.dw), model.level, kind)


@dataclass(frozen=True)
class LearnedProvider:
    model: RepModel
    mode: Optional[SigMode] = None

    def __post_init__(self) -> None:
        if self.mode is not None:
            _check_mode(self.model, self.mode)

    @property
    def level(self) -> int:
        return self.model.level

    @property
    def provenance(self) -> str:
        return "learned-linear" if isinstance(self.model, LinearRepModel) else "learned-nonlinear"

    def streams(self, paths: PathSet) -> RepBatch:
        v_hat = self.model.predict_values(paths.grid.dt, paths.dw)
        return RepBatch(v_hat, ito_integral_series(v_hat, paths.dw), self.level, self.provenance)


# ── Persistence ───────────────────────────────────────────────────────────────


def save_model(model: RepModel, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"format_version": FORMAT_VERSION, "level": model.level, "dt": model.dt, "mode": model.mode.value}
    if isinstance(model, LinearRepModel):
        arrays = {"kind": "linear", "ridge": model.ridge, "coefficients": model.coefficients}
    else:
        arrays = {
            "kind": "nonlinear",
            "steps": model.steps,
            "activation": model.activation.value,
            "layer_sizes": np.asarray(model.layer_sizes),
            "x_mean": model.x_mean,
            "x_std": model.x_std,
            "y_mean": model.y_mean,
            "y_std": model.y_std,
            "train_loss": np.asarray(model.train_loss),
            "val_loss": np.asarray(model.val_loss),
        }
        for k, (w, b) in enumerate(zip(model.weights, model.biases)):
            arrays[f"w{k}"] = w
            arrays[f"b{k}"] = b
        if model.base is not None:
            arrays["base_ridge"] = model.base.ridge
            arrays["base_coefficients"] = model.base.coefficients
    with path.open("wb") as fh:
        np.savez(fh, **header, **arrays)
    return path


def load_model(path: str | Path) -> RepModel:
    with np.load(Path(path), allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {version}")
        level, dt, mode = int(data["level"]), float(data["dt"]), SigMode(str(data["mode"]))
        kind = str(data["kind"])
        if kind == "linear":
            return LinearRepModel(level, dt, mode, float(data["ridge"]), data["coefficients"])
        if kind != "nonlinear":
            raise ValueError(f"unknown model kind {kind!r}")
        layers = len(data["layer_sizes"]) - 1
        base = None
        if "base_coefficients" in data.files:
            base = LinearRepModel(level, dt, mode, float(data["base_ridge"]), data["base_coefficients"])
        return NonlinearRepModel(
            level=level,
            dt=dt,
            steps=int(data["steps"]),
            mode=mode,
            activation=Activation(str(data["activation"])),
            weights=[data[f"w{k}"] for k in range(layers)],
            biases=[data[f"b{k}"] for k in range(layers)],
            x_mean=data["x_mean"],
            x_std=data["x_std"],
            y_mean=float(data["y_mean"]),
            y_std=float(data["y_std"]),
            base=base,
            train_loss=data["train_loss"].tolist(),
            val_loss=data["val_loss"].tolist(),
        )
