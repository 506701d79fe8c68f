"""
sigpricer/services/signature.py – truncated signatures of the time-extended path (t, W_t).

Two constructions on a uniform grid:

ITO_LEFT  S^(k)_{j+1} = S^(k)_j + S^(k−1)_j ⊗ ΔŴ_j  (left-point, discrete Itô iterated sums)
CHEN      S_{0,j+1}  = S_{0,j} ⊗ exp⊗(ΔŴ_j)       (piecewise-linear path, geometric)

In both cases the increment of level k only involves lower levels at the left
endpoint, so every level is an exclusive cumulative sum over time and the
whole stream is computed without a Python loop over grid points.

Dense layout: column `Word.index` of a (J+1, 2^(N+1) − 1) table; level n
occupies the columns [2^n − 1, 2^(n+1) − 1).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from sigpricer.errors import LevelMismatchError
from sigpricer.models import SigMode
from sigpricer.services.tensor_algebra import TensorPoly, dense_dimension, word_at


def level_slice(n: int) -> slice:
    return slice((1 << n) - 1, (1 << (n + 1)) - 1)


# ── Paths ─────────────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class TimeExtendedPath:
    """W sampled on t_j = j·dt, j = 0..J, with W_0 = 0."""

    dt: float
    w: np.ndarray

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        w = np.array(self.w, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("w must be a non-empty 1-D array")
        if w[0] != 0.0:
            raise ValueError(f"W must start at 0, got {w[0]}")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @classmethod
    def from_increments(cls, dt: float, dw: np.ndarray) -> TimeExtendedPath:
        return cls(dt, np.concatenate(([0.0], np.cumsum(dw))))

    @property
    def steps(self) -> int:
        return self.w.size - 1

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.w.size)

    @property
    def dw(self) -> np.ndarray:
        return np.diff(self.w)

    def sub_path(self, start: int) -> TimeExtendedPath:
        """The path restarted at grid index `start` (time and W shifted to 0)."""
        return TimeExtendedPath(self.dt, self.w[start:] - self.w[start])


# ── Streams ───────────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class SigStream:
    """Truncated signature at every grid time; row j is Ŵ^N_{t_j}."""

    level_cap: int
    dt: float
    mode: SigMode
    values: np.ndarray

    @property
    def steps(self) -> int:
        return self.values.shape[0] - 1

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.values.shape[0])

    def level(self, n: int) -> np.ndarray:
        return self.values[:, level_slice(n)]

    def terminal(self) -> np.ndarray:
        return self.values[-1]


def _increment_tensor(dt: float, dw: np.ndarray) -> np.ndarray:
    return np.stack([np.full_like(dw, dt), dw], axis=-1)


def _outer(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """Last-axis tensor product keeping the canonical word order (left letters first)."""
    out = left[..., :, None] * right[..., None, :]
    return out.reshape(*out.shape[:-2], out.shape[-2] * out.shape[-1])


def signature_batch(dt: float, dw: np.ndarray, n: int, mode: SigMode = SigMode.ITO_LEFT) -> np.ndarray:
    """Signature streams for a batch of increment rows; returns shape (M, J+1, 2^(n+1)−1)."""
    if n < 0:
        raise ValueError(f"truncation level must be >= 0, got {n}")
    dw = np.atleast_2d(np.asarray(dw, dtype=float))
    paths, steps = dw.shape
    out = np.zeros((paths, steps + 1, dense_dimension(n)))
    out[:, :, 0] = 1.0
    if n == 0 or steps == 0:
        return out

    inc = _increment_tensor(dt, dw)
    if mode is SigMode.CHEN:
        powers = [np.ones((paths, steps, 1))]
        for m in range(1, n + 1):
            powers.append(_outer(powers[-1], inc) / m)

    for k in range(1, n + 1):
        if mode is SigMode.ITO_LEFT:
            step = _outer(out[:, :-1, level_slice(k - 1)], inc)
        else:
            step = sum(
                _outer(out[:, :-1, level_slice(k - m)], powers[m]) for m in range(1, k + 1)
            )
        out[:, 1:, level_slice(k)] = np.cumsum(step, axis=1)
    return out


def signature_stream(path: TimeExtendedPath, n: int, mode: SigMode = SigMode.ITO_LEFT) -> SigStream:
    values = signature_batch(path.dt, path.dw[None, :], n, mode)[0]
    values.setflags(write=False)
    return SigStream(level_cap=n, dt=path.dt, mode=mode, values=values)


# ── Pairing ───────────────────────────────────────────────────────────────────


def _check_levels(coeffs: TensorPoly, level_cap: int) -> None:
    if coeffs.level_cap > level_cap:
        raise LevelMismatchError(
            f"coefficients of level {coeffs.level_cap} cannot be paired "
            f"with a signature truncated at level {level_cap}"
        )


def pair_batch(coeffs: TensorPoly, values: np.ndarray, level_cap: int) -> np.ndarray:
    """⟨coeffs, Ŵ_j⟩ for every leading index of a dense signature array."""
    _check_levels(coeffs, level_cap)
    if coeffs.is_zero:
        return np.zeros(values.shape[:-1])
    idx = np.fromiter((w.index for w, _ in coeffs), dtype=int)
    c = np.fromiter((c for _, c in coeffs), dtype=float)
    return values[..., idx] @ c


def pair_series(coeffs: TensorPoly, sig: SigStream) -> np.ndarray:
    return pair_batch(coeffs, sig.values, sig.level_cap)


def pair(coeffs: TensorPoly, sig: SigStream, j: int) -> float:
    _check_levels(coeffs, sig.level_cap)
    if not 0 <= j <= sig.steps:
        raise IndexError(f"grid index {j} outside 0..{sig.steps}")
    row = sig.values[j]
    return float(sum(c * row[w.index] for w, c in coeffs))


def ito_integral_series(integrand: np.ndarray, dw: np.ndarray) -> np.ndarray:
    """Left-point sums Σ_{i<j} integrand_i ΔW_i along the last axis (0 at j = 0)."""
    integrand = np.asarray(integrand, dtype=float)
    body = np.cumsum(integrand[..., :-1] * dw, axis=-1)
    return np.concatenate([np.zeros(body.shape[:-1] + (1,)), body], axis=-1)


def time_integral_series(integrand: np.ndarray, dt: float) -> np.ndarray:
    """Left-point sums Σ_{i<j} integrand_i Δt."""
    integrand = np.asarray(integrand, dtype=float)
    return ito_integral_series(integrand, np.full(integrand.shape[-1] - 1, dt))


def ito_integrate_pairing(coeffs: TensorPoly, sig: SigStream, path: TimeExtendedPath, j: int) -> float:
    if not 0 <= j <= sig.steps:
        raise IndexError(f"grid index {j} outside 0..{sig.steps}")
    return float(ito_integral_series(pair_series(coeffs, sig), path.dw)[j])


# ── Diagnostics ───────────────────────────────────────────────────────────────


def chen_product(x: np.ndarray, y: np.ndarray, n: int) -> np.ndarray:
    """Truncated tensor product of two dense group-like elements."""
    out = np.zeros(dense_dimension(n))
    for k in range(n + 1):
        out[level_slice(k)] = sum(
            _outer(x[level_slice(i)], y[level_slice(k - i)]) for i in range(k + 1)
        )
    return out


def level_norms(sig: SigStream, j: int = -1) -> np.ndarray:
    """Euclidean norm of each level n = 1..N of the signature at grid index j."""
    row = sig.values[j]
    return np.array([np.linalg.norm(row[level_slice(k)]) for k in range(1, sig.level_cap + 1)])


def factorial_decay_profile(sig: SigStream, j: int = -1) -> np.ndarray:
    """d_n = (n! · max_w |S^(n)_j(w)|)^(1/n) for n = 1..N."""
    row = sig.values[j]
    return np.array(
        [
            (math.factorial(k) * np.abs(row[level_slice(k)]).max()) ** (1.0 / k)
            for k in range(1, sig.level_cap + 1)
        ]
    )


def stream_frame(sig: SigStream) -> pd.DataFrame:
    """Long-format table (j, t, word, value) for CSV dumps."""
    steps, dim = sig.values.shape
    words = [str(word_at(i)) for i in range(dim)]
    return pd.DataFrame(
        {
            "j": np.repeat(np.arange(steps), dim),
            "t": np.repeat(sig.times, dim),
            "word": np.tile(words, steps),
            "value": sig.values.reshape(-1),
        }
    )
