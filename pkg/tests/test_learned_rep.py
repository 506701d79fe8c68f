"""
tests/test_learned_rep.py – linear and nonlinear learned signature representations.
"""
from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from sigpricer.config import settings
from sigpricer.errors import ConfigError, LevelMismatchError, NonFiniteLossError, SingularSystemError
from sigpricer.models import Activation, Grid, OUParams, RHestonParams, SigMode, TrainConfig
from sigpricer.services import learned_rep
from sigpricer.services.analytic_rep import AnalyticProvider
from sigpricer.services.learned_rep import (
    LearnedProvider,
    LinearRepModel,
    NonlinearRepModel,
    build_features,
    fit_linear,
    gradient_check,
    load_model,
    predict,
    save_model,
    split_paths,
    train_nonlinear,
)
from sigpricer.services.signature import signature_stream
from sigpricer.services.tensor_algebra import dense_dimension
from sigpricer.services.vol_models import PathSet, simulate

OU = OUParams(kappa=1.0, theta=0.25, eta=1.2, v0=0.1)
GRID = Grid(maturity=1.0, steps=20)
FAST = TrainConfig(epochs=3, batch_size=64, hidden_sizes=[8], learning_rate=1e-2)


def _constant(paths: PathSet, c: float) -> PathSet:
    v = np.full_like(paths.v, c)
    return dataclasses.replace(paths, v=v, i=c * paths.w)


def _planted(count: int, level: int, seed: int = 11) -> tuple[PathSet, np.ndarray]:
    """OU paths whose variance is replaced by an exact level-N signature functional."""
    paths = simulate(OU, GRID, count, seed=seed)
    truth = AnalyticProvider.for_model(OU, level).streams(paths)
    return dataclasses.replace(paths, v=truth.v_tilde, i=truth.i_tilde), truth.v_tilde


def _mse(model, paths: PathSet) -> float:
    return float(np.mean((model.predict_values(paths.grid.dt, paths.dw) - paths.v) ** 2))


# ── Features ───────────────────────────────────────────────────────────────────


class TestFeatures:
    def test_layout(self):
        paths = simulate(OU, GRID, 3, seed=1)
        features = build_features(GRID.dt, paths.dw, 2)
        assert features.values.shape == (3, 21, 1 + dense_dimension(2))
        np.testing.assert_allclose(features.values[0, :, 0], GRID.dt * np.arange(21))
        np.testing.assert_allclose(features.signature[:, :, 0], 1.0)
        assert features.flat.shape == (63, 8)

    def test_split_keeps_whole_paths(self):
        fit, val = split_paths(10, 0.2, seed=7)
        assert len(val) == 2 and len(fit) == 8
        assert set(fit).isdisjoint(val)
        assert sorted(set(fit) | set(val)) == list(range(10))


# ── Linear ─────────────────────────────────────────────────────────────────────


class TestLinear:
    def test_constant_target(self):
        paths = _constant(simulate(OU, GRID, 30, seed=2), 0.3)
        model = fit_linear(paths, 2, TrainConfig())
        np.testing.assert_allclose(model.predict_values(GRID.dt, paths.dw), 0.3, atol=1e-6)
        assert model.ell(0)["∅"] == pytest.approx(0.3, abs=1e-6)
        assert model.coefficients.shape == (21, dense_dimension(2))

    def test_constant_target_on_held_out_paths(self):
        model = fit_linear(_constant(simulate(OU, GRID, 30, seed=2), 0.3), 2, TrainConfig())
        held_out = simulate(OU, GRID, 10, seed=12)
        np.testing.assert_allclose(model.predict_values(GRID.dt, held_out.dw), 0.3, atol=1e-6)

    def test_held_out_error_shrinks_as_features_nest(self):
        train = simulate(OU, GRID, 200, seed=21)
        held_out = simulate(OU, GRID, 100, seed=22)
        errors = [_mse(fit_linear(train, level, TrainConfig()), held_out) for level in range(1, 5)]
        assert all(b <= a for a, b in zip(errors, errors[1:])), errors

    def test_windowed_normal_equations(self, monkeypatch, caplog):
        paths = simulate(OU, GRID, 30, seed=13)
        whole = fit_linear(paths, 3, TrainConfig())
        monkeypatch.setattr(settings, "gram_memory_mb", 0)
        with caplog.at_level("INFO", logger="sigpricer.services.learned_rep"):
            windowed = fit_linear(paths, 3, TrainConfig())
        np.testing.assert_allclose(
            windowed.predict_values(GRID.dt, paths.dw), whole.predict_values(GRID.dt, paths.dw), atol=1e-10
        )
        fitted = [r for r in caplog.records if r.getMessage() == "Fitted linear signature representation"]
        assert fitted[-1].windows == GRID.steps + 1

    def test_recovers_planted_functional(self):
        level = 2
        paths, truth = _planted(4 * dense_dimension(level), level)
        model = fit_linear(paths, level, TrainConfig())
        fitted = model.predict_values(GRID.dt, paths.dw)
        assert np.mean((fitted - truth) ** 2) <= 1e-10
        assert np.abs(fitted - truth).max() <= 1e-5

    def test_unregularised_underdetermined_system(self):
        paths = simulate(OU, GRID, 5, seed=3)
        with pytest.raises(SingularSystemError):
            fit_linear(paths, 3, TrainConfig(ridge=0.0))

    def test_single_path_predict_matches_batch(self):
        paths, _ = _planted(40, 2)
        model = fit_linear(paths, 2, TrainConfig())
        batch = LearnedProvider(model).streams(paths)
        single = predict(model, signature_stream(paths.path(4), 2), paths.path(4))
        np.testing.assert_allclose(single.v_tilde, batch.v_tilde[4], atol=1e-12)
        np.testing.assert_allclose(single.i_tilde, batch.i_tilde[4], atol=1e-12)
        assert single.provenance == "learned-linear"
        assert batch.i_tilde[:, 0].tolist() == [0.0] * 40

    def test_level_mismatch(self):
        paths, _ = _planted(40, 2)
        model = fit_linear(paths, 2, TrainConfig())
        with pytest.raises(LevelMismatchError):
            predict(model, signature_stream(paths.path(0), 3), paths.path(0))

    def test_signature_mode_mismatch(self):
        paths, _ = _planted(40, 2)
        model = fit_linear(paths, 2, TrainConfig(), SigMode.ITO_LEFT)
        with pytest.raises(ConfigError):
            predict(model, signature_stream(paths.path(0), 2, SigMode.CHEN), paths.path(0))
        with pytest.raises(ConfigError):
            LearnedProvider(model, SigMode.CHEN)
        assert LearnedProvider(model, SigMode.ITO_LEFT).streams(paths).count == 40

    def test_grid_mismatch(self):
        paths, _ = _planted(40, 2)
        model = fit_linear(paths, 2, TrainConfig())
        other = simulate(OU, Grid(maturity=1.0, steps=10), 2, seed=1)
        with pytest.raises(ValueError):
            model.predict_values(other.grid.dt, other.dw)


# ── Nonlinear ──────────────────────────────────────────────────────────────────


class TestNonlinear:
    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(0)
        weights = [rng.normal(size=(3, 4)), rng.normal(size=(4, 1))]
        biases = [rng.normal(size=4), rng.normal(size=1)]
        x, y = rng.normal(size=(10, 3)), rng.normal(size=10)
        assert gradient_check(weights, biases, x, y, Activation.TANH) <= 1e-4

    def test_residual_model_starts_at_linear_fit(self):
        paths = _constant(simulate(OU, GRID, 30, seed=4), 0.2)
        model = train_nonlinear(paths, 2, FAST)
        assert isinstance(model.base, LinearRepModel)
        np.testing.assert_allclose(model.predict_values(GRID.dt, paths.dw), 0.2, atol=1e-3)

    def test_constant_target_on_held_out_paths(self):
        model = train_nonlinear(_constant(simulate(OU, GRID, 30, seed=4), 0.2), 2, FAST)
        held_out = simulate(OU, GRID, 10, seed=14)
        np.testing.assert_allclose(model.predict_values(GRID.dt, held_out.dw), 0.2, atol=1e-3)

    def test_base_ignores_validation_paths(self):
        cfg = FAST.model_copy(update={"epochs": 1})
        paths = simulate(OU, GRID, 30, seed=15)
        _, val_rows = split_paths(paths.count, cfg.validation_fraction, cfg.seed)
        dw, v = paths.dw.copy(), paths.v.copy()
        dw[val_rows] *= -2.0
        v[val_rows] += 1.0
        altered = dataclasses.replace(paths, dw=dw, v=v)

        np.testing.assert_array_equal(
            train_nonlinear(altered, 2, cfg).base.coefficients,
            train_nonlinear(paths, 2, cfg).base.coefficients,
        )
        # the full-set fit does see the change
        assert not np.allclose(fit_linear(altered, 2, cfg).coefficients, fit_linear(paths, 2, cfg).coefficients)

    def test_matches_linear_on_signature_linear_target(self):
        train, _ = _planted(80, 2)
        held_out, _ = _planted(40, 2, seed=16)
        linear = fit_linear(train, 2, FAST)
        nonlinear = train_nonlinear(train, 2, FAST)
        assert _mse(nonlinear, held_out) <= _mse(linear, held_out) + 1e-10

    def test_training_history(self):
        paths = simulate(RHestonParams(), GRID, 30, seed=5)
        model = train_nonlinear(paths, 2, FAST.model_copy(update={"residual_on_linear": False}))
        assert model.base is None
        assert len(model.train_loss) == len(model.val_loss) == FAST.epochs
        assert np.isfinite(model.val_loss).all()
        assert model.layer_sizes == [1 + dense_dimension(2), 8, 1]
        assert np.isfinite(LearnedProvider(model).streams(paths).v_tilde).all()

    def test_restart_after_non_finite_loss(self, monkeypatch, caplog):
        real = learned_rep.loss_and_grads
        calls = {"n": 0}

        def flaky(*args, **kwargs):
            calls["n"] += 1
            loss, gw, gb = real(*args, **kwargs)
            return (float("nan") if calls["n"] == 1 else loss), gw, gb

        monkeypatch.setattr(learned_rep, "loss_and_grads", flaky)
        paths = simulate(OU, GRID, 20, seed=6)
        with caplog.at_level("WARNING"):
            model = train_nonlinear(paths, 2, FAST)
        assert len(model.val_loss) == FAST.epochs
        assert any("Retrying" in r.getMessage() for r in caplog.records)

    def test_gives_up_after_restarts(self, monkeypatch):
        real = learned_rep.loss_and_grads

        def broken(*args, **kwargs):
            _, gw, gb = real(*args, **kwargs)
            return float("inf"), gw, gb

        monkeypatch.setattr(learned_rep, "loss_and_grads", broken)
        paths = simulate(OU, GRID, 20, seed=6)
        with pytest.raises(NonFiniteLossError):
            train_nonlinear(paths, 2, FAST.model_copy(update={"max_restarts": 1}))

    def test_rejects_bad_layer_shapes(self):
        with pytest.raises(ValueError):
            NonlinearRepModel(
                level=1,
                dt=0.1,
                steps=10,
                mode=SigMode.ITO_LEFT,
                activation=Activation.TANH,
                weights=[np.zeros((4, 3)), np.zeros((2, 1))],
                biases=[np.zeros(3), np.zeros(1)],
                x_mean=np.zeros(4),
                x_std=np.ones(4),
                y_mean=0.0,
                y_std=1.0,
            )


# ── Persistence ────────────────────────────────────────────────────────────────


class TestPersistence:
    def test_round_trip_preserves_predictions(self, tmp_path):
        paths = simulate(OU, GRID, 20, seed=8)
        linear = fit_linear(paths, 2, FAST)
        nonlinear = train_nonlinear(paths, 2, FAST)
        for model in (linear, nonlinear):
            loaded = load_model(save_model(model, tmp_path / f"{type(model).__name__}.npz"))
            assert type(loaded) is type(model)
            assert loaded.level == model.level and loaded.mode is model.mode
            np.testing.assert_array_equal(
                loaded.predict_values(GRID.dt, paths.dw), model.predict_values(GRID.dt, paths.dw)
            )

    def test_prediction_is_deterministic(self):
        paths = simulate(OU, GRID, 20, seed=9)
        model = train_nonlinear(paths, 2, FAST)
        again = train_nonlinear(paths, 2, FAST)
        np.testing.assert_array_equal(model.predict_values(GRID.dt, paths.dw), again.predict_values(GRID.dt, paths.dw))

    def test_unknown_format_version(self, tmp_path):
        target = tmp_path / "model.npz"
        np.savez(target, format_version=99, level=1, dt=0.1, mode="ito", kind="linear")
        with pytest.raises(ValueError):
            load_model(target)
