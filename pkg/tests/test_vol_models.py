"""
tests/test_vol_models.py – seeded simulation of the volatility models.
"""
from __future__ import annotations

import numpy as np
import pytest
from pydantic import ValidationError

from sigpricer.config import settings
from sigpricer.models import Grid, MGBMParams, OUParams, RBergomiParams, RHestonParams
from sigpricer.services import vol_models
from sigpricer.services.rng import brownian_increments, chunked, ordered_map, path_generator
from sigpricer.services.vol_models import (
    attempt_stride,
    expected_terminal_mean,
    mean_check,
    pathset_frame,
    simulate,
    volterra_kernel,
)

GRID = Grid(maturity=1.0, steps=251)
SMALL = Grid(maturity=1.0, steps=40)


# ── Random streams ─────────────────────────────────────────────────────────────


class TestRng:
    def test_streams_depend_on_index_and_attempt(self):
        a = path_generator(1, 0).standard_normal(5)
        assert np.array_equal(a, path_generator(1, 0).standard_normal(5))
        assert not np.array_equal(a, path_generator(1, 1).standard_normal(5))
        assert not np.array_equal(a, path_generator(1, 0, attempt=1).standard_normal(5))

    def test_increments_independent_of_batch(self):
        dw_all, db_all = brownian_increments(9, [0, 1, 2, 3], 10, 0.1)
        dw_one, db_one = brownian_increments(9, [2], 10, 0.1)
        np.testing.assert_array_equal(dw_all[2], dw_one[0])
        np.testing.assert_array_equal(db_all[2], db_one[0])

    def test_increment_variance(self):
        dw, db = brownian_increments(5, range(10_000), 1, 0.04)
        for x in (dw[:, 0], db[:, 0]):
            stderr = 0.04 * np.sqrt(2.0 / x.size)
            assert abs(x.var(ddof=1) - 0.04) < 3 * stderr

    def test_chunked_and_ordered_map(self):
        blocks = chunked(range(10), 4)
        assert [b.tolist() for b in blocks] == [[0, 1, 2, 3], [4, 5, 6, 7], [8, 9]]
        assert ordered_map(lambda b: int(b.sum()), blocks, workers=3) == [6, 22, 17]


# ── Schemes ────────────────────────────────────────────────────────────────────


class TestSchemes:
    def test_ou_without_noise_follows_the_ode(self):
        model = OUParams(kappa=1.0, theta=0.25, eta=0.0, v0=0.1)
        paths = simulate(model, GRID, 3, seed=1)
        exact = 0.25 + (0.1 - 0.25) * np.exp(-GRID.times)
        assert np.abs(paths.v - exact).max() <= 5e-3

    def test_rbergomi_without_vol_of_vol_is_constant(self):
        paths = simulate(RBergomiParams(v0=0.1, eta=0.0, alpha=0.2), SMALL, 5, seed=2)
        assert np.all(paths.v == 0.1)

    def test_rheston_without_noise_or_reversion_is_constant(self):
        paths = simulate(RHestonParams(kappa=0.0, sigma=0.0, v0=0.1), SMALL, 5, seed=3)
        assert np.all(paths.v == 0.1)

    def test_integral_starts_at_zero_and_uses_left_points(self):
        paths = simulate(MGBMParams(), SMALL, 4, seed=4)
        assert np.all(paths.i[:, 0] == 0.0)
        np.testing.assert_allclose(
            paths.i[:, -1], np.sum(paths.v[:, :-1] * paths.dw, axis=1), atol=1e-12
        )

    def test_rough_heston_stays_finite(self):
        paths = simulate(RHestonParams(), SMALL, 50, seed=5)
        assert np.isfinite(paths.v).all()
        assert paths.v.shape == (50, 41)

    def test_volterra_kernel(self):
        kernel = volterra_kernel(0.2, 0.1, 3)
        assert kernel.shape == (3,)
        assert np.all(np.diff(kernel) < 0)

    def test_rough_heston_matches_direct_volterra_sum(self):
        model = RHestonParams(kappa=0.3, theta=0.2, sigma=0.4, v0=0.15, alpha=0.3)
        paths = simulate(model, Grid(maturity=0.5, steps=8), 1, seed=6)
        dt, dw = 0.5 / 8, paths.dw[0]
        kernel = volterra_kernel(model.alpha, dt, 8)
        v = [model.v0]
        for j in range(1, 9):
            total = 0.0
            for i in range(j):
                vp = max(v[i], 0.0)
                total += kernel[j - i - 1] * (model.kappa * (model.theta - vp) * dt + model.sigma * np.sqrt(vp) * dw[i])
            v.append(model.v0 + total)
        np.testing.assert_allclose(paths.v[0], v, atol=1e-12)

    def test_bergomi_overflow_is_redrawn(self, monkeypatch, caplog):
        calls = {"n": 0}
        original = vol_models.bergomi_exponent

        def flaky(model, dt, dw):
            out = original(model, dt, dw)
            calls["n"] += 1
            if calls["n"] == 1:
                out[0, -1] = 1e4
            return out

        monkeypatch.setattr(vol_models, "bergomi_exponent", flaky)
        with caplog.at_level("WARNING"):
            paths = simulate(RBergomiParams(), SMALL, 3, seed=7)
        assert paths.resampled == 1
        assert np.isfinite(paths.v).all()
        assert "Resampled" in caplog.text

    def test_invalid_parameters_rejected(self):
        with pytest.raises(ValidationError):
            RHestonParams(alpha=0.7)
        with pytest.raises(ValidationError):
            RBergomiParams(v0=0.0)
        with pytest.raises(ValidationError):
            Grid(steps=0)


# ── Determinism ────────────────────────────────────────────────────────────────


class TestDeterminism:
    def test_same_seed_same_paths(self):
        a = simulate(OUParams(), SMALL, 20, seed=11)
        b = simulate(OUParams(), SMALL, 20, seed=11)
        np.testing.assert_array_equal(a.v, b.v)
        np.testing.assert_array_equal(a.i, b.i)

    def test_workers_and_batches_do_not_change_paths(self):
        serial = simulate(RBergomiParams(), SMALL, 25, seed=12, workers=1, batch_size=25)
        threaded = simulate(RBergomiParams(), SMALL, 25, seed=12, workers=4, batch_size=3)
        np.testing.assert_array_equal(serial.dw, threaded.dw)
        np.testing.assert_array_equal(serial.v, threaded.v)

    def test_indices_select_the_same_paths(self):
        full = simulate(MGBMParams(), SMALL, 10, seed=13)
        part = simulate(MGBMParams(), SMALL, 3, seed=13, indices=[7, 8, 9])
        np.testing.assert_array_equal(full.v[7:], part.v)

    def test_attempt_families_do_not_collide(self):
        assert attempt_stride() == settings.max_resample_rounds + 1
        a = simulate(OUParams(), SMALL, 2, seed=14, attempt=0)
        b = simulate(OUParams(), SMALL, 2, seed=14, attempt=attempt_stride())
        assert not np.array_equal(a.dw, b.dw)

    def test_count_must_match_indices(self):
        with pytest.raises(ValueError):
            simulate(OUParams(), SMALL, 3, seed=1, indices=[0, 1])


# ── Mean oracle and export ────────────────────────────────────────────────────


class TestMeanCheck:
    def test_ou_mean(self):
        report = mean_check(OUParams(), GRID, 10_000, seed=20240601)
        assert abs(report.z_score) <= 3.0
        assert report.expected_mean == pytest.approx(0.25 + (0.1 - 0.25) * np.exp(-1.0))

    def test_mgbm_mean(self):
        report = mean_check(MGBMParams(), SMALL, 5_000, seed=21)
        assert abs(report.z_score) <= 3.0

    def test_rbergomi_mean(self):
        report = mean_check(RBergomiParams(), GRID, 10_000, seed=22)
        assert abs(report.z_score) <= 4.0

    def test_needs_enough_paths(self):
        with pytest.raises(ValueError):
            mean_check(OUParams(), SMALL, 999, seed=1)

    def test_rough_heston_has_no_closed_form(self):
        with pytest.raises(ValueError):
            expected_terminal_mean(RHestonParams(), 1.0)

    def test_integral_is_centred(self):
        paths = simulate(OUParams(), SMALL, 10_000, seed=23)
        terminal = paths.i[:, -1]
        assert abs(terminal.mean()) < 3 * terminal.std(ddof=1) / np.sqrt(terminal.size)


class TestPathsetFrame:
    def test_layout(self):
        paths = simulate(OUParams(), Grid(maturity=1.0, steps=4), 2, seed=1)
        frame = pathset_frame(paths)
        assert list(frame.columns) == ["path", "j", "t", "dW", "dB", "v", "I"]
        assert len(frame) == 2 * 5
        assert frame.loc[frame["j"] == 4, "dW"].isna().all()
        assert frame.loc[frame["j"] == 0, "I"].eq(0.0).all()
