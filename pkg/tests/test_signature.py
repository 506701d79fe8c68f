"""
tests/test_signature.py – signature streams, pairing and the discrete integral shift.
"""
from __future__ import annotations

import math

import numpy as np
import pytest

from sigpricer.errors import LevelMismatchError
from sigpricer.models import SigMode
from sigpricer.services.signature import (
    TimeExtendedPath,
    chen_product,
    factorial_decay_profile,
    ito_integral_series,
    ito_integrate_pairing,
    level_norms,
    pair,
    pair_series,
    signature_batch,
    signature_stream,
    stream_frame,
)
from sigpricer.services.tensor_algebra import (
    TensorPoly,
    Word,
    all_words,
    append_letter,
    dense_dimension,
    shuffle,
)


def _brownian(rng: np.random.Generator, steps: int = 50, maturity: float = 1.0) -> TimeExtendedPath:
    dt = maturity / steps
    return TimeExtendedPath.from_increments(dt, rng.normal(scale=np.sqrt(dt), size=steps))


def _random_poly(rng: np.random.Generator, degree: int, terms: int = 5) -> TensorPoly:
    words = all_words(degree)
    picks = rng.choice(len(words), size=min(terms, len(words)), replace=False)
    return TensorPoly(degree, {words[k]: rng.normal() for k in picks})


def _value(sig, j: int, word: str) -> float:
    return sig.values[j, Word.parse(word).index]


# ── Construction ───────────────────────────────────────────────────────────────


class TestSignatureStream:
    def test_one_step_chen_is_half_square(self):
        sig = signature_stream(TimeExtendedPath.from_increments(1.0, [1.0]), 2, SigMode.CHEN)
        for word in ("11", "12", "21", "22"):
            assert _value(sig, 1, word) == pytest.approx(0.5)

    def test_one_step_ito_has_no_level_two(self):
        sig = signature_stream(TimeExtendedPath.from_increments(1.0, [1.0]), 2, SigMode.ITO_LEFT)
        for word in ("11", "12", "21", "22"):
            assert _value(sig, 1, word) == 0.0
        assert _value(sig, 1, "1") == 1.0
        assert _value(sig, 1, "2") == 1.0

    def test_two_step_ito_recursion(self):
        sig = signature_stream(TimeExtendedPath.from_increments(0.5, [1.0, -1.0]), 2)
        assert _value(sig, 2, "22") == pytest.approx(-1.0)
        assert _value(sig, 2, "12") == pytest.approx(-0.5)
        assert _value(sig, 2, "21") == pytest.approx(0.5)

    def test_initial_state(self):
        sig = signature_stream(_brownian(np.random.default_rng(0)), 3)
        expected = np.zeros(dense_dimension(3))
        expected[0] = 1.0
        np.testing.assert_array_equal(sig.values[0], expected)

    def test_empty_path_gives_single_state(self):
        sig = signature_stream(TimeExtendedPath(0.1, np.zeros(1)), 2)
        assert sig.values.shape == (1, 7)
        assert sig.steps == 0

    def test_path_must_start_at_zero(self):
        with pytest.raises(ValueError):
            TimeExtendedPath(0.1, np.array([1.0, 2.0]))

    def test_batch_matches_single_streams(self):
        rng = np.random.default_rng(3)
        dw = rng.normal(scale=0.1, size=(4, 30))
        batch = signature_batch(0.01, dw, 3, SigMode.CHEN)
        for m in range(4):
            single = signature_stream(TimeExtendedPath.from_increments(0.01, dw[m]), 3, SigMode.CHEN)
            np.testing.assert_allclose(batch[m], single.values, atol=1e-14)

    def test_stream_is_read_only(self):
        sig = signature_stream(_brownian(np.random.default_rng(1)), 2)
        with pytest.raises(ValueError):
            sig.values[0, 0] = 2.0


class TestChenIdentity:
    def test_split_anywhere(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            path = _brownian(rng, steps=int(rng.integers(2, 40)))
            split = int(rng.integers(0, path.steps + 1))
            full = signature_stream(path, 4, SigMode.CHEN)
            tail = signature_stream(path.sub_path(split), 4, SigMode.CHEN)
            np.testing.assert_allclose(
                chen_product(full.values[split], tail.terminal(), 4), full.terminal(), atol=1e-10
            )


# ── Pairing ────────────────────────────────────────────────────────────────────


class TestPairing:
    def test_constant(self):
        sig = signature_stream(_brownian(np.random.default_rng(2)), 3)
        coeffs = TensorPoly.from_terms({"": 0.7})
        assert all(pair(coeffs, sig, j) == pytest.approx(0.7) for j in range(sig.steps + 1))

    def test_letter_two_reads_brownian_motion(self):
        path = _brownian(np.random.default_rng(2))
        sig = signature_stream(path, 2)
        np.testing.assert_allclose(pair_series(TensorPoly.from_terms({"2": 1.0}), sig), path.w, atol=1e-14)

    def test_deterministic_path_iterated_integral(self):
        steps = 1000
        path = TimeExtendedPath.from_increments(1.0 / steps, np.full(steps, 1.0 / steps))
        sig = signature_stream(path, 2, SigMode.CHEN)
        assert pair(TensorPoly.from_terms({"12": 1.0}), sig, steps) == pytest.approx(0.5, abs=1e-9)

    def test_level_mismatch_rejected(self):
        sig = signature_stream(_brownian(np.random.default_rng(2)), 2)
        with pytest.raises(LevelMismatchError):
            pair(TensorPoly.from_terms({"122": 1.0}), sig, 0)

    def test_grid_index_checked(self):
        sig = signature_stream(_brownian(np.random.default_rng(2), steps=5), 1)
        with pytest.raises(IndexError):
            pair(TensorPoly.unit(), sig, 6)

    def test_shuffle_identity_holds_in_chen_mode(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            path = _brownian(rng, steps=20)
            a, b = _random_poly(rng, 2, 3), _random_poly(rng, 2, 3)
            sig = signature_stream(path, 4, SigMode.CHEN)
            np.testing.assert_allclose(
                pair_series(shuffle(a, b, 4), sig),
                pair_series(a, sig) * pair_series(b, sig),
                atol=1e-10,
            )

    def test_shuffle_identity_fails_in_ito_mode(self):
        path = _brownian(np.random.default_rng(9), steps=20)
        a = TensorPoly.from_terms({"2": 1.0})
        sig = signature_stream(path, 2, SigMode.ITO_LEFT)
        gap = pair_series(shuffle(a, a, 2), sig) - pair_series(a, sig) ** 2
        # the gap is minus the discrete quadratic variation
        np.testing.assert_allclose(gap[-1], -np.sum(path.dw**2), atol=1e-12)
        assert abs(gap[-1]) > 0.0


# ── Integration against dW ─────────────────────────────────────────────────────


class TestItoIntegration:
    def test_zero_integrand(self):
        path = _brownian(np.random.default_rng(4), steps=10)
        sig = signature_stream(path, 2)
        assert ito_integrate_pairing(TensorPoly.zero(2), sig, path, 10) == 0.0

    def test_unit_integrand_gives_brownian_motion(self):
        path = _brownian(np.random.default_rng(4), steps=10)
        sig = signature_stream(path, 2)
        for j in range(11):
            assert ito_integrate_pairing(TensorPoly.unit(), sig, path, j) == pytest.approx(path.w[j])

    def test_shift_identity_in_ito_mode(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            level = int(rng.integers(1, 6))
            path = _brownian(rng, steps=int(rng.integers(1, 60)))
            ell = _random_poly(rng, level - 1)
            sig = signature_stream(path, level)
            via_sum = ito_integral_series(pair_series(ell, sig), path.dw)
            via_shift = pair_series(append_letter(ell, 2, level), sig)
            np.testing.assert_allclose(via_sum, via_shift, atol=1e-10)

    def test_pointwise_agrees_with_series(self):
        path = _brownian(np.random.default_rng(13), steps=15)
        sig = signature_stream(path, 3)
        ell = TensorPoly.from_terms({"": 0.1, "1": 0.2, "21": -0.3})
        series = ito_integral_series(pair_series(ell, sig), path.dw)
        for j in (0, 7, 15):
            assert ito_integrate_pairing(ell, sig, path, j) == pytest.approx(series[j], abs=1e-14)


# ── Diagnostics ────────────────────────────────────────────────────────────────


class TestDiagnostics:
    def test_factorial_decay_bounded(self):
        rng = np.random.default_rng(20240601)
        for _ in range(20):
            sig = signature_stream(_brownian(rng, steps=251), 6)
            profile = factorial_decay_profile(sig)
            assert profile.shape == (6,)
            assert np.all(profile <= 2.0 * profile[:3].max())

    def test_level_norms(self):
        path = _brownian(np.random.default_rng(6), steps=25)
        sig = signature_stream(path, 3)
        norms = level_norms(sig)
        assert norms.shape == (3,)
        assert norms[0] == pytest.approx(math.hypot(1.0, path.w[-1]))

    def test_stream_frame_layout(self):
        sig = signature_stream(_brownian(np.random.default_rng(7), steps=4), 2)
        frame = stream_frame(sig)
        assert list(frame.columns) == ["j", "t", "word", "value"]
        assert len(frame) == 5 * 7
        assert frame.loc[frame["word"] == "∅", "value"].eq(1.0).all()
