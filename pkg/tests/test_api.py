"""
tests/test_api.py – HTTP surface: health probes, coefficients and single prices.
"""
from __future__ import annotations

import pytest
from fastapi.testclient import TestClient

from sigpricer.main import app

client = TestClient(app)

FLAT_MODEL = {"kind": "ou", "kappa": 0.0, "theta": 0.0, "eta": 0.0, "v0": 0.0}


class TestHealth:
    def test_healthz(self):
        response = client.get("/healthz")
        assert response.status_code == 200
        assert response.json()["status"] == "ok"

    def test_readyz(self, isolated_cache):
        response = client.get("/readyz")
        assert response.status_code == 200
        body = response.json()
        assert body["ready"] is True
        assert body["checks"]["cache_dir"] == str(isolated_cache)

    def test_request_id_echoed(self):
        response = client.get("/healthz", headers={"X-Request-ID": "abc-123"})
        assert response.headers["X-Request-ID"] == "abc-123"


class TestCoefficients:
    def test_ou_terms(self):
        response = client.post(
            "/v1/coefficients",
            json={"model": {"kind": "ou", "kappa": 1.0, "theta": 0.25, "eta": 1.2, "v0": 0.1}, "level": 3},
        )
        assert response.status_code == 200
        body = response.json()
        assert body["level"] == 3
        assert body["ell_terms"]["∅"] == pytest.approx(0.1)
        assert body["ell_terms"]["21"] == pytest.approx(-1.2)
        assert body["p_terms"]["22"] == pytest.approx(1.2)
        assert body["ell"].startswith("0.1*∅")

    def test_rough_model_rejected(self):
        response = client.post("/v1/coefficients", json={"model": {"kind": "rheston"}, "level": 3})
        assert response.status_code == 422


class TestPrice:
    @pytest.mark.parametrize("method", ["mc-sig", "pde", "benchmark"])
    def test_zero_volatility(self, method):
        response = client.post(
            "/v1/price",
            json={
                "model": FLAT_MODEL,
                "method": method,
                "representation": "zero",
                "grid": {"maturity": 1.0, "steps": 20},
                "x_init": 95.0,
                "paths": 20,
                "w_paths": 2,
            },
        )
        assert response.status_code == 200
        assert response.json()["estimate"] == pytest.approx(15.0, abs=1e-9)
        assert response.json()["method"] == method

    def test_analytic_representation_of_rough_model(self):
        response = client.post(
            "/v1/price",
            json={"model": {"kind": "rbergomi"}, "grid": {"steps": 10}, "paths": 10},
        )
        assert response.status_code == 422

    def test_path_cap(self):
        response = client.post("/v1/price", json={"paths": 50_000})
        assert response.status_code == 422

    def test_maturity_mismatch(self):
        response = client.post("/v1/price", json={"grid": {"maturity": 2.0, "steps": 10}, "paths": 10})
        assert response.status_code == 422
