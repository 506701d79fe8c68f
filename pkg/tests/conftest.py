"""
tests/conftest.py – shared pytest configuration and fixtures.

Reproduction checks at full size (marked with @pytest.mark.slow) are
skipped by default. Pass --slow to opt in:

    uv run pytest --slow tests/test_reproduction.py -v
"""
import pytest

from sigpricer.config import settings


def pytest_addoption(parser: pytest.Parser) -> None:
    parser.addoption(
        "--slow",
        action="store_true",
        default=False,
        help="Run the slow reproduction tests (thousands of paths, minutes of CPU).",
    )


def pytest_collection_modifyitems(config: pytest.Config, items: list[pytest.Item]) -> None:
    if not config.getoption("--slow"):
        skip = pytest.mark.skip(reason="Pass --slow to run this test.")
        for item in items:
            if item.get_closest_marker("slow"):
                item.add_marker(skip)


@pytest.fixture(autouse=True)
def isolated_cache(tmp_path, monkeypatch):
    """Keep the benchmark cache out of the working tree."""
    monkeypatch.setattr(settings, "cache_dir", str(tmp_path / "cache"))
    return tmp_path / "cache"
