"""
sigpricer/services/cache.py – on-disk JSON cache for benchmark prices.

Keyed by a SHA-256 hash of the serialised inputs (model, SABR spec, option,
grid, path count, seed, spot). Benchmark runs are deterministic, so entries
never expire; delete the directory to invalidate.
"""
from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Optional

from sigpricer.config import settings

logger = logging.getLogger(__name__)


class DiskCache:
    """Minimal file-per-entry key/value store."""

    def __init__(self, directory: str | Path) -> None:
        self._dir = Path(directory)

    # ── Helpers ───────────────────────────────────────────────────────────────

    @staticmethod
    def _hash(data: Any) -> str:
        raw = json.dumps(data, sort_keys=True, default=str)
        return hashlib.sha256(raw.encode()).hexdigest()

    def _file(self, key_data: Any) -> Path:
        return self._dir / f"{self._hash(key_data)}.json"

    # ── Public API ────────────────────────────────────────────────────────────

    def get(self, key_data: Any) -> Optional[Any]:
        """Return the cached value or None (unreadable entries count as misses)."""
        path = self._file(key_data)
        if not path.exists():
            return None
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            logger.warning("Ignoring unreadable cache entry", extra={"path": str(path), "error": str(exc)})
            return None

    def set(self, key_data: Any, value: Any) -> None:
        self._dir.mkdir(parents=True, exist_ok=True)
        path = self._file(key_data)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(value, sort_keys=True), encoding="utf-8")
        tmp.replace(path)

    def clear(self) -> None:
        if self._dir.exists():
            for path in self._dir.glob("*.json"):
                path.unlink()

    def __len__(self) -> int:
        return len(list(self._dir.glob("*.json"))) if self._dir.exists() else 0


def benchmark_cache() -> DiskCache:
    return DiskCache(settings.cache_dir)
