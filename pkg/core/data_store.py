"""DatasetStore: file-backed registry for prepped datasets and run artefacts.

Keeps split files, the vocabulary, stats and reports under one directory
with a ``_registry.json`` index. Every write goes to a temporary sibling and
is renamed into place, so an interrupted command never leaves a partial file.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Any, Sequence

from pydantic import ValidationError

from core.errors import DataError
from core.schemas import WindowSample


def atomic_write_bytes(path: str | Path, data: bytes) -> Path:
    """Write ``data`` to ``path`` via a temp file and ``os.replace``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def atomic_write_text(path: str | Path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def dumps_json(obj: Any) -> str:
    """Deterministic JSON: insertion key order, 2-space indent, trailing newline."""
    return json.dumps(obj, indent=2, default=str, ensure_ascii=False) + "\n"


class DatasetStore:
    """Directory-scoped registry of prepped data and run outputs."""

    SPLITS = ("train", "dev", "test")

    def __init__(self, base_dir: str | Path):
        self.base_dir = Path(base_dir)
        self._registry: dict[str, dict] = {}
        self._load_registry()

    @property
    def _registry_path(self) -> Path:
        return self.base_dir / "_registry.json"

    def _load_registry(self) -> None:
        if self._registry_path.exists():
            try:
                self._registry = json.loads(self._registry_path.read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                raise DataError(f"corrupt dataset registry: {exc}", path=str(self._registry_path)) from exc

    def _save_registry(self) -> None:
        atomic_write_text(self._registry_path, dumps_json(self._registry))

    def _register(self, key: str, kind: str, path: Path, metadata: dict | None) -> None:
        self._registry[key] = {"type": kind, "path": path.name, "metadata": metadata or {}}
        self._save_registry()

    # -- samples -------------------------------------------------------------

    def store_samples(self, key: str, samples: Sequence[WindowSample], metadata: dict | None = None) -> Path:
        """Write samples as JSON Lines to ``{key}.jsonl`` and register them."""
        path = self.base_dir / f"{key}.jsonl"
        body = "".join(s.model_dump_json() + "\n" for s in samples)
        atomic_write_text(path, body)
        self._register(key, "samples", path, {"count": len(samples), **(metadata or {})})
        return path

    def get_samples(self, key: str) -> list[WindowSample]:
        path = self._path_of(key, "samples")
        samples: list[WindowSample] = []
        with path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    samples.append(WindowSample.model_validate_json(line))
                except ValidationError as exc:
                    raise DataError(f"invalid window sample: {exc.errors()[0]['msg']}", path=str(path), line=lineno) from exc
        return samples

    # -- json / text ---------------------------------------------------------

    def store_json(self, key: str, obj: Any, metadata: dict | None = None) -> Path:
        path = self.base_dir / f"{key}.json"
        atomic_write_text(path, dumps_json(obj))
        self._register(key, "json", path, metadata)
        return path

    def get_json(self, key: str) -> Any:
        path = self._path_of(key, "json")
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"invalid JSON: {exc}", path=str(path)) from exc

    def store_text(self, key: str, filename: str, content: str, metadata: dict | None = None) -> Path:
        path = self.base_dir / filename
        atomic_write_text(path, content)
        self._register(key, "text", path, metadata)
        return path

    def get_text(self, key: str) -> str:
        return self._path_of(key, "text").read_text(encoding="utf-8")

    # -- lookup --------------------------------------------------------------

    def _path_of(self, key: str, kind: str) -> Path:
        entry = self._registry.get(key)
        if not entry or entry["type"] != kind:
            raise DataError(f"{kind} '{key}' not found in dataset store", path=str(self.base_dir))
        path = self.base_dir / entry["path"]
        if not path.exists():
            raise DataError(f"registered file for '{key}' is missing", path=str(path))
        return path

    def get_path(self, key: str) -> Path:
        entry = self._registry.get(key)
        if not entry:
            raise DataError(f"key '{key}' not found in dataset store", path=str(self.base_dir))
        return self.base_dir / entry["path"]

    def get_metadata(self, key: str) -> dict:
        entry = self._registry.get(key)
        if not entry:
            raise DataError(f"key '{key}' not found in dataset store", path=str(self.base_dir))
        return entry["metadata"]

    def list_keys(self) -> list[str]:
        return list(self._registry.keys())
