from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Any, Iterator

from heatlab import __version__
from heatlab.core.hashing import hash_file, hash_text
from heatlab.core.io import write_json
from heatlab.core.json_utils import canonical_json

TRACKED_LIBRARIES = ("numpy", "scipy", "sympy", "pandas")


def library_versions() -> dict[str, str]:
    out = {}
    for name in TRACKED_LIBRARIES:
        try:
            out[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            out[name] = "missing"
    return out


@dataclass(frozen=True)
class RunManifest:
    config_sha256: str
    heatlab_version: str
    libraries: dict[str, str]
    stages: dict[str, float]
    files: tuple[dict[str, str], ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "config_sha256": self.config_sha256,
            "heatlab_version": self.heatlab_version,
            "libraries": dict(self.libraries),
            "stages": dict(self.stages),
            "files": [dict(f) for f in self.files],
        }


@dataclass
class ManifestBuilder:
    """Collects stage timings and emitted files for one invocation."""

    config: dict[str, Any]
    root: Path
    stages: dict[str, float] = field(default_factory=dict)
    files: list[Path] = field(default_factory=list)

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self.stages[name] = self.stages.get(name, 0.0) + time.perf_counter() - start

    def add(self, paths: list[str] | list[Path]) -> None:
        self.files.extend(Path(p) for p in paths)

    def build(self) -> RunManifest:
        entries = []
        for p in sorted(set(self.files)):
            if not p.exists():
                continue
            rel = p.resolve().relative_to(self.root.resolve()).as_posix()
            entries.append({"path": rel, "sha256": hash_file(p)})
        entries.sort(key=lambda e: e["path"])
        return RunManifest(
            config_sha256=hash_text(canonical_json(self.config)),
            heatlab_version=__version__,
            libraries=library_versions(),
            stages={k: round(v, 6) for k, v in sorted(self.stages.items())},
            files=tuple(entries),
        )

    def write(self) -> Path:
        path = self.root / "manifest.json"
        write_json(path, self.build().to_dict())
        self.files.append(path)
        return path
