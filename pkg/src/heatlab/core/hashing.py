from __future__ import annotations

import hashlib
from functools import partial
from pathlib import Path

CHUNK = 1 << 20


def hash_file(path: Path, chunk_size: int = CHUNK) -> str:
    """sha256 hex digest of a file, read in fixed-size chunks."""
    digest = hashlib.sha256()
    with path.open("rb") as handle:
        for block in iter(partial(handle.read, chunk_size), b""):
            digest.update(block)
    return digest.hexdigest()


def hash_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
