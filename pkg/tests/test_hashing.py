from __future__ import annotations

import logging
from pathlib import Path

from rich.console import Console

from heatlab.core.hashing import hash_file, hash_text
from heatlab.core.logging_utils import configure_logging, resolve_level


def test_hash_file(tmp_path: Path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"abc")

    assert hash_file(p) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    assert hash_text("abc") == hash_file(p)


def test_hash_file_spans_chunks(tmp_path: Path):
    p = tmp_path / "big.bin"
    p.write_bytes(b"heat" * 1000)

    assert hash_file(p, chunk_size=7) == hash_file(p) == hash_text("heat" * 1000)


def test_resolve_level():
    assert resolve_level("debug") == logging.DEBUG
    assert resolve_level(None) == logging.INFO
    assert resolve_level("nonsense") == logging.INFO
    assert resolve_level(logging.ERROR) == logging.ERROR


def test_configure_logging_replaces_its_handler():
    root = logging.getLogger()
    before = list(root.handlers)
    level = root.level
    try:
        console = Console(file=None, force_terminal=False, record=True)
        configure_logging("warning", console=console)
        handler = configure_logging("debug", console=console)
        ours = [h for h in root.handlers if h.get_name() == "heatlab"]
        assert ours == [handler]
        assert root.level == logging.DEBUG
        assert logging.getLogger("matplotlib").level == logging.WARNING
    finally:
        for h in list(root.handlers):
            if h not in before:
                root.removeHandler(h)
        root.setLevel(level)
