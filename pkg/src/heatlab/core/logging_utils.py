from __future__ import annotations

import logging

from rich.console import Console
from rich.logging import RichHandler

QUIET_LOGGERS = ("matplotlib", "PIL")


def resolve_level(name: str | int | None) -> int:
    """Map a level name (or number) to a logging level, falling back to INFO."""
    if isinstance(name, int):
        return name
    level = logging.getLevelName((name or "INFO").strip().upper())
    return level if isinstance(level, int) else logging.INFO


def configure_logging(level: str | int | None = None, *, console: Console | None = None) -> logging.Handler:
    """
    Route the ``heatlab`` loggers through one rich handler on stderr.

    Calling this twice replaces the handler instead of stacking a second one.
    Third-party plotting loggers never go below WARNING.
    """
    resolved = resolve_level(level)
    handler = RichHandler(
        console=console or Console(stderr=True),
        show_path=False,
        rich_tracebacks=False,
        markup=False,
        log_time_format="[%X]",
    )
    handler.setFormatter(logging.Formatter("%(name)s: %(message)s"))
    handler.set_name("heatlab")

    root = logging.getLogger()
    for old in [h for h in root.handlers if h.get_name() == "heatlab"]:
        root.removeHandler(old)
    root.addHandler(handler)
    root.setLevel(resolved)

    for name in QUIET_LOGGERS:
        logging.getLogger(name).setLevel(max(logging.WARNING, resolved))
    return handler
