from __future__ import annotations

from dataclasses import dataclass
import os
from pathlib import Path

ENV_PREFIX = "HEATLAB_"


@dataclass(frozen=True)
class Settings:
    threads: int
    log_level: str
    out_dir: Path
    dense_limit: int


def _parse_env_line(raw: str) -> tuple[str, str] | None:
    line = raw.strip()
    if line.startswith("export "):
        line = line[len("export "):].lstrip()
    if not line or line.startswith("#") or "=" not in line:
        return None
    key, _, value = line.partition("=")
    value = value.strip()
    if len(value) >= 2 and value[0] in "'\"" and value[-1] == value[0]:
        value = value[1:-1]
    return key.strip(), value


def _load_dotenv(path: Path = Path(".env")) -> None:
    """
    Read HEATLAB_* entries from a local `.env`. Variables already set in the
    process environment are left alone.
    """
    try:
        text = path.read_text(encoding="utf-8")
    except OSError:
        return
    for raw in text.splitlines():
        parsed = _parse_env_line(raw)
        if parsed is None:
            continue
        key, value = parsed
        if key.startswith(ENV_PREFIX):
            os.environ.setdefault(key, value)


def _int_env(name: str, default: int, minimum: int = 1) -> int:
    raw = (os.getenv(name) or "").strip()
    if not raw:
        return default
    try:
        return max(minimum, int(raw))
    except ValueError:
        return default


def load_settings() -> Settings:
    _load_dotenv()

    return Settings(
        threads=_int_env(f"{ENV_PREFIX}THREADS", 1),
        log_level=os.getenv(f"{ENV_PREFIX}LOG_LEVEL", "INFO").upper(),
        out_dir=Path(os.getenv(f"{ENV_PREFIX}OUT_DIR", "./heatlab-out")).resolve(),
        dense_limit=_int_env(f"{ENV_PREFIX}DENSE_LIMIT", 4096, minimum=64),
    )
