from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict

from heatlab.core.models import ExperimentConfig, GridConfig


@dataclass(frozen=True)
class Cell:
    """One (tau, grid) point of an experiment."""

    tau: float
    grid: GridConfig

    @property
    def key(self) -> str:
        return f"tau{self.tau:g}_n{self.grid.n}_L{self.grid.L:g}"

    def directory(self, out_dir: Path, module: str) -> Path:
        path = out_dir / module / self.key
        path.mkdir(parents=True, exist_ok=True)
        return path


class ExperimentModule(ABC):
    """
    Abstract base class for experiment modules.
    """

    @property
    @abstractmethod
    def name(self) -> str:
        """Subcommand name (e.g. 'kernel', 'wave')."""

    @property
    @abstractmethod
    def description(self) -> str:
        pass

    @property
    def uses_grid(self) -> bool:
        """Whether cells differing only in the grid give different results."""
        return True

    @abstractmethod
    def run(self, config: ExperimentConfig, cell: Cell, out_dir: Path, **kwargs: Any) -> Dict[str, Any]:
        """
        Execute one cell. Returns a JSON-serializable dict with at least `status`,
        `output_files` (absolute paths) and `failed` (any verification failure).
        """
