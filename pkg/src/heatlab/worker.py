from __future__ import annotations

import logging
import traceback
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Sequence, Type

from heatlab.core.models import ExperimentConfig
from heatlab.modules.base import Cell, ExperimentModule

logger = logging.getLogger(__name__)

MODULE_REGISTRY: dict[str, Type[ExperimentModule]] = {}


def register_module(module_cls: Type[ExperimentModule]) -> None:
    MODULE_REGISTRY[module_cls().name] = module_cls


def ensure_modules_registered() -> None:
    if MODULE_REGISTRY:
        return

    from heatlab.modules.assemble import AssembleModule
    from heatlab.modules.geometry import GeometryModule
    from heatlab.modules.kernel import KernelModule
    from heatlab.modules.verify import VerifyModule
    from heatlab.modules.wave import WaveModule

    register_module(GeometryModule)
    register_module(AssembleModule)
    register_module(KernelModule)
    register_module(WaveModule)
    register_module(VerifyModule)


def get_module(name: str) -> ExperimentModule:
    ensure_modules_registered()
    try:
        return MODULE_REGISTRY[name]()
    except KeyError:
        raise KeyError(f"unknown module {name!r}; known: {', '.join(sorted(MODULE_REGISTRY))}") from None


def build_cells(config: ExperimentConfig, module: ExperimentModule, *, sweep: bool = False) -> list[Cell]:
    grids = config.all_grids() if sweep and module.uses_grid else [config.grid]
    return [Cell(tau=float(tau), grid=g) for g in grids for tau in config.taus]


def _extract_output_files(result: dict[str, Any]) -> list[str]:
    out = result.get("output_files")
    if not isinstance(out, list):
        return []
    seen: set[str] = set()
    uniq: list[str] = []
    for item in out:
        if isinstance(item, str) and item not in seen:
            seen.add(item)
            uniq.append(item)
    return uniq


def execute_cell(module: ExperimentModule, config: ExperimentConfig, cell: Cell, out_dir: Path, **kwargs: Any) -> dict[str, Any]:
    """Run one cell; exceptions become a FAILED record instead of propagating."""
    logger.info("%s %s: start", module.name, cell.key)
    try:
        result = module.run(config, cell, out_dir, **kwargs)
    except Exception as exc:
        logger.error("%s %s failed: %s", module.name, cell.key, exc)
        logger.debug("%s", traceback.format_exc())
        return {
            "module": module.name,
            "cell": cell.key,
            "status": "FAILED",
            "failed": True,
            "error": f"{type(exc).__name__}: {exc}",
            "output_files": [],
        }
    result = dict(result)
    result["module"] = module.name
    result["cell"] = cell.key
    result["output_files"] = _extract_output_files(result)
    return result


def run_modules(
    config: ExperimentConfig,
    names: Sequence[str],
    out_dir: Path,
    *,
    threads: int = 1,
    sweep: bool = False,
    **kwargs: Any,
) -> list[dict[str, Any]]:
    """
    Run every (module, cell) pair on a thread pool. Results come back sorted by
    (module order, cell key), independent of completion order.
    """
    modules = [get_module(n) for n in names]
    jobs = [(i, m, c) for i, m in enumerate(modules) for c in build_cells(config, m, sweep=sweep)]
    if threads <= 1 or len(jobs) <= 1:
        results = [(i, c.key, execute_cell(m, config, c, out_dir, **kwargs)) for i, m, c in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [(i, c.key, pool.submit(execute_cell, m, config, c, out_dir, **kwargs)) for i, m, c in jobs]
            results = [(i, key, f.result()) for i, key, f in futures]
    results.sort(key=lambda r: (r[0], r[1]))
    return [r for _, _, r in results]
