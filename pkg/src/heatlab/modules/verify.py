from __future__ import annotations

import logging
import re
from pathlib import Path
from typing import Any, Dict

from heatlab.core.bounds import KernelWorkbench, verify_kernel_bound
from heatlab.core.errors import DegenerateSamplesError, UnsupportedKernelError
from heatlab.core.fitting import BoundReport
from heatlab.core.inequalities import InequalityCase, InequalityReport, verify_inequality, verify_intertwining
from heatlab.core.io import margins_frame, write_frame, write_json
from heatlab.core.models import ExperimentConfig
from heatlab.core.semigroup import DENSE_LIMIT
from heatlab.modules.base import Cell, ExperimentModule

logger = logging.getLogger(__name__)

NEEDS_TAU = {"heat_tilde", "relative_heat", "heat", "relative_solution", "szego"}
TAU_FREE_ONLY = {"free_heat"}
INEQUALITIES_NEED_TAU = {InequalityCase.SOBOLEV, InequalityCase.CANCEL_HEAT, InequalityCase.CANCEL_GREEN}


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9.]+", "-", text).strip("-") or "plain"


class VerifyModule(ExperimentModule):
    @property
    def name(self) -> str:
        return "verify"

    @property
    def description(self) -> str:
        return "Fits constants for every pointwise estimate and checks the inequality and intertwining suites."

    def run(self, config: ExperimentConfig, cell: Cell, out_dir: Path, **kwargs: Any) -> Dict[str, Any]:
        plot = bool(kwargs.get("plot", config.plot))
        vcfg = config.verify
        grid = cell.grid.build()
        dense_limit = config.engine.dense_limit or kwargs.get("dense_limit") or DENSE_LIMIT
        bench = KernelWorkbench(
            config.build_polynomial(), cell.tau, grid, tol=config.engine.tol, dense_limit=dense_limit,
            szego_degree=config.engine.szego_degree,
        )
        policy = config.probes.policy()
        target = cell.directory(out_dir, self.name)
        files: list[Path] = []
        bounds: list[dict[str, Any]] = []
        failed = False

        for theorem in vcfg.theorems:
            if (theorem in NEEDS_TAU and cell.tau <= 0) or (theorem in TAU_FREE_ONLY and cell.tau != 0):
                continue
            for dcfg in vcfg.derivatives:
                spec = dcfg.spec()
                stem = f"{theorem}_{_slug(spec.label)}"
                try:
                    report = verify_kernel_bound(theorem, bench.p, cell.tau, grid, probes=policy, derivative=spec, bench=bench)
                except (DegenerateSamplesError, UnsupportedKernelError) as exc:
                    logger.warning("verify %s: %s skipped: %s", cell.key, stem, exc)
                    bounds.append({"file": None, "theorem": theorem, "derivative": spec.label, "skipped": str(exc)})
                    continue
                files.append(write_json(target / f"{stem}.json", report.to_dict()))
                if vcfg.margins_csv:
                    files.append(write_frame(target / f"{stem}_margins.csv", margins_frame(report)))
                if plot:
                    from heatlab.core.plots import margin_histogram

                    files.append(margin_histogram(target / f"{stem}_margins.svg", report.spec, report.margins))
                failed |= report.failed
                bounds.append({"file": f"{stem}.json", "theorem": theorem, "derivative": spec.label, "report": report.to_dict()})

        inequalities: list[dict[str, Any]] = []
        for case in vcfg.inequalities:
            if case in INEQUALITIES_NEED_TAU and cell.tau <= 0:
                continue
            try:
                result = verify_inequality(case, bench.p, cell.tau, grid, trials=vcfg.trials, seed=config.seed, bench=bench)
            except UnsupportedKernelError as exc:
                logger.warning("verify %s: inequality %s skipped: %s", cell.key, case.value, exc)
                inequalities.append({"case": case.value, "skipped": str(exc)})
                continue
            reports: list[InequalityReport] = result if isinstance(result, list) else [result]
            payload = [r.to_dict() for r in reports]
            files.append(write_json(target / f"inequality_{case.value}.json", payload))
            failed |= any(r.failed for r in reports)
            inequalities.append({"case": case.value, "failures": sum(r.failures for r in reports)})

        intertwining = None
        if vcfg.intertwining and cell.tau > 0:
            report_i = verify_intertwining(bench.p, cell.tau, grid, seed=config.seed, bench=bench)
            intertwining = report_i.to_dict()
            files.append(write_json(target / "intertwining.json", intertwining))
            failed |= not report_i.passed

        summary = {"tau": cell.tau, "n": grid.n, "L": grid.half_width, "bounds": bounds, "inequalities": inequalities, "intertwining": intertwining}
        files.append(write_json(target / "verify_report.json", summary))
        logger.info("verify %s: %d bound reports, failed=%s", cell.key, len(bounds), failed)
        return {"status": "success", "failed": failed, "summary": summary, "output_files": [str(f) for f in files]}


def reports_by_spec(results: list[dict[str, Any]]) -> dict[str, list[BoundReport]]:
    """Group the bound reports of several verify cells by (estimate, derivative)."""
    out: dict[str, list[BoundReport]] = {}
    for result in results:
        for entry in (result.get("summary") or {}).get("bounds", []):
            if "report" in entry:
                out.setdefault(f"{entry['theorem']}[{entry['derivative']}]", []).append(BoundReport.from_dict(entry["report"]))
    return out
