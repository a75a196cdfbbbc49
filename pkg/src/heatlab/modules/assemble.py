from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Dict

from heatlab.core.discretize import (
    OperatorKind,
    assemble_box,
    assemble_first_order,
    conjugation_residual,
    direct_box_residual,
    symmetry_swap_residual,
)
from heatlab.core.io import write_json, write_operator
from heatlab.core.models import ExperimentConfig
from heatlab.modules.base import Cell, ExperimentModule

logger = logging.getLogger(__name__)

HERMITIAN_TOL = 1e-12


class AssembleModule(ExperimentModule):
    @property
    def name(self) -> str:
        return "assemble"

    @property
    def description(self) -> str:
        return "Assembles ZBar, Box and BoxTilde, checks adjointness and the symmetry identities, dumps operators."

    def run(self, config: ExperimentConfig, cell: Cell, out_dir: Path, **kwargs: Any) -> Dict[str, Any]:
        p = config.build_polynomial()
        grid = cell.grid.build()
        trials = config.assemble.residual_trials
        target = cell.directory(out_dir, self.name)

        zbar = assemble_first_order(OperatorKind.ZBAR, grid, p, cell.tau)
        z = assemble_first_order(OperatorKind.Z, grid, p, cell.tau)
        box = assemble_box(p, cell.tau, grid, twiddle=False)
        box_t = assemble_box(p, cell.tau, grid, twiddle=True)
        adjoint = (z.matrix + zbar.adjoint).tocsr()

        checks = {
            "z_adjoint_defect": float(abs(adjoint).max()) if adjoint.nnz else 0.0,
            "box_hermitian_defect": box.hermitian_defect(),
            "box_tilde_hermitian_defect": box_t.hermitian_defect(),
            "direct_box_residual": direct_box_residual(p, cell.tau, grid, False, trials=trials, seed=config.seed),
            "direct_box_tilde_residual": direct_box_residual(p, cell.tau, grid, True, trials=trials, seed=config.seed),
            "swap_residual": symmetry_swap_residual(p, cell.tau, grid, trials=trials, seed=config.seed),
            "conjugation_residual": conjugation_residual(p, cell.tau, grid),
        }
        failed = any(
            checks[k] > HERMITIAN_TOL
            for k in ("z_adjoint_defect", "box_hermitian_defect", "box_tilde_hermitian_defect", "conjugation_residual")
        )
        files = []
        if config.assemble.dump:
            for op in (zbar, box, box_t):
                files.append(write_operator(target / f"{op.kind.value}.coo", op))
        summary = {"tau": cell.tau, "n": grid.n, "L": grid.half_width, "h": grid.h, "nnz": int(box.matrix.nnz), **checks}
        files.append(write_json(target / "assemble_report.json", summary))
        if failed:
            logger.warning("assemble %s: structural identity failed %s", cell.key, checks)
        return {"status": "success", "failed": failed, "summary": summary, "output_files": [str(f) for f in files]}
