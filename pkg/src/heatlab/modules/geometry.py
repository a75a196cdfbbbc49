from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Dict

import numpy as np

from heatlab.core.io import write_frame, write_json
from heatlab.core.models import ExperimentConfig, as_complex
from heatlab.core.polygeom import approx_inverse_report, geometry_sweep, mu_field, mu_ratio_check, power_intuition
from heatlab.modules.base import Cell, ExperimentModule

logger = logging.getLogger(__name__)

INTUITION_BAND = (1.0 / 8.0, 8.0)


def _ratio_pairs(config: ExperimentConfig, tau: float, rng: np.random.Generator, reach: float) -> list[tuple[complex, complex]]:
    p = config.build_polynomial()
    pairs: list[tuple[complex, complex]] = []
    attempts = 0
    while len(pairs) < config.geometry.ratio_pairs and attempts < 50 * config.geometry.ratio_pairs:
        attempts += 1
        z = complex(*rng.uniform(-reach, reach, 2))
        w = complex(*rng.uniform(-reach, reach, 2))
        if abs(z - w) > float(mu_field(p, w, 1.0 / tau)):
            pairs.append((z, w))
    return pairs


class GeometryModule(ExperimentModule):
    @property
    def name(self) -> str:
        return "geometry"

    @property
    def description(self) -> str:
        return "Lambda/mu sweeps, approximate-inverse constant, x^(2m) scales and the mu ratio estimate."

    @property
    def uses_grid(self) -> bool:
        return False

    def run(self, config: ExperimentConfig, cell: Cell, out_dir: Path, **kwargs: Any) -> Dict[str, Any]:
        p = config.build_polynomial()
        geo = config.geometry
        target = cell.directory(out_dir, self.name)
        zs = [as_complex(z) for z in geo.points]
        files = [write_frame(target / "geometry.csv", geometry_sweep(p, zs, geo.deltas))]

        inverse = approx_inverse_report(p, [(z, d) for z in zs for d in geo.deltas])
        intuition: dict[str, Any] = {}
        failed = False
        for m in geo.intuition_m:
            frame = power_intuition(m, np.linspace(-2.0, 2.0, 17), np.logspace(-3, 1, 9))
            files.append(write_frame(target / f"intuition_m{m}.csv", frame))
            lo, hi = float(frame["ratio_min"].min()), float(frame["ratio_min"].max())
            inside = INTUITION_BAND[0] <= lo and hi <= INTUITION_BAND[1]
            failed |= not inside
            intuition[str(m)] = {"ratio_min": [lo, hi], "ratio_sum": [float(frame["ratio_sum"].min()), float(frame["ratio_sum"].max())], "inside": inside}

        rng = np.random.default_rng(config.seed)
        pairs = _ratio_pairs(config, cell.tau, rng, reach=min(3.0, cell.grid.L))
        ratio = mu_ratio_check(p, cell.tau, pairs).to_dict() if len(pairs) >= 2 else None

        summary = {
            "tau": cell.tau,
            "kappa": inverse.kappa,
            "kappa_ok": inverse.kappa <= 10.0,
            "intuition": intuition,
            "mu_ratio": ratio,
        }
        failed |= not summary["kappa_ok"]
        files.append(write_json(target / "geometry_report.json", summary))
        logger.info("geometry %s: kappa=%.3f", cell.key, inverse.kappa)
        return {"status": "success", "failed": failed, "summary": summary, "output_files": [str(f) for f in files]}
