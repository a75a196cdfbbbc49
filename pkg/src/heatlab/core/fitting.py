from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from heatlab.core.errors import DegenerateSamplesError

logger = logging.getLogger(__name__)

Columns = Mapping[str, np.ndarray]

MIN_SAMPLES = 20
C_MAX = 10.0
UNSTABLE_C_BELOW = 0.01
UNSTABLE_BIG_C = 1e6


@dataclass(frozen=True)
class BoundSpec:
    """
    Right-hand side shape of a pointwise estimate.

    `predictor(columns, c)` returns the positive bound shape for decay constant `c`;
    the multiplicative constant C is fitted separately. Specs without a decay constant
    (`has_decay=False`) ignore `c`.
    `regimes` lists the branches of a max-of-two shape, for ablation only.
    """

    name: str
    predictor: Callable[[Columns, float], np.ndarray]
    has_decay: bool = True
    description: str = ""
    regimes: tuple[Callable[[Columns, float], np.ndarray], ...] = ()


@dataclass(frozen=True)
class SampleSet:
    columns: dict[str, np.ndarray]
    values: np.ndarray

    def __len__(self) -> int:
        return int(self.values.shape[0])

    def take(self, idx: np.ndarray) -> "SampleSet":
        return SampleSet({k: v[idx] for k, v in self.columns.items()}, self.values[idx])

    @classmethod
    def from_records(cls, records: Sequence[tuple[Mapping[str, float], float]]) -> "SampleSet":
        if not records:
            return cls({}, np.zeros(0))
        keys = sorted(records[0][0].keys())
        columns = {k: np.array([float(r[0][k]) for r in records]) for k in keys}
        values = np.array([abs(complex(r[1])) for r in records], dtype=float)
        return cls(columns, values)

    @classmethod
    def concat(cls, parts: Sequence["SampleSet"]) -> "SampleSet":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls({}, np.zeros(0))
        keys = sorted(parts[0].columns)
        return cls(
            {k: np.concatenate([p.columns[k] for p in parts]) for k in keys},
            np.concatenate([p.values for p in parts]),
        )


@dataclass(frozen=True)
class BoundReport:
    spec: str
    c: float | None
    C: float
    samples: int
    violations: int
    min_margin: float
    median_margin: float
    unstable: bool
    split_stable: bool
    excluded: int = 0
    provenance: dict[str, Any] = field(default_factory=dict)
    margins: tuple[float, ...] = ()
    predictors: tuple[float, ...] = ()
    values: tuple[float, ...] = ()

    @property
    def failed(self) -> bool:
        return self.violations > 0 or self.unstable or not self.split_stable

    def to_dict(self) -> dict[str, Any]:
        provenance = dict(self.provenance)
        provenance.setdefault("median_margin", self.median_margin)
        provenance.setdefault("excluded", self.excluded)
        provenance.setdefault("split_stable", self.split_stable)
        return {
            "spec": self.spec,
            "c": self.c,
            "C": self.C,
            "samples": self.samples,
            "violations": self.violations,
            "min_margin": self.min_margin,
            "unstable": self.unstable,
            "provenance": provenance,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "BoundReport":
        provenance = dict(data.get("provenance") or {})
        return cls(
            spec=data["spec"],
            c=data.get("c"),
            C=float(data["C"]),
            samples=int(data["samples"]),
            violations=int(data["violations"]),
            min_margin=float(data["min_margin"]),
            median_margin=float(provenance.get("median_margin", data["min_margin"])),
            unstable=bool(data["unstable"]),
            split_stable=bool(provenance.get("split_stable", True)),
            excluded=int(provenance.get("excluded", 0)),
            provenance=provenance,
        )


def _log_residual(log_values: np.ndarray, log_pred: np.ndarray) -> float:
    r = log_values - log_pred
    r = r - r.mean()
    return float(np.dot(r, r))


def _fit_decay(samples: SampleSet, spec: BoundSpec, floor: float) -> float:
    usable = samples.values > floor
    if int(usable.sum()) < 3:
        return 0.0
    sub = samples.take(np.flatnonzero(usable))
    log_values = np.log(sub.values)

    def objective(c: float) -> float:
        pred = spec.predictor(sub.columns, c)
        return _log_residual(log_values, np.log(np.maximum(pred, np.finfo(float).tiny)))

    # coarse scan first; max-of-regime shapes are not unimodal in c
    grid = np.concatenate([[0.0], np.geomspace(1e-3, C_MAX, 40)])
    scores = np.array([objective(c) for c in grid])
    best = int(np.argmin(scores))
    lo = grid[max(best - 1, 0)]
    hi = grid[min(best + 1, grid.size - 1)]
    if hi <= lo:
        return float(grid[best])
    res = minimize_scalar(objective, bounds=(lo, hi), method="bounded", options={"xatol": 1e-6})
    c = float(res.x) if res.fun <= scores[best] else float(grid[best])
    return max(c, 0.0)


def _constant_for(samples: SampleSet, spec: BoundSpec, c: float) -> tuple[float, np.ndarray]:
    pred = spec.predictor(samples.columns, c)
    ratios = samples.values / pred
    return float(np.max(ratios)), pred


def _fit(samples: SampleSet, spec: BoundSpec, floor: float) -> tuple[float | None, float, np.ndarray]:
    c = _fit_decay(samples, spec, floor) if spec.has_decay else None
    C, pred = _constant_for(samples, spec, c if c is not None else 0.0)
    return c, C, pred


def _check_degenerate(samples: SampleSet) -> None:
    if len(samples) < MIN_SAMPLES:
        raise DegenerateSamplesError(f"need at least {MIN_SAMPLES} samples, got {len(samples)}")
    if not samples.columns:
        raise DegenerateSamplesError("samples carry no inputs")
    stacked = np.column_stack([samples.columns[k] for k in sorted(samples.columns)])
    if np.all(np.ptp(stacked, axis=0) == 0.0):
        raise DegenerateSamplesError("all samples sit at a single input point")
    if not np.all(np.isfinite(samples.values)):
        raise DegenerateSamplesError("kernel values must be finite")


def fit_bound(
    samples: SampleSet | Sequence[tuple[Mapping[str, float], float]],
    spec: BoundSpec,
    *,
    provenance: Mapping[str, Any] | None = None,
    excluded: int = 0,
    noise_floor: float = 1e-12,
) -> BoundReport:
    """
    Fit (c, C) so that |value| <= C * predictor(c) on every sample.

    c comes from least squares on log|value| against log predictor; C is then the
    largest ratio, so the fit has zero violations by construction. The sample set
    is split in two interleaved halves and refitted to judge stability.
    """
    if not isinstance(samples, SampleSet):
        samples = SampleSet.from_records(samples)
    _check_degenerate(samples)

    order = np.lexsort([samples.columns[k] for k in sorted(samples.columns, reverse=True)])
    samples = samples.take(order)
    floor = noise_floor * float(np.max(samples.values)) if samples.values.size else 0.0

    c, C, pred = _fit(samples, spec, floor)
    margins = 1.0 - samples.values / (C * pred)
    violations = int(np.sum(margins < -1e-12))

    halves = [samples.take(np.arange(i, len(samples), 2)) for i in (0, 1)]
    fits = [_fit(half, spec, floor) for half in halves]
    c_halves = [f[0] for f in fits]
    C_halves = [f[1] for f in fits]
    split_stable = True
    if spec.has_decay:
        c1, c2 = c_halves
        top = max(c1 or 0.0, c2 or 0.0)
        if top > 0 and abs((c1 or 0.0) - (c2 or 0.0)) / top >= 0.25:
            split_stable = False
    lo_C, hi_C = min(C_halves), max(C_halves)
    if lo_C <= 0 or hi_C / lo_C >= 4.0:
        split_stable = False

    unstable = (not np.isfinite(C)) or C > UNSTABLE_BIG_C
    if spec.has_decay and (c is None or c < UNSTABLE_C_BELOW):
        unstable = True

    prov = dict(provenance or {})
    prov["split"] = {"c": c_halves, "C": C_halves}
    report = BoundReport(
        spec=spec.name,
        c=c,
        C=C,
        samples=len(samples),
        violations=violations,
        min_margin=float(np.min(margins)),
        median_margin=float(np.median(margins)),
        unstable=bool(unstable),
        split_stable=split_stable,
        excluded=excluded,
        provenance=prov,
        margins=tuple(float(m) for m in margins),
        predictors=tuple(float(p) for p in pred),
        values=tuple(float(v) for v in samples.values),
    )
    logger.debug("fit %s: c=%s C=%.3e samples=%d unstable=%s", spec.name, c, C, len(samples), unstable)
    return report


def constant_report(
    name: str,
    lhs: np.ndarray,
    rhs: np.ndarray,
    *,
    provenance: Mapping[str, Any] | None = None,
    excluded: int = 0,
) -> BoundReport:
    """Smallest C with lhs <= C * rhs; used where the estimate has no decay constant."""
    lhs = np.asarray(lhs, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if lhs.size == 0:
        raise DegenerateSamplesError(f"{name}: no admissible samples")
    C = float(np.max(lhs / rhs))
    margins = 1.0 - lhs / (C * rhs)
    halves = [np.arange(i, lhs.size, 2) for i in (0, 1)]
    C_halves = [float(np.max(lhs[h] / rhs[h])) if h.size else C for h in halves]
    lo, hi = min(C_halves), max(C_halves)
    return BoundReport(
        spec=name,
        c=None,
        C=C,
        samples=int(lhs.size),
        violations=int(np.sum(margins < -1e-12)),
        min_margin=float(np.min(margins)),
        median_margin=float(np.median(margins)),
        unstable=(not np.isfinite(C)) or C > UNSTABLE_BIG_C,
        split_stable=lo > 0 and hi / lo < 4.0,
        excluded=excluded,
        provenance={**dict(provenance or {}), "split": {"c": [None, None], "C": C_halves}},
        margins=tuple(float(m) for m in margins),
        predictors=tuple(float(r) for r in rhs),
        values=tuple(float(v) for v in lhs),
    )
