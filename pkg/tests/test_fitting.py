from __future__ import annotations

import numpy as np
import pytest

from heatlab.core.bounds import SPECS
from heatlab.core.errors import DegenerateSamplesError
from heatlab.core.fitting import BoundReport, SampleSet, constant_report, fit_bound


def _gaussian_samples(c: float, C: float) -> SampleSet:
    s, d = np.meshgrid(np.geomspace(0.5, 2.0, 6), np.linspace(0.0, 2.0, 6))
    s, d = s.ravel(), d.ravel()
    values = C * np.exp(-c * d**2 / s) / s
    return SampleSet({"s": s, "d": d}, values)


def test_fit_recovers_gaussian_constants() -> None:
    report = fit_bound(_gaussian_samples(0.5, 2.0), SPECS["free_heat"], provenance={"tau": 0.0})
    assert report.c == pytest.approx(0.5, rel=1e-3)
    assert report.C == pytest.approx(2.0, rel=1e-2)
    assert report.violations == 0
    assert report.min_margin >= -1e-12
    assert not report.failed
    assert report.provenance["tau"] == 0.0
    assert len(report.margins) == report.samples == 36


def test_fit_rejects_degenerate_samples() -> None:
    with pytest.raises(DegenerateSamplesError):
        fit_bound(SampleSet({"s": np.ones(5), "d": np.ones(5)}, np.ones(5)), SPECS["free_heat"])
    with pytest.raises(DegenerateSamplesError, match="single input point"):
        fit_bound(SampleSet({"s": np.ones(30), "d": np.ones(30)}, np.ones(30)), SPECS["free_heat"])
    bad = _gaussian_samples(0.5, 1.0)
    values = bad.values.copy()
    values[3] = np.nan
    with pytest.raises(DegenerateSamplesError, match="finite"):
        fit_bound(SampleSet(bad.columns, values), SPECS["free_heat"])


def test_growing_values_are_flagged_unstable() -> None:
    samples = _gaussian_samples(0.5, 1.0)
    growing = SampleSet(samples.columns, np.exp(samples.columns["d"] ** 2 / samples.columns["s"]) / samples.columns["s"])
    report = fit_bound(growing, SPECS["free_heat"])
    assert report.unstable
    assert report.failed


def test_constant_report() -> None:
    lhs = np.array([1.0, 2.0, 3.0, 1.0])
    rhs = np.array([1.0, 1.0, 1.0, 1.0])
    report = constant_report("ratio", lhs, rhs, provenance={"m": 2})
    assert report.C == 3.0
    assert report.c is None
    assert report.violations == 0
    assert report.min_margin == pytest.approx(0.0)
    with pytest.raises(DegenerateSamplesError):
        constant_report("empty", np.array([]), np.array([]))


def test_report_survives_json_shape() -> None:
    report = fit_bound(_gaussian_samples(0.25, 1.0), SPECS["free_heat"], provenance={"tau": 0.0, "n": 33}, excluded=4)
    again = BoundReport.from_dict(report.to_dict())
    assert again.spec == "free_heat"
    assert again.c == pytest.approx(report.c)
    assert again.excluded == 4
    assert again.split_stable == report.split_stable
    assert again.provenance["n"] == 33
