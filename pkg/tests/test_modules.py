from __future__ import annotations

import json
from pathlib import Path

import pytest
from typer.testing import CliRunner

import heatlab.cli as cli

runner = CliRunner()

FOCK = {"real_poly": [{"a": 2, "b": 0, "c": 1.0}, {"a": 0, "b": 2, "c": 1.0}]}


def _write(tmp_path: Path, doc: dict) -> Path:
    path = tmp_path / "experiment.json"
    path.write_text(json.dumps({"polynomial": FOCK, "taus": [1.0], **doc}), encoding="utf-8")
    return path


def _report(out: Path, stage: str, cell: str) -> dict:
    return json.loads((out / stage / cell / f"{stage}_report.json").read_text(encoding="utf-8"))


def test_kernel_run_reports_spectrum_and_szego(tmp_path: Path):
    config = _write(
        tmp_path,
        {
            "grid": {"L": 4.0, "n": 25},
            "kernel": {"kinds": ["HTilde", "GTilde", "Szego", "Resolvent"], "s_values": [0.2, 0.8], "lambdas": [2.0]},
        },
    )
    out = tmp_path / "out"
    result = runner.invoke(cli.app, ["kernel", "--config", str(config), "--out", str(out)])
    assert result.exit_code == 0, result.stdout

    report = _report(out, "kernel", "tau1_n25_L4")
    kinds = {r["kind"] for r in report["slices"]}
    assert kinds == {"HTilde", "GTilde", "Szego", "Resolvent"}
    assert report["szego"]["rank"] > 0
    assert report["szego"]["orthonormality_defect"] < 1e-10
    spectrum = report["spectrum"]
    assert spectrum["isospectral_mismatch"] <= 1e-8
    assert spectrum["level_spacing"] == pytest.approx(2.0)
    assert 0 < spectrum["null_count"] < 625
    assert all(level["expected"] == pytest.approx(2.0 * level["level"]) for level in spectrum["landau_levels"])
    assert report["relative_decay"]["rate"] > 0


def test_wave_run_meets_cone_speed_and_subordination_limits(tmp_path: Path):
    config = _write(
        tmp_path,
        {
            "grid": {"L": 6.0, "n": 49},
            "engine": {"dense_limit": 64},
            "wave": {"horizon": 2.0, "cone_radius": 2.5, "subordination_s": 0.3, "subordination_probes": 5},
        },
    )
    out = tmp_path / "out"
    result = runner.invoke(cli.app, ["wave", "--config", str(config), "--out", str(out)])
    assert result.exit_code == 0, result.stdout

    report = _report(out, "wave", "tau1_n49_L6")
    assert report["speed"]["speed"] <= 1.05
    assert report["cone"]["nonincreasing"]
    assert report["cone"]["outside_data_leak"] <= 1e-6
    assert report["subordination"]["s"] == 0.3
    assert len(report["subordination"]["errors"]) == 5
    assert report["subordination"]["max_error"] <= 0.05
    assert report["locality"]["ok"] and report["locality"]["reach"] == 6
    assert report["support"] is None


def test_verify_run_skips_products_above_the_dense_limit(tmp_path: Path):
    config = _write(
        tmp_path,
        {
            "grid": {"L": 4.0, "n": 25},
            "engine": {"dense_limit": 64},
            "verify": {
                "theorems": [],
                "inequalities": ["poincare_compact", "scalar_max", "products"],
                "trials": 6,
                "intertwining": True,
            },
        },
    )
    out = tmp_path / "out"
    result = runner.invoke(cli.app, ["verify", "--config", str(config), "--out", str(out)])
    assert result.exit_code == 0, result.stdout

    report = _report(out, "verify", "tau1_n25_L4")
    by_case = {entry["case"]: entry for entry in report["inequalities"]}
    assert "dense limit" in by_case["products"]["skipped"]
    assert by_case["poincare_compact"]["failures"] == 0
    assert by_case["scalar_max"]["failures"] == 0
    assert report["intertwining"]["passed"]
    assert (out / "verify" / "tau1_n25_L4" / "inequality_poincare_compact.json").exists()
    assert not (out / "verify" / "tau1_n25_L4" / "inequality_products.json").exists()
