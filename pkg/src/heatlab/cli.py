from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Optional

import typer
from rich import print

from heatlab.config import load_settings
from heatlab.core.bounds import refinement_drift, tau_spread
from heatlab.core.errors import ConfigError
from heatlab.core.io import remove_files, write_json
from heatlab.core.json_utils import pretty_json
from heatlab.core.logging_utils import configure_logging
from heatlab.core.manifest import ManifestBuilder
from heatlab.core.models import ExperimentConfig, config_schema, load_config

app = typer.Typer(add_completion=False, help="heatlab: weighted dbar heat kernels, Szego projections and their bounds")
logger = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2
DRIFT_LIMIT = 0.2
DRIFT_CHECKED = ("off_diagonal",)

ConfigOpt = typer.Option(..., "--config", "-c", exists=False, help="Experiment config (JSON).")
PlotOpt = typer.Option(False, "--plot", help="Also emit SVG figures.")
OutOpt = typer.Option(None, "--out", help="Output directory (defaults to config out_dir, then HEATLAB_OUT_DIR).")
ThreadsOpt = typer.Option(None, "--threads", min=1, help="Worker threads (defaults to config, then HEATLAB_THREADS).")
KeepOpt = typer.Option(False, "--keep-failed", help="Keep outputs when the run exits non-zero.")


def _load(config_path: Path) -> ExperimentConfig:
    try:
        return load_config(config_path)
    except ConfigError as exc:
        print(f"[red]Config error:[/red] {exc}")
        raise typer.Exit(code=EXIT_CONFIG)


def _resolve(config: ExperimentConfig, out: Optional[Path], threads: Optional[int]) -> tuple[Path, int]:
    settings = load_settings()
    out_dir = Path(out or config.out_dir or settings.out_dir).resolve()
    workers = threads or config.threads or settings.threads
    return out_dir, max(1, int(workers))


def _sweep_summary(results: list[dict[str, Any]]) -> dict[str, Any]:
    from heatlab.modules.verify import reports_by_spec

    grouped = reports_by_spec([r for r in results if r.get("module") == "verify"])
    spread: dict[str, Any] = {}
    drift: dict[str, Any] = {}
    failed = False
    for key, reports in sorted(grouped.items()):
        spread[key] = tau_spread(reports)
        by_tau: dict[float, list] = {}
        for r in reports:
            by_tau.setdefault(float(r.provenance.get("tau", 0.0)), []).append(r)
        for tau, group in sorted(by_tau.items()):
            group.sort(key=lambda r: int(r.provenance.get("n", 0)))
            for coarse, fine in zip(group, group[1:]):
                value = refinement_drift(coarse, fine)
                drift[f"{key} tau={tau:g} n={coarse.provenance.get('n')}->{fine.provenance.get('n')}"] = value
                if key.split("[")[0] in DRIFT_CHECKED and value > DRIFT_LIMIT:
                    failed = True
    return {"tau_spread": spread, "refinement_drift": drift, "failed": failed}


def _execute(
    names: list[str],
    config_path: Path,
    *,
    plot: bool,
    out: Optional[Path],
    threads: Optional[int],
    keep_failed: bool,
    sweep: bool = False,
) -> None:
    config = _load(config_path)
    settings = load_settings()
    configure_logging(settings.log_level)
    out_dir, workers = _resolve(config, out, threads)
    out_dir.mkdir(parents=True, exist_ok=True)

    from heatlab.worker import run_modules

    builder = ManifestBuilder(config=config.model_dump(mode="json"), root=out_dir)
    results: list[dict[str, Any]] = []
    for name in names:
        with builder.stage(name):
            batch = run_modules(
                config, [name], out_dir, threads=workers, sweep=sweep, plot=plot or config.plot,
                dense_limit=settings.dense_limit,
            )
        results.extend(batch)
        builder.add([f for r in batch for f in r["output_files"]])

    failed = any(r.get("failed") for r in results)
    if sweep:
        summary = _sweep_summary(results)
        builder.add([write_json(out_dir / "sweep_report.json", summary)])
        failed |= summary["failed"]

    for r in results:
        status = r.get("status", "FAILED")
        if status != "success":
            print(f"[red]{r['module']:<9} {r['cell']:<28} FAILED[/red] {r.get('error', '')}")
        elif r.get("failed"):
            print(f"[yellow]{r['module']:<9} {r['cell']:<28} checks failed[/yellow]")
        else:
            print(f"[green]{r['module']:<9} {r['cell']:<28} ok[/green]")

    if failed and not keep_failed:
        removed = remove_files(builder.files)
        print(f"[red]Run failed;[/red] removed {removed} file(s) written by this run.")
        raise typer.Exit(code=EXIT_FAILED)
    manifest = builder.write()
    print(f"Manifest: {manifest}")
    if failed:
        raise typer.Exit(code=EXIT_FAILED)


@app.command("geometry")
def geometry_cmd(config: Path = ConfigOpt, plot: bool = PlotOpt, out: Optional[Path] = OutOpt,
                 threads: Optional[int] = ThreadsOpt, keep_failed: bool = KeepOpt):
    """Lambda/mu sweeps and the geometry checks (CSV + JSON)."""
    _execute(["geometry"], config, plot=plot, out=out, threads=threads, keep_failed=keep_failed)


@app.command("assemble")
def assemble_cmd(config: Path = ConfigOpt, plot: bool = PlotOpt, out: Optional[Path] = OutOpt,
                 threads: Optional[int] = ThreadsOpt, keep_failed: bool = KeepOpt):
    """Operator dumps and structural residual checks."""
    _execute(["assemble"], config, plot=plot, out=out, threads=threads, keep_failed=keep_failed)


@app.command("kernel")
def kernel_cmd(config: Path = ConfigOpt, plot: bool = PlotOpt, out: Optional[Path] = OutOpt,
               threads: Optional[int] = ThreadsOpt, keep_failed: bool = KeepOpt):
    """Kernel slices (CSV) with optional SVG heatmaps."""
    _execute(["kernel"], config, plot=plot, out=out, threads=threads, keep_failed=keep_failed)


@app.command("wave")
def wave_cmd(config: Path = ConfigOpt, plot: bool = PlotOpt, out: Optional[Path] = OutOpt,
             threads: Optional[int] = ThreadsOpt, keep_failed: bool = KeepOpt):
    """Wave trajectories, cone energies, subordination and tail estimates."""
    _execute(["wave"], config, plot=plot, out=out, threads=threads, keep_failed=keep_failed)


@app.command("verify")
def verify_cmd(config: Path = ConfigOpt, plot: bool = PlotOpt, out: Optional[Path] = OutOpt,
               threads: Optional[int] = ThreadsOpt, keep_failed: bool = KeepOpt):
    """Bound reports, inequality reports and the intertwining check."""
    _execute(["verify"], config, plot=plot, out=out, threads=threads, keep_failed=keep_failed)


@app.command("sweep")
def sweep_cmd(config: Path = ConfigOpt, plot: bool = PlotOpt, out: Optional[Path] = OutOpt,
              threads: Optional[int] = ThreadsOpt, keep_failed: bool = KeepOpt):
    """Kernel and verify over every tau and grid, with cross-tau spread and refinement drift."""
    _execute(["kernel", "verify"], config, plot=plot, out=out, threads=threads, keep_failed=keep_failed, sweep=True)


@app.command("report")
def report_cmd(out: Path = typer.Argument(..., help="Output directory of a previous run.")):
    """Render the JSON reports of an output directory into summary.html."""
    from heatlab.modules.reports import render_summary

    if not out.is_dir():
        print(f"[red]Not a directory:[/red] {out}")
        raise typer.Exit(code=EXIT_CONFIG)
    print(f"[green]Summary:[/green] {render_summary(out)}")


@app.command("schema")
def schema_cmd(out: Optional[Path] = typer.Option(None, "--out", help="Write the schema here instead of stdout.")):
    """Print the JSON schema of experiment configs."""
    text = pretty_json(config_schema())
    if out is None:
        typer.echo(text)
    else:
        write_json(out, config_schema())
        print(f"[green]Schema written:[/green] {out}")


@app.command("doctor")
def run_doctor_cmd():
    """Check availability of the numerical stack."""
    from heatlab.doctor import run_doctor

    report = run_doctor()
    print(f"[bold]heatlab doctor[/bold] (Overall: {'[green]OK[/green]' if report['ok'] else '[red]FAIL[/red]'})")

    for check in report["checks"]:
        color = "green" if check["ok"] else "red"
        print(f"[{color}] {check['name']:<24} : {check['details']} [/{color}]")

    if not report["ok"]:
        raise typer.Exit(code=1)


def main():
    app()


if __name__ == "__main__":
    main()
