from __future__ import annotations

import json
from pathlib import Path
from typing import Any

from jinja2 import Template

from heatlab import __version__
from heatlab.core.io import atomic_write_text

SUMMARY_TEMPLATE = Template(
    """
<!doctype html>
<html>
<head>
  <meta charset="utf-8" />
  <title>heatlab summary - {{ root }}</title>
  <style>
    body { font-family: system-ui, -apple-system, Segoe UI, Roboto, Arial, sans-serif; margin: 2rem; color: #111; }
    h1, h2 { margin: 0.2rem 0; }
    .muted { color: #666; }
    .mono { font-family: ui-monospace, SFMono-Regular, Menlo, Consolas, monospace; }
    table { border-collapse: collapse; width: 100%; margin-top: 0.75rem; }
    th, td { border: 1px solid #ddd; padding: 0.4rem; text-align: left; vertical-align: top; }
    th { background: #f5f5f5; }
    .badge { display: inline-block; padding: 0.1rem 0.5rem; border-radius: 0.5rem; font-size: 0.85rem; }
    .ok { background: #e6ffed; border: 1px solid #b7f5c8; }
    .bad { background: #ffe6e6; border: 1px solid #f5b7b7; }
  </style>
</head>
<body>
  <h1>heatlab run summary</h1>
  <div class="muted">heatlab {{ version }}{% if manifest %}, config <span class="mono">{{ manifest.config_sha256[:16] }}</span>{% endif %}</div>

  <h2 style="margin-top:1.5rem;">Pointwise estimates</h2>
  <table>
    <thead><tr><th>Cell</th><th>Estimate</th><th>c</th><th>C</th><th>Samples</th><th>Min margin</th><th>Status</th></tr></thead>
    <tbody>
      {% for row in bounds %}
      <tr>
        <td class="mono">{{ row.cell }}</td>
        <td>{{ row.spec }}</td>
        <td>{{ "%.4g"|format(row.c) if row.c is not none else "-" }}</td>
        <td>{{ "%.4g"|format(row.C) }}</td>
        <td>{{ row.samples }}</td>
        <td>{{ "%.3g"|format(row.min_margin) }}</td>
        <td><span class="badge {{ 'bad' if row.bad else 'ok' }}">{{ "FAIL" if row.bad else "OK" }}</span></td>
      </tr>
      {% endfor %}
    </tbody>
  </table>

  <h2 style="margin-top:1.5rem;">Other reports</h2>
  <table>
    <thead><tr><th>File</th><th>Highlights</th></tr></thead>
    <tbody>
      {% for row in others %}
      <tr><td class="mono">{{ row.path }}</td><td class="mono">{{ row.highlights }}</td></tr>
      {% endfor %}
    </tbody>
  </table>
</body>
</html>
"""
)

HIGHLIGHT_KEYS = ("kappa", "speed", "max_error", "matrix_defect", "krylov_residual", "kernel_residual", "failures", "drift")


def _highlights(payload: Any, found: dict[str, Any] | None = None) -> dict[str, Any]:
    found = {} if found is None else found
    if isinstance(payload, dict):
        for k, v in payload.items():
            if k in HIGHLIGHT_KEYS and not isinstance(v, (dict, list)):
                found.setdefault(k, v)
            else:
                _highlights(v, found)
    elif isinstance(payload, list):
        for item in payload:
            _highlights(item, found)
    return found


def render_summary(out_dir: Path) -> Path:
    """Collect every JSON report below `out_dir` into summary.html."""
    out_dir = Path(out_dir)
    manifest = None
    bounds: list[dict[str, Any]] = []
    others: list[dict[str, Any]] = []
    for path in sorted(out_dir.rglob("*.json")):
        payload = json.loads(path.read_text(encoding="utf-8"))
        rel = path.relative_to(out_dir).as_posix()
        if path.name == "manifest.json":
            manifest = payload
        elif isinstance(payload, dict) and {"spec", "C", "violations"} <= payload.keys():
            bounds.append(
                {
                    **payload,
                    "cell": path.parent.name,
                    "bad": payload["violations"] > 0 or payload["unstable"]
                    or not payload.get("provenance", {}).get("split_stable", True),
                }
            )
        else:
            others.append({"path": rel, "highlights": _highlights(payload)})
    html = SUMMARY_TEMPLATE.render(root=out_dir.name, version=__version__, manifest=manifest, bounds=bounds, others=others)
    return atomic_write_text(out_dir / "summary.html", html)
