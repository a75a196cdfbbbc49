from __future__ import annotations

import importlib
import os
from importlib import metadata
from typing import Any, Dict

REQUIRED = ("numpy", "scipy", "sympy", "pydantic", "typer", "rich", "jinja2", "pandas", "matplotlib")
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "HEATLAB_THREADS")
DISTRIBUTIONS = {"jinja2": "Jinja2"}


def check_python_module(name: str) -> Dict[str, Any]:
    try:
        importlib.import_module(name)
    except ImportError as exc:
        return {"ok": False, "details": f"ImportError: {exc}"}
    try:
        version = metadata.version(DISTRIBUTIONS.get(name, name))
    except metadata.PackageNotFoundError:
        version = "unknown"
    return {"ok": True, "details": f"version {version}"}


def check_sparse_eigensolver() -> Dict[str, Any]:
    """A 2x2 Hermitian sanity solve through scipy's dense eigensolver."""
    try:
        import numpy as np
        from scipy.linalg import eigh

        vals = eigh(np.array([[2.0, 1.0j], [-1.0j, 2.0]]), eigvals_only=True)
        ok = bool(np.allclose(vals, [1.0, 3.0]))
        return {"ok": ok, "details": f"eigenvalues {vals.tolist()}"}
    except Exception as exc:
        return {"ok": False, "details": f"{type(exc).__name__}: {exc}"}


def run_doctor() -> Dict[str, Any]:
    checks = []
    for mod in REQUIRED:
        res = check_python_module(mod)
        res["name"] = f"python:{mod}"
        checks.append(res)

    res = check_sparse_eigensolver()
    res["name"] = "linalg:eigh"
    checks.append(res)

    for var in THREAD_VARS:
        value = os.environ.get(var)
        # informational; unset is fine
        checks.append({"name": f"env:{var}", "ok": True, "details": value if value is not None else "unset"})

    return {"ok": all(c["ok"] for c in checks), "checks": checks}
