"""Trajectory export and machine-readable run reports.

CSV columns are fixed: t, q..., v..., p..., lam..., energy,
constraint_residual, dirac_residual - one row per accepted step, floats
printed with 17 significant digits so reruns are byte-identical.  JSON
reports hold only plain Python scalars (floats keep their exact value
through the shortest round-trip repr) and validate against the schema
shipped with the package.
"""

from __future__ import annotations

import json
from importlib import resources

import numpy as np

from .dynamics import Trajectory, energy_series, theorem_equivalence_report
from .systems import vak_gradients

__all__ = [
    "write_trajectory_csv",
    "build_run_report",
    "write_json",
    "load_run_report_schema",
    "validate_against_schema",
]

_CYCLIC_TOL = 1e-10


def _fmt(x) -> str:
    return format(float(x), ".17g")


def write_trajectory_csv(traj: Trajectory, path) -> None:
    n, m = traj.spec.n, traj.spec.m
    diag = traj.diagnostics()
    header = (["t"]
              + [f"q{i}" for i in range(n)]
              + [f"v{i}" for i in range(n)]
              + [f"p{i}" for i in range(n)]
              + [f"lam{a}" for a in range(m)]
              + ["energy", "constraint_residual", "dirac_residual"])
    lines = [",".join(header)]
    dirac = np.maximum(diag["dirac_hat"], diag["dirac_bar"])
    for i in range(len(traj)):
        row = ([_fmt(traj.t[i])]
               + [_fmt(x) for x in traj.q[i]]
               + [_fmt(x) for x in traj.v[i]]
               + [_fmt(x) for x in traj.p[i]]
               + [_fmt(x) for x in traj.lam[i]]
               + [_fmt(diag["energy"][i]), _fmt(diag["constraint"][i]),
                  _fmt(dirac[i])])
        lines.append(",".join(row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(x) for x in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(x) for x in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    return obj


def _momentum_table(traj: Trajectory, max_samples=200):
    """Per-coordinate momentum drift, with coordinates flagged cyclic when
    the momentum rate of the active equations vanishes along the samples
    (the extended-Lagrangian gradient for vakonomic runs, the forced
    Lagrange-d'Alembert rate for nonholonomic ones)."""
    spec = traj.spec
    N = len(traj)
    stride = max(1, N // max_samples)
    gq_max = np.zeros(spec.n)
    for i in range(0, N, stride):
        if traj.mode == "vakonomic":
            _, gq, _, _ = vak_gradients(spec, traj.q[i], traj.v[i], traj.lam[i])
        else:
            _, gq, _ = spec.L.grad(traj.q[i], traj.v[i])
            if spec.m:
                gq = gq + spec.mu_matrix(traj.q[i]).T @ traj.lam[i]
        gq_max = np.maximum(gq_max, np.abs(gq))
    t_span = float(traj.t[-1] - traj.t[0]) if N > 1 else 1.0
    table = []
    for i in range(spec.n):
        drift = float(np.max(np.abs(traj.p[:, i] - traj.p[0, i])))
        table.append({
            "index": i,
            "coordinate": f"q{i}",
            "cyclic": bool(gq_max[i] <= _CYCLIC_TOL),
            "max_drift": drift,
            "mean_rate": float((traj.p[-1, i] - traj.p[0, i]) / t_span),
        })
    return table


def build_run_report(traj: Trajectory, cfg=None, seed=None, initial=None) -> dict:
    spec = traj.spec
    E, drift = energy_series(spec, traj)
    diag = traj.diagnostics()
    if traj.mode == "vakonomic":
        eq = theorem_equivalence_report(spec, traj)
        equivalence = {"max_residual": eq.max_residual,
                       "max_pairwise_difference": eq.max_pairwise_difference}
    else:
        equivalence = None
    if initial is None:
        initial = {"q0": traj.q[0], "v0": traj.v[0], "lambda0": traj.lam[0]}
    report = {
        "schema": "vakdirac-run-report/1",
        "system": {"name": spec.name, "n": spec.n, "m": spec.m,
                   "params": dict(spec.params)},
        "mode": traj.mode,
        "config": {
            "dt": float(cfg.dt) if cfg is not None else
                  (float(traj.t[1] - traj.t[0]) if len(traj) > 1 else 0.0),
            "t_end": float(cfg.t_end) if cfg is not None else float(traj.t[-1]),
            "newton_tol": float(cfg.newton_tol) if cfg is not None else 1e-12,
            "newton_max_iter": int(cfg.newton_max_iter) if cfg is not None else 50,
            "integrator": traj.integrator,
            "backend": traj.backend,
        },
        "seed": seed,
        "steps": len(traj),
        "initial": initial,
        "conservation": {
            "energy_initial": float(E[0]),
            "energy_drift": drift,
            "momenta": _momentum_table(traj),
        },
        "constraint_max_residual": float(np.max(diag["constraint"])),
        "dirac_residual_max": {"hat": float(np.max(diag["dirac_hat"])),
                               "bar": float(np.max(diag["dirac_bar"]))},
        "equivalence": equivalence,
        "warnings": list(traj.warnings),
        "final_state": {
            "t": float(traj.t[-1]),
            "q": traj.q[-1], "v": traj.v[-1], "p": traj.p[-1],
            "lambda": traj.lam[-1],
        },
    }
    return _jsonable(report)


def write_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_run_report_schema() -> dict:
    text = (resources.files("vakdirac.schema") / "run_report.schema.json").read_text()
    return json.loads(text)


def validate_against_schema(obj, schema, path="$"):
    """Check `obj` against the subset of JSON Schema the shipped schemas
    use (type, enum, properties, required, items).  Returns a list of
    violation strings; empty means valid."""
    errors = []
    types = schema.get("type")
    if types is not None:
        if isinstance(types, str):
            types = [types]
        if not any(_type_ok(obj, t) for t in types):
            errors.append(f"{path}: expected type {types}, got {type(obj).__name__}")
            return errors
    if "enum" in schema and obj not in schema["enum"]:
        errors.append(f"{path}: {obj!r} not in {schema['enum']}")
    if isinstance(obj, dict):
        for key in schema.get("required", []):
            if key not in obj:
                errors.append(f"{path}: missing required key {key!r}")
        for key, sub in schema.get("properties", {}).items():
            if key in obj:
                errors.extend(validate_against_schema(obj[key], sub, f"{path}.{key}"))
    if isinstance(obj, list) and "items" in schema:
        for i, item in enumerate(obj):
            errors.extend(validate_against_schema(item, schema["items"], f"{path}[{i}]"))
    return errors


def _type_ok(obj, t):
    if t == "object":
        return isinstance(obj, dict)
    if t == "array":
        return isinstance(obj, list)
    if t == "string":
        return isinstance(obj, str)
    if t == "integer":
        return isinstance(obj, int) and not isinstance(obj, bool)
    if t == "number":
        return isinstance(obj, (int, float)) and not isinstance(obj, bool)
    if t == "boolean":
        return isinstance(obj, bool)
    if t == "null":
        return obj is None
    return False
