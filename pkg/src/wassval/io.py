"""File formats: measures as JSON, plans and paths as CSV, value reports as JSON.

CSV floats are written with ``%.17g`` so that files round-trip exactly and
are byte-stable across runs.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from wassval.measure_control import ValueReport
from wassval.measures import ParticleMeasure, TransportPlan, make_particle_measure
from wassval.paths import MeasurePath, TimeGrid

__all__ = [
    "FLOAT_FMT",
    "config_hash",
    "measure_to_dict",
    "measure_from_dict",
    "read_measure",
    "write_measure",
    "write_plan_csv",
    "write_path_csv",
    "read_path_csv",
    "path_to_dict",
    "path_from_dict",
    "report_to_dict",
    "report_from_dict",
    "write_report",
    "read_report",
    "write_rows",
]

FLOAT_FMT = "%.17g"


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return FLOAT_FMT % x
    return str(x)


def write_rows(path, header, rows):
    """CSV with fixed float formatting and ``\\n`` line endings."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for row in rows:
            out.writerow([_fmt(v) for v in row])


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def measure_to_dict(mu: ParticleMeasure) -> dict:
    return {"dimension": mu.dim, "points": mu.points.tolist(), "weights": mu.weights.tolist()}


def measure_from_dict(data: dict) -> ParticleMeasure:
    for key in ("points", "weights"):
        if key not in data:
            raise KeyError(f"measure is missing {key!r}")
    mu = make_particle_measure(data["points"], data["weights"])
    if "dimension" in data and int(data["dimension"]) != mu.dim:
        raise ValueError(f"measure declares dimension {data['dimension']} but its points have dimension {mu.dim}")
    return mu


def read_measure(path) -> ParticleMeasure:
    with open(path) as fh:
        return measure_from_dict(json.load(fh))


def write_measure(mu: ParticleMeasure, path):
    Path(path).write_text(json.dumps(measure_to_dict(mu), indent=2) + "\n")


def write_plan_csv(plan: TransportPlan, path):
    write_rows(path, ["i", "j", "mass"], plan.entries)


def write_path_csv(path: MeasurePath, csv_path, manifest_path=None, spec_hash: str = ""):
    """Rows ``(particle, t, x1..xd)`` plus an optional JSON manifest."""
    X = path.positions
    d = X.shape[2]
    rows = []
    for i in range(X.shape[1]):
        for k, t in enumerate(path.grid.nodes):
            rows.append([i, t, *X[k, i]])
    write_rows(csv_path, ["particle", "t"] + [f"x{a + 1}" for a in range(d)], rows)
    if manifest_path is not None:
        manifest = {
            "grid": {"nodes": path.grid.nodes.tolist(), "delta": path.grid.delta},
            "weights": path.weights.tolist(),
            "dimension": d,
            "particles": int(X.shape[1]),
            "spec_hash": spec_hash,
        }
        Path(manifest_path).write_text(json.dumps(manifest, indent=2) + "\n")


def read_path_csv(csv_path, manifest_path) -> MeasurePath:
    manifest = json.loads(Path(manifest_path).read_text())
    grid = TimeGrid.from_nodes(manifest["grid"]["nodes"], manifest["grid"]["delta"])
    N, d = manifest["particles"], manifest["dimension"]
    X = np.empty((grid.nodes.size, N, d))
    with open(csv_path) as fh:
        reader = csv.reader(fh)
        next(reader)
        counts = np.zeros(N, dtype=int)
        for row in reader:
            i = int(row[0])
            X[counts[i], i] = [float(v) for v in row[2:]]
            counts[i] += 1
    base = make_particle_measure(X[0], manifest["weights"])
    return MeasurePath(base, grid, X)


def path_to_dict(path: MeasurePath) -> dict:
    return {
        "grid": {"nodes": path.grid.nodes.tolist(), "delta": path.grid.delta},
        "weights": path.weights.tolist(),
        "positions": path.positions.tolist(),
    }


def path_from_dict(data: dict) -> MeasurePath:
    grid = TimeGrid.from_nodes(data["grid"]["nodes"], data["grid"]["delta"])
    X = np.asarray(data["positions"], dtype=float)
    return MeasurePath(make_particle_measure(X[0], data["weights"]), grid, X)


def report_to_dict(report: ValueReport, extra: dict = None) -> dict:
    stats = {k: v for k, v in report.stats.items()}
    out = {
        "value": report.value,
        "iterations": int(stats.get("iterations", 0)),
        "gradient_norm": float(stats.get("gradient_norm", 0.0)),
        "converged": bool(stats.get("converged", False)),
        "stats": _plain(stats),
        "flags": list(report.flags),
        "per_particle": None if report.per_particle is None else report.per_particle.tolist(),
        "residuals": _plain(report.diagnostics),
        "path": path_to_dict(report.path),
    }
    if extra:
        out.update(extra)
    return out


def report_from_dict(data: dict) -> ValueReport:
    per = data.get("per_particle")
    return ValueReport(
        value=float(data["value"]),
        path=path_from_dict(data["path"]),
        per_particle=None if per is None else np.asarray(per, dtype=float),
        stats=dict(data.get("stats", {})),
        flags=list(data.get("flags", [])),
        diagnostics=dict(data.get("residuals", {})),
    )


def write_report(report: ValueReport, path, extra: dict = None):
    Path(path).write_text(json.dumps(report_to_dict(report, extra), indent=2, sort_keys=True) + "\n")


def read_report(path) -> ValueReport:
    return report_from_dict(json.loads(Path(path).read_text()))


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj
