"""Command-line front end: ``wassval <subcommand> [--config FILE] [flags]``.

Subcommands: ``solve-classical``, ``solve-measure``, ``verify``, ``examples``
and ``wp``.  Exit codes: 0 success, 1 solver non-convergence, 2 config error,
3 diagnostic failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from wassval import __version__
from wassval._newton import _Action
from wassval.classical import closed_form_linear, closed_form_power, grad_u_fd, solve_classical, value_function
from wassval.diagnostics import (
    Check,
    DiagnosticsReport,
    bounds_check,
    dpp_residual,
    euler_poisson_residual,
    gradient_conjecture_check,
    hje_residual_measure,
    modulus_check,
    random_fields,
    subdifferential_check,
    terminal_limit_check,
    TestField,
)
from wassval.io import (
    config_hash,
    measure_from_dict,
    read_measure,
    read_report,
    write_path_csv,
    write_plan_csv,
    write_report,
    write_rows,
)
from wassval.measure_control import ValueReport, ValueSolver, solve_direct, solve_simple_potential
from wassval.measures import dirac, make_particle_measure, optimal_plan
from wassval.paths import MeasurePath, Trajectory
from wassval.potentials import (
    CertificateError,
    GrowthCertificate,
    ProblemSpec,
    linear_potential,
    measure_potential_from_config,
    potential_from_config,
    power_potential,
)

__all__ = ["ConfigError", "ScenarioConfig", "run_scenario", "emit_plot_data", "main"]

MODES = ("solve-classical", "solve-measure", "verify", "examples", "wp")
EXIT_OK, EXIT_NOCONV, EXIT_CONFIG, EXIT_DIAG = 0, 1, 2, 3
OUT_ENV = "WASSVAL_OUT"


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    mode: str
    spec: Optional[ProblemSpec] = None
    potential: Optional[dict] = None
    x: Optional[np.ndarray] = None
    measure: Optional[object] = None
    measures: list = field(default_factory=list)
    solver: str = "decoupled"
    report: Optional[str] = None
    seed: int = 0
    out: Optional[str] = None
    raw: dict = field(default_factory=dict)

    @property
    def hash(self) -> str:
        return config_hash({k: v for k, v in self.raw.items() if k != "out"})


def _require(cfg, *keys):
    for key in keys:
        if key not in cfg or cfg[key] is None:
            raise ConfigError(f"missing required key {key!r} for mode {cfg.get('mode')!r}")


def _spec_from(cfg) -> ProblemSpec:
    _require(cfg, "delta")
    steps = int(cfg.get("steps", 400))
    if steps < 10:
        raise ConfigError("steps must be at least 10")
    cert = None
    if cfg.get("certificate") is not None:
        c = cfg["certificate"]
        try:
            cert = GrowthCertificate(float(c["alpha"]), float(c["beta"]))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"certificate needs 'alpha' and 'beta': {exc}") from exc
    try:
        return ProblemSpec(
            p=float(cfg.get("p", 2.0)),
            delta=float(cfg["delta"]),
            horizon=None if cfg.get("horizon") is None else float(cfg["horizon"]),
            steps=steps,
            gtol=float(cfg.get("gtol", 1e-9)),
            max_iter=int(cfg.get("max_iter", 100)),
            certificate=cert,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _measure_from(src, base: Path):
    if isinstance(src, dict):
        return measure_from_dict(src)
    path = Path(src)
    if not path.is_absolute():
        path = base / path
    if not path.exists():
        raise ConfigError(f"measure file {str(path)!r} does not exist")
    return read_measure(path)


def parse_config(cfg: dict, base: Path = Path(".")) -> ScenarioConfig:
    """Validate a raw config dictionary for its mode."""
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    _require(cfg, "mode")
    mode = cfg["mode"]
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {', '.join(MODES)}")
    sc = ScenarioConfig(mode=mode, seed=int(cfg.get("seed", 0)), out=cfg.get("out"), raw=dict(cfg))
    try:
        if mode == "solve-classical":
            sc.spec = _spec_from(cfg)
            _require(cfg, "potential", "x")
            sc.potential = cfg["potential"]
            sc.x = np.atleast_1d(np.asarray(cfg["x"], dtype=float))
        elif mode in ("solve-measure", "verify"):
            sc.spec = _spec_from(cfg)
            _require(cfg, "potential")
            sc.potential = cfg["potential"]
            sc.solver = cfg.get("solver", "decoupled")
            if sc.solver not in ("decoupled", "direct", "both"):
                raise ConfigError(f"solver must be 'decoupled', 'direct' or 'both', got {sc.solver!r}")
            if mode == "verify":
                _require(cfg, "report")
                rp = Path(cfg["report"])
                rp = rp if rp.is_absolute() else base / rp
                if not rp.exists():
                    raise ConfigError(f"report file {str(rp)!r} does not exist")
                sc.report = str(rp)
            else:
                _require(cfg, "measure")
                sc.measure = _measure_from(cfg["measure"], base)
        elif mode == "wp":
            _require(cfg, "measures")
            if len(cfg["measures"]) != 2:
                raise ConfigError("wp needs exactly two measures")
            sc.measures = [_measure_from(m, base) for m in cfg["measures"]]
            sc.spec = None
        # examples needs nothing
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    if mode != "wp" and mode != "examples" and sc.potential is not None:
        if not isinstance(sc.potential, dict) or "kind" not in sc.potential:
            raise ConfigError("potential must be an object with a 'kind' key")
    return sc


# -- outputs ---------------------------------------------------------------------


def _out_dir(sc: ScenarioConfig) -> Optional[Path]:
    out = os.environ.get(OUT_ENV) or sc.out
    if out is None:
        return None
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _stamp(sc: ScenarioConfig) -> dict:
    return {"version": __version__, "config_hash": sc.hash, "mode": sc.mode, "seed": sc.seed}


def emit_plot_data(report: Optional[ValueReport], outdir, diagnostics: Optional[DiagnosticsReport] = None, pot=None, spec=None):
    """Write plotting tables into ``outdir``.

    ``trajectories.csv`` (particle, t, x1..xd), ``residuals.csv`` (t and the
    max rescaled stationarity residual of the discrete action at each node;
    needs ``pot`` and ``spec``), ``eps_sequences.csv`` (check, eps, quotient)
    and ``diagnostics.csv`` (check, lhs, rhs, slack, pass).  Files without
    data contain only their header.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    if report is not None:
        write_path_csv(report.path, outdir / "trajectories.csv")
        written.append("trajectories.csv")
    rows = []
    if report is not None and pot is not None and spec is not None:
        path = report.path
        act = _Action(path.grid, path.weights, spec.p, pot)
        _, G = act.evaluate(path.positions)
        res = np.abs(act.residual(G)).reshape(path.grid.steps, -1).max(axis=1)
        rows = [(t, r) for t, r in zip(path.grid.nodes[1:], res)]
    write_rows(outdir / "residuals.csv", ["t", "residual"], rows)
    eps_rows = []
    diag_rows = []
    if diagnostics is not None:
        for name, chk in diagnostics.checks.items():
            if "eps" in chk.detail:
                eps_rows += [(name, e, d) for e, d in zip(chk.detail["eps"], chk.detail["quotients"])]
        diag_rows = diagnostics.rows()
    write_rows(outdir / "eps_sequences.csv", ["check", "eps", "quotient"], eps_rows)
    write_rows(outdir / "diagnostics.csv", ["check", "lhs", "rhs", "slack", "pass"], diag_rows)
    return written + ["residuals.csv", "eps_sequences.csv", "diagnostics.csv"]


def _print_table(rows, header, stream=None):
    stream = stream or sys.stdout
    widths = [max(len(str(h)), *(len(str(r[i])) for r in rows)) if rows else len(str(h)) for i, h in enumerate(header)]
    line = "  ".join(str(h).ljust(w) for h, w in zip(header, widths))
    print(line, file=stream)
    for r in rows:
        print("  ".join(str(v).ljust(w) for v, w in zip(r, widths)), file=stream)


# -- modes ------------------------------------------------------------------------


def _run_classical(sc: ScenarioConfig) -> int:
    spec = sc.spec
    V = potential_from_config(sc.potential, sc.x.size, spec.p, spec.delta)
    sol = solve_classical(sc.x, V, spec)
    out = _out_dir(sc)
    print(f"value {sol.value:.17g}")
    print(f"converged {sol.converged} iterations {sol.iterations} gradient_norm {sol.gradient_norm:.3e}")
    if out is not None:
        base = make_particle_measure(sc.x[None, :], [1.0])
        report = ValueReport(
            sol.value,
            MeasurePath(base, sol.trajectory.grid, sol.trajectory.positions[:, None, :]),
            np.array([sol.value]),
            {"solver": "classical", "converged": sol.converged, "iterations": sol.iterations, "gradient_norm": sol.gradient_norm},
        )
        write_report(report, out / "value_report.json", _stamp(sc))
        write_path_csv(report.path, out / "trajectories.csv", out / "manifest.json", sc.hash)
    return EXIT_OK if sol.converged else EXIT_NOCONV


def _solve_measure(sc: ScenarioConfig, mu, pot, spec):
    reports = {}
    if sc.solver in ("decoupled", "both"):
        if not pot.is_simple:
            raise ConfigError("the decoupled solver needs a simple potential; use solver 'direct'")
        reports["decoupled"] = solve_simple_potential(mu, pot.simple, spec)
    if sc.solver in ("direct", "both"):
        reports["direct"] = solve_direct(mu, pot, spec)
    return reports


def _run_measure(sc: ScenarioConfig) -> int:
    spec = sc.spec
    mu = sc.measure
    pot = measure_potential_from_config(sc.potential, mu.dim, spec.p, spec.delta, spec.certificate)
    reports = _solve_measure(sc, mu, pot, spec)
    out = _out_dir(sc)
    for name, rep in reports.items():
        print(f"{name} value {rep.value:.17g} converged {rep.converged} iterations {rep.stats.get('iterations')}")
        for flag in rep.flags:
            print(f"  note: {flag}")
    if len(reports) == 2:
        a, b = reports["decoupled"].value, reports["direct"].value
        print(f"decoupled - direct = {a - b:.3e}")
    main_name = "decoupled" if "decoupled" in reports else "direct"
    rep = reports[main_name]
    if out is not None:
        write_report(rep, out / "value_report.json", _stamp(sc))
        write_path_csv(rep.path, out / "trajectories.csv", out / "manifest.json", sc.hash)
        emit_plot_data(rep, out, None, pot, spec)
        if len(reports) == 2:
            write_report(reports["direct"], out / "value_report_direct.json", _stamp(sc))
    return EXIT_OK if all(r.converged for r in reports.values()) else EXIT_NOCONV


def verify_report(report: ValueReport, pot, spec: ProblemSpec, seed: int = 0, V=None) -> DiagnosticsReport:
    """Run every applicable diagnostic on a solved instance."""
    diag = DiagnosticsReport()
    mu = report.path.measure_at(0)
    solver = ValueSolver(pot)
    grid = report.path.grid
    cert = pot.certificate or spec.certificate
    if cert is not None:
        b = bounds_check(report.value, mu, pot, spec, cert)
        diag.add("bounds", Check(b["value"], b["upper"], 1e-9, b["pass"], "stay-put and growth bounds", b))
    for split in (0.5, 1.0, 2.0):
        if split >= grid.horizon:
            continue
        r = dpp_residual(mu, report.path, split, solver, spec)
        tol = 1e-3 * (1 + abs(r["value"]))
        diag.add(f"dpp@{split:g}", Check(abs(r["residual"]), tol, tol, abs(r["residual"]) <= tol, "dynamic programming principle", r))
    horizon_fields = min(grid.horizon, 10.0 / spec.delta)
    fields = random_fields(5, mu.dim, horizon_fields, seed=seed, center=mu.mean(), box=1.0)
    ep = euler_poisson_residual(report.path, pot, fields, spec)
    diag.add("euler_poisson", Check(ep["max"], 1e-2, 1e-2, ep["max"] <= 1e-2, "weak momentum balance", ep))
    eta = TestField(mu.mean(), 1.0 + float(np.max(np.linalg.norm(mu.points - mu.mean(), axis=1))), np.eye(mu.dim)[0])
    tl = terminal_limit_check(report.path, eta, spec)
    diag.add("terminal_limit", Check(float(abs(tl["values"][-1])), float(np.max(np.abs(tl["values"]))) * 1e-6, 1e-6, tl["pass"], "terminal decay of momentum", tl))
    k1 = grid.index_of(grid.nodes[min(grid.steps - 1, int(np.searchsorted(grid.nodes, 1.0)))])
    sd = subdifferential_check(report.path, float(grid.nodes[k1]), eta, solver, spec)
    tol = 1e-2 * (1 + abs(sd["rhs"]))
    diag.add("superdifferential", Check(sd["limit"], sd["rhs"], tol, sd["pass"], "momentum in the superdifferential", sd))
    if pot.is_simple:
        V = pot.simple
        u = value_function(V, spec)
        stride = max(grid.steps // 8, 1)
        gc = gradient_conjecture_check(report.path, lambda x: grad_u_fd(x, u), spec, stride=stride)
        diag.add("gradient_flow", Check(gc["max"], 1e-2, 1e-2, gc["max"] <= 1e-2, "gradient flow condition", gc))
        grads = np.stack([grad_u_fd(x, u) for x in mu.points])
        h = hje_residual_measure(mu, report.value, grads, pot, spec)
        diag.add("hje_measure", Check(abs(h), 1e-2, 1e-2, abs(h) <= 1e-2, "Hamilton-Jacobi equation on measures", {"residual": h}))
        if V.lipschitz_bound is not None:
            shifted = make_particle_measure(mu.points + 0.1 * np.eye(mu.dim)[0], mu.weights)
            m = modulus_check(mu, shifted, solver, V.lipschitz_bound, spec)
            diag.add("modulus", Check(m["gap"], m["bound"], 1e-3 * (1 + m["bound"]), m["pass"], "modulus of continuity", m))
    return diag


def _run_verify(sc: ScenarioConfig) -> int:
    spec = sc.spec
    report = read_report(sc.report)
    if abs(report.path.grid.horizon - spec.horizon) > 1e-9 * spec.horizon or report.path.grid.steps != spec.steps:
        raise ConfigError("report grid does not match the config's horizon and steps")
    mu = report.path.measure_at(0)
    pot = measure_potential_from_config(sc.potential, mu.dim, spec.p, spec.delta, spec.certificate)
    diag = verify_report(report, pot, spec, sc.seed)
    rows = [(n, f"{c.lhs:.3e}", f"{c.rhs:.3e}", "pass" if c.passed else "FAIL") for n, c in diag.checks.items()]
    _print_table(rows, ["check", "lhs", "rhs", "verdict"])
    out = _out_dir(sc)
    if out is not None:
        payload = {"checks": diag.to_dict(), "pass": diag.passed, **_stamp(sc)}
        (out / "diagnostics.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        emit_plot_data(report, out, diag, pot, spec)
    return EXIT_OK if diag.passed else EXIT_DIAG


def golden_examples():
    """Rows ``(name, computed, expected, error, tolerance, pass)`` for the two closed-form families."""
    rows = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        spec = ProblemSpec(p=2.0, delta=1.0, horizon=40.0, steps=400)
        V = linear_potential([1.0, 0.0], 0.0, delta=1.0, p=2.0)
        u_lin, _ = closed_form_linear([1.0, 0.0], 0.0, 1.0, 2.0)
        val = solve_classical(np.zeros(2), V, spec).value
        rows.append(("linear u(0)", val, float(u_lin(np.zeros(2))), 1e-3))
        mu = make_particle_measure([[0.0, 0.0], [2.0, 0.0]])
        rows.append(("linear U(mu)", solve_simple_potential(mu, V, spec).value, -1.5, 2e-3))
        spec5 = ProblemSpec(p=2.0, delta=1.0, horizon=20.0, steps=400)
        a, u_pow, _ = closed_form_power(2.0, 1.0)
        W = power_potential(2.0, 2, delta=1.0)
        val = solve_classical(np.array([1.0, 0.0]), W, spec5).value
        rows.append(("power u(x), |x|=1", val, a / 2, 1e-2 * a / 2))
        mu = make_particle_measure([[1.0], [-1.0]])
        W1 = power_potential(2.0, 1, delta=1.0)
        rows.append(("power U(mu)", solve_simple_potential(mu, W1, spec5).value, a / 2, 1e-2 * a / 2))
    return [(n, c, e, abs(c - e), tol, abs(c - e) <= tol) for n, c, e, tol in rows]


def _run_examples(sc: ScenarioConfig) -> int:
    rows = golden_examples()
    _print_table(
        [(n, f"{c:.9f}", f"{e:.9f}", f"{err:.2e}", f"{tol:.1e}", "pass" if ok else "FAIL") for n, c, e, err, tol, ok in rows],
        ["example", "computed", "expected", "error", "tol", "verdict"],
    )
    out = _out_dir(sc)
    if out is not None:
        write_rows(out / "examples.csv", ["example", "computed", "expected", "error", "tolerance", "pass"], rows)
    return EXIT_OK if all(r[-1] for r in rows) else EXIT_DIAG


def _run_wp(sc: ScenarioConfig) -> int:
    p = float(sc.raw.get("p", 2.0))
    if p < 1:
        raise ConfigError("p must be >= 1 for W_p")
    mu, nu = sc.measures
    if mu.dim != nu.dim:
        raise ConfigError(f"measures have dimensions {mu.dim} and {nu.dim}")
    plan = optimal_plan(mu, nu, p)
    print(f"W_{p:g} = {plan.cost ** (1.0 / p):.17g}")
    print("i,j,mass")
    for i, j, m in plan.entries:
        print(f"{i},{j},{m:.17g}")
    out = _out_dir(sc)
    if out is not None:
        write_plan_csv(plan, out / "plan.csv")
    return EXIT_OK


_RUNNERS = {
    "solve-classical": _run_classical,
    "solve-measure": _run_measure,
    "verify": _run_verify,
    "examples": _run_examples,
    "wp": _run_wp,
}


def run_scenario(config, base: Path = Path(".")) -> int:
    """Run one scenario from a config dict (or a parsed :class:`ScenarioConfig`)."""
    try:
        sc = config if isinstance(config, ScenarioConfig) else parse_config(config, base)
        return _RUNNERS[sc.mode](sc)
    except (ConfigError, CertificateError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (KeyError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def _parser():
    ap = argparse.ArgumentParser(prog="wassval", description="Discounted value functions on particle measures.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="mode", required=True)
    for mode in MODES:
        sp = sub.add_parser(mode)
        sp.add_argument("--config", help="JSON config file; flags override its keys")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int)
        if mode in ("solve-classical", "solve-measure", "verify"):
            sp.add_argument("--p", type=float)
            sp.add_argument("--delta", type=float)
            sp.add_argument("--horizon", type=float)
            sp.add_argument("--steps", type=int)
            sp.add_argument("--gtol", type=float)
            sp.add_argument("--max-iter", dest="max_iter", type=int)
            sp.add_argument("--potential", help="potential as inline JSON")
        if mode == "solve-classical":
            sp.add_argument("--x", help="start point, comma separated")
        if mode == "solve-measure":
            sp.add_argument("--measure", help="measure JSON file")
        if mode in ("solve-measure", "verify"):
            sp.add_argument("--solver", choices=["decoupled", "direct", "both"])
        if mode == "verify":
            sp.add_argument("--report", help="ValueReport JSON from solve-measure")
        if mode == "wp":
            sp.add_argument("--p", type=float)
            sp.add_argument("measure_files", nargs="*", help="two measure JSON files")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    cfg = {}
    base = Path(".")
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            print(f"config error: cannot read {args.config}: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        base = Path(args.config).resolve().parent
    cfg["mode"] = args.mode
    for key, val in vars(args).items():
        if key in ("config", "mode", "measure_files") or val is None:
            continue
        if key == "potential":
            try:
                val = json.loads(val)
            except json.JSONDecodeError as exc:
                print(f"config error: --potential is not valid JSON: {exc}", file=sys.stderr)
                return EXIT_CONFIG
        elif key == "x":
            try:
                val = [float(v) for v in val.split(",")]
            except ValueError:
                print("config error: --x must be comma-separated numbers", file=sys.stderr)
                return EXIT_CONFIG
        elif key in ("measure", "report"):
            val = str(Path(val).resolve())
        cfg[key] = val
    if getattr(args, "measure_files", None):
        cfg["measures"] = [str(Path(m).resolve()) for m in args.measure_files]
    return run_scenario(cfg, base)


if __name__ == "__main__":
    sys.exit(main())
