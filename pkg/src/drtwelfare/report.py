"""Base-vs-optimal reports, parameter sweeps and their renderings."""

from __future__ import annotations

import copy
import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from . import __version__
from .aggregate import SolverOptions, oracle_grid, solve
from .calibration import ConsistencyReport, consistency_report
from .errors import ContractError, ConvergenceError, DomainError, ValidationError
from .model import AggregateScenario, NetworkScenario, WelfareBreakdown, demand_at, welfare
from .network import default_oracle_bounds, oracle_network, solve_network
from .scenario import ScenarioFile, scenario_from_document

FORMATS = ("table", "json", "csv")
REPORT_SCHEMA = "drtwelfare.report/1"
SWEEP_SCHEMA = "drtwelfare.sweep/1"
CALIBRATION_SCHEMA = "drtwelfare.calibration/1"


@dataclass(frozen=True)
class Row:
    key: str
    label: str
    base: float | None
    optimal: float | None
    published_base: float | None = None
    published_optimal: float | None = None


@dataclass(frozen=True)
class Deviation:
    column: str
    key: str
    computed: float
    published: float

    @property
    def relative(self) -> float:
        return abs(self.computed - self.published) / abs(self.published) if self.published else math.inf


@dataclass(frozen=True)
class Report:
    scenario: str
    kind: str
    digest: str
    status: str  # "ok", "not-converged" or "failed"
    rows: tuple[Row, ...]
    welfare_base: WelfareBreakdown
    welfare_optimal: WelfareBreakdown | None
    consistency: ConsistencyReport
    solver: Mapping = field(default_factory=dict)
    oracle: Mapping | None = None
    notes: tuple[str, ...] = ()
    trace: tuple = ()

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def deviations(self) -> tuple[Deviation, ...]:
        out = []
        for row in self.rows:
            if row.published_base is not None and row.base is not None:
                out.append(Deviation("base", row.key, row.base, row.published_base))
            if row.published_optimal is not None and row.optimal is not None:
                out.append(Deviation("optimal", row.key, row.optimal, row.published_optimal))
        return tuple(out)

    def row(self, key: str) -> Row:
        for r in self.rows:
            if r.key == key:
                return r
        raise KeyError(key)


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------

def _pub(published: Mapping, column: str, key: str, route: str | None = None):
    cells = published.get(column, {}) or {}
    if route is not None:
        cells = (cells.get("routes", {}) or {}).get(route, {}) or {}
    value = cells.get(key)
    return None if value is None else float(value)


def _aggregate_rows(sc: AggregateScenario, sol) -> list[Row]:
    b, pub = sc.base, sc.published
    o = sol.point if sol else None

    def row(key, label, base, opt_attr):
        opt = None if o is None else float(opt_attr(o))
        return Row(key, label, float(base), opt, _pub(pub, "base", key), _pub(pub, "optimal", key))

    wb = welfare(sc, b)
    wo = sol.welfare if sol else None
    return [
        row("trips", "Demand, X", b.X, lambda p: p.X),
        row("waiting_value", "Average value of waiting time, Q", b.q, lambda p: p.q),
        row("invehicle_value", "Average value of in-vehicle time, K", b.k, lambda p: p.k),
        row("price", "Price (flat), p", b.p, lambda p: p.p),
        row("occupancy", "Occupancy rate, O", b.O, lambda p: p.O),
        row("capacity", "Quantity of operations, R", b.R, lambda p: p.R),
        row("fleet", "Capital quantity, F", b.F, lambda p: p.F),
        Row("cost", "Operation costs, C", wb.operator_cost, wo and wo.operator_cost,
            _pub(pub, "base", "cost"), _pub(pub, "optimal", "cost")),
        Row("cwp", "Collective willingness to pay", wb.collective_wtp, wo and wo.collective_wtp,
            _pub(pub, "base", "cwp"), _pub(pub, "optimal", "cwp")),
        Row("welfare", "Social welfare", wb.social_welfare, wo and wo.social_welfare,
            _pub(pub, "base", "welfare"), _pub(pub, "optimal", "welfare")),
    ]


def _network_rows(sc: NetworkScenario, sol) -> list[Row]:
    b, pub = sc.base, sc.published
    o = sol.point if sol else None
    ids = sc.ids

    def avg(values, X):
        X = np.asarray(X)
        return float(np.asarray(values) @ X / X.sum())

    def pair(fn):
        return float(fn(b)), (None if o is None else float(fn(o)))

    rows = []

    def add(key, label, fn, route=None, cell=None):
        base, opt = pair(fn)
        cell = cell or key
        rows.append(Row(key, label, base, opt, _pub(pub, "base", cell, route),
                        _pub(pub, "optimal", cell, route)))

    add("trips", "Demand, X", lambda p: np.sum(p.X))
    for i, rid in enumerate(ids):
        add(f"trips_{rid}", f"X_{rid}", lambda p, i=i: np.asarray(p.X)[i], rid, "trips")
    add("waiting_value", "Average value of waiting time, Q", lambda p: avg(p.q, p.X))
    add("invehicle_value", "Average value of in-vehicle time, K", lambda p: avg(p.k, p.X))
    for i, rid in enumerate(ids):
        add(f"invehicle_value_{rid}", f"K_{rid}", lambda p, i=i: np.asarray(p.k)[i], rid,
            "invehicle_value")
    add("price", "Price (weighted average), p", lambda p: avg(p.p, p.X))
    for i, rid in enumerate(ids):
        add(f"price_{rid}", f"p_{rid}", lambda p, i=i: np.asarray(p.p)[i], rid, "price")
    add("occupancy", "Occupancy rate, O", lambda p: p.O)
    add("capacity", "Quantity of operations, R", lambda p: p.R)
    add("fleet", "Capital quantity, F", lambda p: p.F)
    wb = welfare(sc, b)
    wo = sol.welfare if sol else None
    for key, label, attr in (("cost", "Total costs, C", "operator_cost"),
                             ("cwp", "Collective willingness to pay", "collective_wtp"),
                             ("welfare", "Social welfare", "social_welfare")):
        rows.append(Row(key, label, getattr(wb, attr), wo and getattr(wo, attr),
                        _pub(pub, "base", key), _pub(pub, "optimal", key)))
    return rows


def _published_notes(sc) -> list[str]:
    """Internal-consistency remarks on the published optimal column."""
    notes = []
    opt = sc.published.get("optimal", {}) or {}
    if isinstance(sc, AggregateScenario):
        if all(k in opt for k in ("trips", "price", "waiting_value", "invehicle_value")):
            G = opt["price"] + opt["waiting_value"] + opt["invehicle_value"]
            implied = demand_at(sc.demand, G)
            notes.append(
                f"published optimal column: demand implied by its own generalized cost "
                f"{G:.2f} is {implied:.2f}, printed demand is {opt['trips']:g}")
    else:
        routes = opt.get("routes", {}) or {}
        if all(rid in routes and {"price", "trips"} <= set(routes[rid]) for rid in sc.ids):
            X = np.array([routes[rid]["trips"] for rid in sc.ids], dtype=float)
            p = np.array([routes[rid]["price"] for rid in sc.ids], dtype=float)
            wavg = float(p @ X / X.sum())
            if "price" in opt:
                notes.append(
                    f"published optimal prices weighted by published demands average {wavg:.2f}, "
                    f"printed average price is {opt['price']:g}")
            if "trips" in opt and abs(X.sum() - opt["trips"]) > 0.05:
                notes.append(f"published route demands sum to {X.sum():.1f}, "
                             f"printed total is {opt['trips']:g}")
    base = sc.published.get("base", {}) or {}
    if "cost" in base:
        cost = welfare(sc, sc.base).operator_cost
        notes.append(f"base operator cost recomputed from the cost function is {cost:.2f}, "
                     f"published {base['cost']:g}")
    return notes


def run_solve(scenario: ScenarioFile, options: SolverOptions | None = None,
              oracle: bool = False) -> Report:
    """Solve a scenario and assemble the base-vs-optimal report."""
    sc = scenario.model
    opts = options or scenario.options
    consistency = consistency_report(sc)
    notes = _published_notes(sc)
    try:
        sol = solve(sc, opts) if isinstance(sc, AggregateScenario) else solve_network(sc, opts)
    except (ConvergenceError, DomainError) as exc:
        rows = _aggregate_rows(sc, None) if isinstance(sc, AggregateScenario) else _network_rows(sc, None)
        return Report(scenario.name, scenario.kind, scenario.digest, "failed", tuple(rows),
                      welfare(sc, sc.base), None, consistency,
                      solver={"error": str(exc)}, notes=tuple(notes),
                      trace=tuple(getattr(exc, "trace", ())))
    if isinstance(sc, AggregateScenario):
        rows = _aggregate_rows(sc, sol)
    else:
        rows = _network_rows(sc, sol)
    solver = {
        "lambda": sol.lambda_, "mu": sol.mu, "iterations": sol.iterations,
        "converged": sol.converged, "subsidized": sol.subsidized,
        "foc_residuals": list(sol.foc_residuals),
        "max_abs_foc_residual": max(abs(r) for r in sol.foc_residuals),
        "damping": opts.damping, "convergence_tol": opts.convergence_tol, "foc_tol": opts.foc_tol,
    }
    if sol.subsidized:
        notes.append("optimal price is negative: the solution is subsidized")
    oracle_info = _oracle(sc, sol) if oracle else None
    return Report(scenario.name, scenario.kind, scenario.digest,
                  "ok" if sol.converged else "not-converged", tuple(rows), welfare(sc, sc.base),
                  sol.welfare, consistency, solver=solver, oracle=oracle_info, notes=tuple(notes))


def _oracle(sc, sol) -> dict:
    W = sol.welfare.social_welfare
    if isinstance(sc, AggregateScenario):
        X0 = float(sc.base.X)
        res = oracle_grid(sc, 0.5 * X0, 2.0 * X0, 2000)
        return {
            "method": "grid", "X_min": 0.5 * X0, "X_max": 2.0 * X0, "steps": 2000,
            "best_X": res.best_X, "best_welfare": res.best_welfare, "solver_X": float(sol.point.X),
            "solver_welfare": W, "relative_gap": (W - res.best_welfare) / abs(W),
            "within_one_step": abs(res.best_X - float(sol.point.X)) <= res.step,
        }
    bounds = default_oracle_bounds(sc)
    res = oracle_network(sc, bounds, 25)
    X = np.asarray(sol.point.X)
    return {
        "method": "grid+zoom", "resolution": 25, "spread": 0.6,
        "coarse_X": list(map(float, res.coarse_X)), "coarse_welfare": res.coarse_welfare,
        "best_X": list(map(float, res.X)), "best_welfare": res.welfare,
        "solver_welfare": W, "relative_gap": (W - res.welfare) / abs(W),
        "within_one_step": bool(np.all(np.abs(res.coarse_X - X) <= res.coarse_step * (1 + 1e-9))),
    }


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepResult:
    scenario: str
    digest: str
    parameter: str
    columns: tuple[str, ...]
    rows: tuple[tuple, ...]

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]


def set_parameter(document: Mapping, path: str, value: float) -> dict:
    """Copy of ``document`` with the scalar at dotted ``path`` replaced.

    Routes are addressed by id: ``routes.AC.added_vehicle_km``.
    """
    doc = copy.deepcopy(dict(document))
    parts = path.split(".")
    node: Any = doc
    for i, part in enumerate(parts[:-1]):
        if isinstance(node, list):
            match = [r for r in node if isinstance(r, Mapping) and r.get("id") == part]
            if not match:
                raise ValidationError(f"unknown parameter path {path!r}", field=path)
            node = match[0]
        elif isinstance(node, Mapping) and part in node:
            node = node[part]
        else:
            raise ValidationError(f"unknown parameter path {path!r}", field=path)
    leaf = parts[-1]
    if not isinstance(node, Mapping) or leaf not in node:
        raise ValidationError(f"unknown parameter path {path!r}", field=path)
    current = node[leaf]
    if isinstance(current, bool) or not isinstance(current, (int, float)):
        raise ValidationError(f"parameter {path!r} is not a scalar number", field=path)
    node[leaf] = float(value)
    return doc


def run_sweep(scenario: ScenarioFile, path: str, start: float, stop: float, steps: int,
              options: SolverOptions | None = None) -> SweepResult:
    """Re-calibrate and re-solve the scenario for evenly spaced parameter values."""
    if steps < 2:
        raise ValidationError("a sweep needs at least 2 steps", field="steps")
    set_parameter(scenario.document, path, start)  # validate the path up front
    network = scenario.kind == "network"
    ids = scenario.model.ids if network else ()
    columns = ["value", "status", "iterations", "trips", "price", "capacity", "lambda",
               "social_welfare"]
    for rid in ids:
        columns += [f"trips_{rid}", f"price_{rid}"]
    rows = []
    for value in np.linspace(start, stop, steps):
        value = float(value)
        variant = scenario_from_document(set_parameter(scenario.document, path, value),
                                         source=f"{scenario.source}#{path}={value!r}")
        report = run_solve(variant, options)
        if report.welfare_optimal is None:
            rows.append(tuple([value, "failed"] + [None] * (len(columns) - 2)))
            continue
        row = [value, report.status, report.solver["iterations"], report.row("trips").optimal,
               report.row("price").optimal, report.row("capacity").optimal,
               report.solver["lambda"], report.welfare_optimal.social_welfare]
        for rid in ids:
            row += [report.row(f"trips_{rid}").optimal, report.row(f"price_{rid}").optimal]
        rows.append(tuple(row))
    return SweepResult(scenario.name, scenario.digest, path, tuple(columns), tuple(rows))


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def _num(x):
    """Round-trippable decimal with 12 significant digits."""
    if x is None:
        return None
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    x = float(x)
    if not math.isfinite(x):
        return None
    return float(f"{x:.12g}")


def _s(x) -> str:
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.12g}"


def _welfare_dict(w: WelfareBreakdown | None):
    if w is None:
        return None
    return {k: _num(getattr(w, k)) for k in
            ("gross_wtp", "time_cost", "collective_wtp", "operator_cost", "social_welfare")}


def _checks_dict(cr: ConsistencyReport) -> list:
    return [{"name": c.name, "computed": _num(c.computed), "expected": _num(c.expected),
             "relative_deviation": _num(c.deviation), "tolerance": _num(c.tolerance),
             "passed": c.passed, "informational": c.informational, "note": c.note}
            for c in cr.checks]


def _jsonable(obj):
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, str) or obj is None:
        return obj
    return _num(obj)


def report_to_dict(report: Report) -> dict:
    return {
        "schema": REPORT_SCHEMA, "version": __version__,
        "scenario": report.scenario, "kind": report.kind, "digest": report.digest,
        "status": report.status,
        "rows": [{"key": r.key, "label": r.label, "base": _num(r.base), "optimal": _num(r.optimal),
                  "published_base": _num(r.published_base),
                  "published_optimal": _num(r.published_optimal)} for r in report.rows],
        "welfare": {"base": _welfare_dict(report.welfare_base),
                    "optimal": _welfare_dict(report.welfare_optimal)},
        "solver": _jsonable(report.solver),
        "oracle": _jsonable(report.oracle),
        "deviations": [{"column": d.column, "key": d.key, "computed": _num(d.computed),
                        "published": _num(d.published), "relative": _num(d.relative)}
                       for d in report.deviations],
        "consistency": {"ok": report.consistency.ok, "checks": _checks_dict(report.consistency)},
        "notes": list(report.notes),
        "trace": _jsonable(list(report.trace)),
    }


def _align(rows: list[list[str]], right_from: int = 1) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = []
    for r in rows:
        cells = [c.ljust(w) if i < right_from else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines)


def _fmt(x, digits=4) -> str:
    if x is None:
        return "-"
    return f"{x:.{digits}f}" if abs(x) < 1e6 else f"{x:.6g}"


def _report_table(report: Report) -> str:
    out = [f"Scenario {report.scenario} ({report.kind} model)  status: {report.status}",
           f"digest sha256:{report.digest}", ""]
    header = ["Variables", "Base values", "Optimal", "Published base", "Published optimal"]
    body = [[r.label, _fmt(r.base), _fmt(r.optimal), _fmt(r.published_base),
             _fmt(r.published_optimal)] for r in report.rows]
    out.append(_align([header] + body))
    s = report.solver
    out.append("")
    if "error" in s:
        out.append(f"Solver failed: {s['error']}")
    else:
        out.append(f"Shadow prices: lambda = {s['lambda']:.6g}, mu = {s['mu']:.6g}")
        out.append(f"Iterations: {s['iterations']}, converged: {_s(s['converged'])}, "
                   f"max |FOC residual| = {s['max_abs_foc_residual']:.3e}")
        out.append("FOC residuals: " + ", ".join(f"{r:.3e}" for r in s["foc_residuals"]))
    if report.oracle:
        o = report.oracle
        out.append(f"Oracle ({o['method']}): best welfare {o['best_welfare']:.6f}, solver welfare "
                   f"{o['solver_welfare']:.6f}, relative gap {o['relative_gap']:.2e}, "
                   f"within one grid step: {_s(o['within_one_step'])}")
    devs = report.deviations
    if devs:
        out += ["", "Deviation from published values"]
        out.append(_align([["Column", "Variable", "Computed", "Published", "Rel. dev."]] +
                          [[d.column, d.key, _fmt(d.computed), _fmt(d.published),
                            f"{100 * d.relative:.2f}%"] for d in devs], right_from=2))
    out += ["", _consistency_table(report.consistency)]
    if report.notes:
        out += ["", "Notes"] + [f"- {n}" for n in report.notes]
    return "\n".join(out) + "\n"


def _consistency_table(cr: ConsistencyReport) -> str:
    rows = [["Check", "Computed", "Expected", "Rel. dev.", "Tol.", "Result"]]
    for c in cr.checks:
        result = "pass" if c.passed else ("info" if c.informational else "FAIL")
        rows.append([c.name, _fmt(c.computed), _fmt(c.expected), f"{100 * c.deviation:.3f}%",
                     f"{100 * c.tolerance:.3g}%", result])
    return f"Consistency checks ({'ok' if cr.ok else 'FAILED'})\n" + _align(rows)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_s(v) for v in r])
    return buf.getvalue()


def render(obj, fmt: str = "table") -> bytes:
    """Render a Report, SweepResult or ConsistencyReport as table, json or csv."""
    if fmt not in FORMATS:
        raise ContractError(f"unknown format {fmt!r}; choose from {', '.join(FORMATS)}")
    if isinstance(obj, Report):
        if fmt == "json":
            text = json.dumps(report_to_dict(obj), indent=2) + "\n"
        elif fmt == "csv":
            text = _csv(["key", "label", "base", "optimal", "published_base", "published_optimal"],
                        [[r.key, r.label, r.base, r.optimal, r.published_base, r.published_optimal]
                         for r in obj.rows])
        else:
            text = _report_table(obj)
    elif isinstance(obj, SweepResult):
        if fmt == "json":
            text = json.dumps({
                "schema": SWEEP_SCHEMA, "version": __version__, "scenario": obj.scenario,
                "digest": obj.digest, "parameter": obj.parameter,
                "rows": [dict(zip(obj.columns, _jsonable(list(r)))) for r in obj.rows]}, indent=2) + "\n"
        elif fmt == "csv":
            text = _csv(obj.columns, obj.rows)
        else:
            head = f"Sweep of {obj.parameter} on {obj.scenario}\n"
            text = head + _align([list(obj.columns)] + [[_s(v) if not isinstance(v, float)
                                                         else _fmt(v) for v in r] for r in obj.rows]) + "\n"
    elif isinstance(obj, ConsistencyReport):
        if fmt == "json":
            text = json.dumps({"schema": CALIBRATION_SCHEMA, "version": __version__,
                               "scenario": obj.scenario, "ok": obj.ok,
                               "checks": _checks_dict(obj)}, indent=2) + "\n"
        elif fmt == "csv":
            text = _csv(["name", "computed", "expected", "relative_deviation", "tolerance",
                         "passed", "informational"],
                        [[c.name, c.computed, c.expected, c.deviation, c.tolerance, c.passed,
                          c.informational] for c in obj.checks])
        else:
            text = _consistency_table(obj) + "\n"
    else:
        raise ContractError(f"cannot render {type(obj).__name__}")
    return text.encode("utf-8")
