"""Scenario files: YAML documents with one block per group of base data.

Blocks: ``model``, ``demand``, ``times``, ``costs``, ``marginals``, ``routes``
(network only), ``published`` (comparison only, never fed to the solver) and
``solver``. Unknown keys are rejected and every validation error carries the
dotted field path plus its line and column.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import yaml

from .aggregate import SolverOptions
from .calibration import (
    BaseObservables, ConsistencyReport, Marginals, RouteObservables, calibrate,
    consistency_report, time_value,
)
from .errors import DomainError, ValidationError
from .model import AggregateGeometry, Scenario

FIXTURES = ("aggregate-table1", "network-table1")

REQ, OPT = True, False

_COMMON = {
    "model": {"kind": REQ, "name": OPT, "period": OPT, "description": OPT, "capacity": REQ},
    "demand": {"price": REQ, "elasticity": REQ},
    "times": {"value_of_time": REQ, "wait_minutes": REQ},
    "costs": {"c0": OPT, "c1": REQ, "c2": REQ, "c3": REQ, "c4": REQ, "c5": REQ,
              "utilization": REQ, "seats": OPT},
    "marginals": {"dQ_dX": REQ, "dK_dX": REQ, "dQ_dR": REQ, "dK_dR": REQ, "dK_da": OPT},
    "solver": {"damping": OPT, "max_iterations": OPT, "convergence_tol": OPT, "foc_tol": OPT},
}

_AGGREGATE = {
    "model": {"occupancy": REQ, "trip_distance": REQ, "detour": REQ, "added_vehicle_km": REQ},
    "demand": {"base_trips": REQ},
    "times": {"invehicle_minutes": REQ},
    "marginals": {"dO_dX": REQ, "dO_dR": OPT},
}

_NETWORK = {
    "marginals": {"dO_dX": OPT, "dO_dR": OPT, "dQ_dX_matrix": OPT, "dK_dX_matrix": OPT,
                  "complement_pairs": OPT},
}

_ROUTE_KEYS = {"id": REQ, "base_trips": REQ, "distance": REQ, "detour": OPT,
               "added_vehicle_km": REQ, "invehicle_value": OPT, "invehicle_minutes": OPT}

_PUBLISHED_CELLS = {"trips", "waiting_value", "invehicle_value", "price", "occupancy",
                    "capacity", "cost", "cwp", "welfare"}
_PUBLISHED_ROUTE_CELLS = {"trips", "invehicle_value", "price"}

_STRING_FIELDS = {("model", "kind"), ("model", "name"), ("model", "period"),
                  ("model", "description")}


# ---------------------------------------------------------------------------
# YAML with positions
# ---------------------------------------------------------------------------

class _Located:
    """Maps dotted paths to 1-based (line, column) source positions."""

    def __init__(self):
        self.marks: dict[tuple, tuple[int, int]] = {}
        self.route_index: dict[str, int] = {}

    def locate(self, field: str | None) -> tuple[int | None, int | None]:
        if not field:
            return None, None
        parts = []
        for token in field.replace("]", "").replace("[", ".").split("."):
            parts.append(int(token) if token.isdigit() else token)
        if len(parts) >= 2 and parts[0] == "routes" and parts[1] in self.route_index:
            parts[1] = self.route_index[parts[1]]
        while parts:
            mark = self.marks.get(tuple(parts))
            if mark:
                return mark
            parts.pop()
        return None, None

    def error(self, message: str, field: str | None) -> ValidationError:
        line, col = self.locate(field)
        return ValidationError(message, field=field, line=line, column=col)


def _parse_yaml(text: str, loc: _Located) -> Any:
    if not text.strip():
        raise ValidationError("empty scenario file", line=1, column=1)
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None) or getattr(exc, "context_mark", None)
        problem = getattr(exc, "problem", None) or str(exc)
        if mark is not None:
            raise ValidationError(f"parse error: {problem}", line=mark.line + 1,
                                  column=mark.column + 1) from None
        raise ValidationError(f"parse error: {problem}") from None
    if node is None:
        raise ValidationError("empty scenario file", line=1, column=1)
    constructor = yaml.SafeLoader("")

    def convert(n, path):
        loc.marks[path] = (n.start_mark.line + 1, n.start_mark.column + 1)
        if isinstance(n, yaml.MappingNode):
            out = {}
            for k_node, v_node in n.value:
                key = constructor.construct_object(k_node)
                if key in out:
                    raise ValidationError(f"duplicate key {key!r}", field=_dotted(path + (key,)),
                                          line=k_node.start_mark.line + 1,
                                          column=k_node.start_mark.column + 1)
                out[key] = convert(v_node, path + (key,))
            return out
        if isinstance(n, yaml.SequenceNode):
            return [convert(v, path + (i,)) for i, v in enumerate(n.value)]
        return constructor.construct_object(n)

    return convert(node, ())


def _dotted(path) -> str:
    out = ""
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


# ---------------------------------------------------------------------------
# schema
# ---------------------------------------------------------------------------

def _number(value, field: str, loc: _Located, positive=False, nonneg=False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise loc.error(f"expected a finite number, got {value!r}", field)
    if positive and not value > 0:
        raise loc.error(f"must be > 0, got {value}", field)
    if nonneg and value < 0:
        raise loc.error(f"must be >= 0, got {value}", field)
    return float(value)


def _check_keys(block: Mapping, allowed: Mapping[str, bool], prefix: str, loc: _Located):
    if not isinstance(block, Mapping):
        raise loc.error("expected a mapping", prefix)
    for key in block:
        if key not in allowed:
            raise loc.error(f"unknown key {key!r}", f"{prefix}.{key}")
    for key, required in allowed.items():
        if required and key not in block:
            raise loc.error(f"missing required key {key!r}", prefix)


def _schema(kind: str) -> dict:
    extra = _AGGREGATE if kind == "aggregate" else _NETWORK
    out = {block: dict(keys) for block, keys in _COMMON.items()}
    for block, keys in extra.items():
        out[block].update(keys)
    return out


def _validate(doc: Any, loc: _Located) -> str:
    if not isinstance(doc, Mapping):
        raise ValidationError("scenario must be a mapping of blocks", line=1, column=1)
    model = doc.get("model")
    if not isinstance(model, Mapping) or "kind" not in model:
        raise loc.error("missing required block 'model' with a 'kind'", "model")
    kind = model["kind"]
    if kind not in ("aggregate", "network"):
        raise loc.error(f"kind must be 'aggregate' or 'network', got {kind!r}", "model.kind")
    schema = _schema(kind)
    allowed_blocks = set(schema) | {"published"} | ({"routes"} if kind == "network" else set())
    for block in doc:
        if block not in allowed_blocks:
            raise loc.error(f"unknown block {block!r}", str(block))
    for block, keys in schema.items():
        if block not in doc:
            if block == "solver":
                continue
            raise loc.error(f"missing required block {block!r}", block)
        _check_keys(doc[block], keys, block, loc)
        for key, value in doc[block].items():
            if (block, key) in _STRING_FIELDS:
                if not isinstance(value, str):
                    raise loc.error("expected a string", f"{block}.{key}")
            elif key in ("dQ_dX_matrix", "dK_dX_matrix", "complement_pairs"):
                continue
            else:
                _number(value, f"{block}.{key}", loc)
    if kind == "network":
        _validate_routes(doc, loc)
    if "published" in doc:
        _validate_published(doc["published"], kind, loc)
    return kind


def _validate_routes(doc, loc: _Located):
    routes = doc.get("routes")
    if not isinstance(routes, list) or not routes:
        raise loc.error("network scenario needs a non-empty 'routes' list", "routes")
    for i, route in enumerate(routes):
        _check_keys(route, _ROUTE_KEYS, f"routes[{i}]", loc)
        rid = route["id"]
        if not isinstance(rid, str) or not rid:
            raise loc.error("route id must be a non-empty string", f"routes[{i}].id")
        if rid in loc.route_index:
            raise loc.error(f"duplicate route id {rid!r}", f"routes[{i}].id")
        loc.route_index[rid] = i
        for key, value in route.items():
            if key != "id":
                _number(value, f"routes.{rid}.{key}", loc)
        if ("invehicle_value" in route) == ("invehicle_minutes" in route):
            raise loc.error("give exactly one of invehicle_value / invehicle_minutes",
                            f"routes.{rid}")


def _validate_published(pub, kind: str, loc: _Located):
    _check_keys(pub, {"d0": OPT, "base": OPT, "optimal": OPT}, "published", loc)
    if "d0" in pub:
        if kind == "network":
            if not isinstance(pub["d0"], Mapping):
                raise loc.error("expected a mapping route id -> d0", "published.d0")
            for rid, v in pub["d0"].items():
                if rid not in loc.route_index:
                    raise loc.error(f"unknown route {rid!r}", f"published.d0.{rid}")
                _number(v, f"published.d0.{rid}", loc)
        else:
            _number(pub["d0"], "published.d0", loc)
    for column in ("base", "optimal"):
        if column not in pub:
            continue
        cells = pub[column]
        allowed = {k: OPT for k in _PUBLISHED_CELLS}
        if kind == "network":
            allowed["routes"] = OPT
        _check_keys(cells, allowed, f"published.{column}", loc)
        for key, value in cells.items():
            if key == "routes":
                if not isinstance(value, Mapping):
                    raise loc.error("expected a mapping", f"published.{column}.routes")
                for rid, rcells in value.items():
                    if rid not in loc.route_index:
                        raise loc.error(f"unknown route {rid!r}", f"published.{column}.routes.{rid}")
                    _check_keys(rcells, {k: OPT for k in _PUBLISHED_ROUTE_CELLS},
                                f"published.{column}.routes.{rid}", loc)
                    for k, v in rcells.items():
                        _number(v, f"published.{column}.routes.{rid}.{k}", loc)
            else:
                _number(value, f"published.{column}.{key}", loc)


# ---------------------------------------------------------------------------
# observables
# ---------------------------------------------------------------------------

def _matrix(value, field: str, loc: _Located):
    if value is None:
        return None
    if not isinstance(value, list) or not all(isinstance(row, list) for row in value):
        raise loc.error("expected a list of rows", field)
    return tuple(tuple(_number(v, f"{field}[{i}][{j}]", loc) for j, v in enumerate(row))
                 for i, row in enumerate(value))


def _observables(doc: Mapping, kind: str, loc: _Located) -> BaseObservables:
    model, demand, times, costs, marg = (doc[b] for b in ("model", "demand", "times", "costs", "marginals"))
    pairs = marg.get("complement_pairs", [])
    if not isinstance(pairs, list) or not all(
            isinstance(p, list) and len(p) == 2 and all(isinstance(x, str) for x in p) for p in pairs):
        raise loc.error("expected a list of [route, route] pairs", "marginals.complement_pairs")
    marginals = Marginals(
        dQ_dX=marg["dQ_dX"], dK_dX=marg["dK_dX"], dQ_dR=marg["dQ_dR"], dK_dR=marg["dK_dR"],
        dO_dX=marg.get("dO_dX", 0.0), dO_dR=marg.get("dO_dR", 0.0), dK_da=marg.get("dK_da", 0.0),
        dQ_dX_matrix=_matrix(marg.get("dQ_dX_matrix"), "marginals.dQ_dX_matrix", loc),
        dK_dX_matrix=_matrix(marg.get("dK_dX_matrix"), "marginals.dK_dX_matrix", loc),
        complement_pairs=tuple(tuple(p) for p in pairs))
    vot = _number(times["value_of_time"], "times.value_of_time", loc, nonneg=True)
    common = dict(
        name=model.get("name", "scenario"), kind=kind,
        p_base=_number(demand["price"], "demand.price", loc, positive=True),
        d1=_number(demand["elasticity"], "demand.elasticity", loc),
        q_base=time_value(vot, _number(times["wait_minutes"], "times.wait_minutes", loc, nonneg=True)),
        R_base=_number(model["capacity"], "model.capacity", loc, positive=True),
        marginals=marginals,
        c0=float(costs.get("c0", 0.0)), c1=costs["c1"], c2=costs["c2"], c3=costs["c3"],
        c4=costs["c4"], c5=costs["c5"], U=costs["utilization"], seats=costs.get("seats"),
        published=copy.deepcopy(doc.get("published", {})))
    if common["d1"] <= 1:
        raise loc.error(f"elasticity must be > 1, got {common['d1']}", "demand.elasticity")
    if kind == "aggregate":
        minutes = _number(times["invehicle_minutes"], "times.invehicle_minutes", loc, nonneg=True)
        return BaseObservables(
            **common,
            X_base=_number(demand["base_trips"], "demand.base_trips", loc, positive=True),
            k_base=time_value(vot, minutes),
            O_base=model["occupancy"],
            geometry=AggregateGeometry(model["trip_distance"], model["detour"],
                                       model["added_vehicle_km"]))
    routes = []
    for r in doc["routes"]:
        rid = r["id"]
        if "invehicle_value" in r:
            k = _number(r["invehicle_value"], f"routes.{rid}.invehicle_value", loc, positive=True)
        else:
            k = time_value(vot, _number(r["invehicle_minutes"], f"routes.{rid}.invehicle_minutes", loc,
                                        nonneg=True))
        routes.append(RouteObservables(
            id=rid, X_base=_number(r["base_trips"], f"routes.{rid}.base_trips", loc, positive=True),
            d_r=r["distance"], b_r=float(r.get("detour", 0.0)), c_r=r["added_vehicle_km"], k_base=k))
    return BaseObservables(**common, routes=tuple(routes))


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioFile:
    """A validated, calibrated scenario together with its source document."""

    name: str
    kind: str
    digest: str
    document: Mapping
    model: Scenario
    options: SolverOptions
    source: str = ""

    @property
    def published(self) -> Mapping:
        return self.model.published

    def consistency(self) -> ConsistencyReport:
        return consistency_report(self.model)


def parse_scenario(text: str, source: str = "<string>", digest: str | None = None) -> ScenarioFile:
    loc = _Located()
    doc = _parse_yaml(text, loc)
    return _build(doc, loc, source, digest or hashlib.sha256(text.encode()).hexdigest())


def scenario_from_document(doc: Mapping, source: str = "<document>") -> ScenarioFile:
    """Build from an already-parsed document (used by sweeps)."""
    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return _build(copy.deepcopy(doc), _Located(), source, hashlib.sha256(canonical.encode()).hexdigest())


def _build(doc, loc: _Located, source: str, digest: str) -> ScenarioFile:
    kind = _validate(doc, loc)
    obs = _observables(doc, kind, loc)
    try:
        model = calibrate(obs)
        solver = dict(doc.get("solver", {}))
        if "max_iterations" in solver:
            solver["max_iterations"] = int(solver["max_iterations"])
        options = SolverOptions(**solver)
    except ValidationError as exc:
        raise loc.error(exc.message, exc.field) from None
    except DomainError as exc:
        raise ValidationError(str(exc)) from None
    return ScenarioFile(name=obs.name, kind=kind, digest=digest, document=doc, model=model,
                        options=options, source=source)


def resolve_scenario_path(ref: str | Path) -> Path:
    """A filesystem path, or the name of a bundled fixture."""
    path = Path(ref)
    if path.exists():
        return path
    name = str(ref).removesuffix(".yaml")
    if name in FIXTURES:
        return Path(str(resources.files("drtwelfare") / "fixtures" / f"{name}.yaml"))
    raise FileNotFoundError(f"scenario file not found: {ref}")


def load_scenario(ref: str | Path) -> ScenarioFile:
    """Load, validate and calibrate a scenario file (or bundled fixture name)."""
    path = resolve_scenario_path(ref)
    data = path.read_bytes()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError:
        raise ValidationError("scenario file is not valid UTF-8", line=1, column=1) from None
    return parse_scenario(text, source=str(path), digest=hashlib.sha256(data).hexdigest())
