"""Calibration of scenarios from base-period observables.

Everything here is deterministic algebra on declared inputs: demand scales
are backed out from base demand and generalized cost, response surfaces are
anchored at the base operating point, seats and fleet follow from the binding
capacity relations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import DomainError, ValidationError
from .model import (
    CAPACITY, COMPLEMENT, DEMAND, DISTANCE, IN_VEHICLE, OCCUPANCY, WAITING,
    AggregateGeometry, AggregateScenario, CostParameters, DemandCurve, NetworkScenario,
    OperatingPoint, ResponseSurface, Route, Scenario, demand_at, occupancy, route_arrays,
    total_cost_aggregate, total_cost_network, welfare,
)


@dataclass(frozen=True)
class Marginals:
    dQ_dX: float
    dK_dX: float
    dQ_dR: float
    dK_dR: float
    dO_dX: float = 0.0
    dO_dR: float = 0.0
    dK_da: float = 0.0
    # network overrides, row i / column r holds dQ_i/dX_r
    dQ_dX_matrix: tuple[tuple[float, ...], ...] | None = None
    dK_dX_matrix: tuple[tuple[float, ...], ...] | None = None
    complement_pairs: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class RouteObservables:
    id: str
    X_base: float
    d_r: float
    b_r: float
    c_r: float
    k_base: float


@dataclass(frozen=True)
class BaseObservables:
    """Base-period data for one scenario.

    For the aggregate model ``X_base`` is total demand and ``k_base`` the
    in-vehicle value; for the network model both live on ``routes``.
    """

    name: str
    kind: str
    p_base: float
    d1: float
    q_base: float
    R_base: float
    marginals: Marginals
    c0: float
    c1: float
    c2: float
    c3: float
    c4: float
    c5: float
    U: float
    seats: float | None = None
    X_base: float | None = None
    k_base: float | None = None
    O_base: float | None = None
    geometry: AggregateGeometry | None = None
    routes: tuple[RouteObservables, ...] = ()
    published: Mapping = field(default_factory=dict)


# ---------------------------------------------------------------------------
# elementary derivations
# ---------------------------------------------------------------------------

def calibrate_d0(X_base: float, G_base: float, d1: float) -> float:
    """Demand scale that puts ``X_base`` trips on the curve at ``G_base``."""
    if not (X_base > 0 and G_base > 0):
        raise DomainError(f"base demand and generalized cost must be > 0, got {X_base}, {G_base}")
    if not d1 > 1:
        raise DomainError(f"elasticity must be > 1, got {d1}")
    return X_base * G_base ** d1


def time_value(value_of_time: float, minutes: float) -> float:
    if value_of_time < 0 or minutes < 0:
        raise DomainError("value of time and minutes must be >= 0")
    return value_of_time * minutes


def derive_seats(R_base: float, routes: Sequence, X_base: Sequence[float]) -> float:
    """Seats per vehicle that make base capacity bind: ``R / sum X_r c_r``."""
    denom = float(np.dot(X_base, [r.c_r for r in routes]))
    if denom <= 0:
        raise DomainError("sum of X_r * c_r must be > 0 to derive seats")
    return R_base / denom


def derive_fleet(R: float, U: float) -> float:
    if not 0 < U <= 1:
        raise DomainError(f"utilization cap must lie in (0, 1], got {U}")
    return R / U


# ---------------------------------------------------------------------------
# surfaces
# ---------------------------------------------------------------------------

def anchor_surfaces(obs: BaseObservables) -> dict:
    """Affine response surfaces anchored at the base operating point.

    Aggregate: ``{"waiting", "in_vehicle", "occupancy"}``.
    Network: ``{route_id: {"waiting", "in_vehicle"}}``.
    """
    m = obs.marginals
    if obs.kind == "aggregate":
        X, R, a = obs.X_base, obs.R_base, obs.geometry.a
        if obs.O_base is None or not 0 < obs.O_base <= 1:
            raise ValidationError(f"base occupancy must lie in (0, 1], got {obs.O_base}",
                                  field="model.occupancy")
        return {
            "waiting": ResponseSurface(
                WAITING, (X, R), obs.q_base, (m.dQ_dX, m.dQ_dR), (DEMAND, CAPACITY),
                ("marginals.dQ_dX", "marginals.dQ_dR")),
            "in_vehicle": ResponseSurface(
                IN_VEHICLE, (X, R, a), obs.k_base, (m.dK_dX, m.dK_dR, m.dK_da),
                (DEMAND, CAPACITY, DISTANCE),
                ("marginals.dK_dX", "marginals.dK_dR", "marginals.dK_da")),
            "occupancy": ResponseSurface(
                OCCUPANCY, (X, R), obs.O_base, (m.dO_dX, m.dO_dR), (DEMAND, CAPACITY),
                ("marginals.dO_dX", "marginals.dO_dR")),
        }

    ids = [r.id for r in obs.routes]
    n = len(ids)
    X = tuple(r.X_base for r in obs.routes)
    complements = {tuple(pair) for pair in m.complement_pairs}
    for i, r in complements:
        if i not in ids or r not in ids:
            raise ValidationError(f"complement pair ({i}, {r}) names an unknown route",
                                  field="marginals.complement_pairs")
    q_matrix, q_name = _cross_matrix(m.dQ_dX_matrix, m.dQ_dX, n, "dQ_dX")
    k_matrix, k_name = _cross_matrix(m.dK_dX_matrix, m.dK_dX, n, "dK_dX")

    def kinds_for(i):
        out = []
        for r in range(n):
            if r != i and (ids[i], ids[r]) in complements:
                out.append(COMPLEMENT)
            else:
                out.append(DEMAND)
        return out

    surfaces = {}
    for i, route in enumerate(obs.routes):
        kinds = kinds_for(i)
        q_names = [q_name(i, r) for r in range(n)] + ["marginals.dQ_dR"]
        k_names = [k_name(i, r) for r in range(n)] + ["marginals.dK_dR", "marginals.dK_da"]
        surfaces[route.id] = {
            "waiting": ResponseSurface(
                WAITING, X + (obs.R_base,), obs.q_base,
                tuple(q_matrix[i]) + (m.dQ_dR,), kinds + [CAPACITY], q_names),
            "in_vehicle": ResponseSurface(
                IN_VEHICLE, X + (obs.R_base, route.d_r), route.k_base,
                tuple(k_matrix[i]) + (m.dK_dR, m.dK_da), kinds + [CAPACITY, DISTANCE], k_names),
        }
    return surfaces


def _cross_matrix(matrix, uniform: float, n: int, key: str):
    if matrix is None:
        return np.full((n, n), uniform), lambda i, r: f"marginals.{key}"
    arr = np.asarray(matrix, dtype=float)
    if arr.shape != (n, n):
        raise ValidationError(f"expected a {n}x{n} matrix, got shape {arr.shape}",
                              field=f"marginals.{key}_matrix")
    return arr, lambda i, r: f"marginals.{key}_matrix[{i}][{r}]"


# ---------------------------------------------------------------------------
# scenario construction
# ---------------------------------------------------------------------------

def calibrate(obs: BaseObservables) -> Scenario:
    """Build a fully calibrated scenario from base observables."""
    if obs.kind == "aggregate":
        return _calibrate_aggregate(obs)
    if obs.kind == "network":
        return _calibrate_network(obs)
    raise ValidationError(f"unknown model kind {obs.kind!r}", field="model.kind")


def _costs(obs: BaseObservables, s: float) -> CostParameters:
    return CostParameters(obs.c0, obs.c1, obs.c2, obs.c3, obs.c4, obs.c5, obs.U, s)


def _calibrate_aggregate(obs: BaseObservables) -> AggregateScenario:
    geom = obs.geometry
    G = obs.p_base + obs.q_base + obs.k_base
    curve = DemandCurve(calibrate_d0(obs.X_base, G, obs.d1), obs.d1)
    derived_s = obs.R_base / (obs.X_base * geom.c)
    s = obs.seats if obs.seats is not None else derived_s
    costs = _costs(obs, s)
    surf = anchor_surfaces(obs)
    base = OperatingPoint(
        X=obs.X_base, R=obs.R_base, F=derive_fleet(obs.R_base, obs.U), p=obs.p_base,
        q=obs.q_base, k=obs.k_base, G=G, O=occupancy(obs.X_base, geom.a, obs.R_base))
    return AggregateScenario(
        name=obs.name, demand=curve, geometry=geom, costs=costs,
        q_surface=surf["waiting"], k_surface=surf["in_vehicle"], o_surface=surf["occupancy"],
        base=base, occupancy_declared=obs.O_base, seats_pinned=obs.seats,
        published=obs.published)


def _calibrate_network(obs: BaseObservables) -> NetworkScenario:
    if not obs.routes:
        raise ValidationError("network scenario needs at least one route", field="routes")
    X = np.array([r.X_base for r in obs.routes])
    s = obs.seats if obs.seats is not None else derive_seats(obs.R_base, obs.routes, X)
    costs = _costs(obs, s)
    surf = anchor_surfaces(obs)
    routes = []
    for r in obs.routes:
        G = obs.p_base + obs.q_base + r.k_base
        routes.append(Route(
            id=r.id, d_r=r.d_r, b_r=r.b_r, c_r=r.c_r,
            demand=DemandCurve(calibrate_d0(r.X_base, G, obs.d1), obs.d1),
            k_surface=surf[r.id]["in_vehicle"], q_surface=surf[r.id]["waiting"]))
    k = np.array([r.k_base for r in obs.routes])
    n = len(routes)
    d, _, _ = route_arrays(routes)
    base = OperatingPoint(
        X=X, R=obs.R_base, F=derive_fleet(obs.R_base, obs.U), p=np.full(n, obs.p_base),
        q=np.full(n, obs.q_base), k=k, G=obs.p_base + obs.q_base + k,
        O=float(X @ d) / obs.R_base)
    return NetworkScenario(name=obs.name, routes=tuple(routes), costs=costs, base=base,
                           seats_pinned=obs.seats, published=obs.published)


# ---------------------------------------------------------------------------
# consistency report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Check:
    name: str
    computed: float
    expected: float
    tolerance: float
    informational: bool = False
    note: str = ""

    @property
    def deviation(self) -> float:
        if self.expected == 0:
            return float(abs(self.computed))
        return float(abs(self.computed - self.expected) / abs(self.expected))

    @property
    def passed(self) -> bool:
        return bool(self.deviation <= self.tolerance)


@dataclass(frozen=True)
class ConsistencyReport:
    scenario: str
    checks: tuple[Check, ...]

    @property
    def ok(self) -> bool:
        """True when every non-informational check passes."""
        return all(c.passed for c in self.checks if not c.informational)

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.checks)


# relative tolerance for comparisons against three-digit published figures
PUBLISHED_TOL = 0.005


def consistency_report(scenario: Scenario) -> ConsistencyReport:
    """Internal-consistency and published-value checks for a calibrated scenario."""
    if isinstance(scenario, AggregateScenario):
        checks = _aggregate_checks(scenario)
    else:
        checks = _network_checks(scenario)
    return ConsistencyReport(scenario.name, tuple(checks))


def _published_base(scenario) -> Mapping:
    return scenario.published.get("base", {}) or {}


def _aggregate_checks(sc: AggregateScenario) -> list[Check]:
    b, g = sc.base, sc.geometry
    measured_O = occupancy(b.X, g.a, b.R)
    checks = [
        Check("occupancy identity", sc.occupancy_declared, measured_O, PUBLISHED_TOL,
              note="declared occupancy vs X*a/R"),
        Check("anchor identity c*s vs a/O", g.c * sc.costs.s, g.a / measured_O, 0.001,
              note="links the occupancy cap to seats and added vehicle-km"),
        Check("base capacity constraint", g.a * b.X, sc.O(b.X, b.R) * b.R, 0.001,
              informational=True, note="a*X vs O(X,R)*R at the base point"),
        Check("demand round trip", demand_at(sc.demand, b.G), b.X, 1e-12),
    ]
    if sc.seats_pinned is not None:
        checks.append(Check("seats pinned vs derived", sc.seats_pinned, b.R / (b.X * g.c), 0.001))
    pub = sc.published
    if isinstance(pub.get("d0"), (int, float)):
        checks.append(Check("d0", sc.demand.d0, float(pub["d0"]), 0.01))
    checks += _base_cell_checks(sc, welfare(sc, b), b.O, b.q, b.k, float(b.p), b.X)
    cost_alt = total_cost_aggregate(sc.costs, g, b.X, b.R, b.R)
    checks += _cost_checks(sc, welfare(sc, b), cost_alt)
    return checks


def _network_checks(sc: NetworkScenario) -> list[Check]:
    b = sc.base
    X = np.asarray(b.X)
    _, _, c = route_arrays(sc.routes)
    derived_s = b.R / float(X @ c)
    checks = [
        Check("capacity identity", sc.costs.s * float(X @ c), b.R, 1e-9,
              note="s * sum X_r c_r vs R at the base point"),
    ]
    if sc.seats_pinned is not None:
        checks.append(Check("seats pinned vs derived", sc.seats_pinned, derived_s, 0.001))
    for r, x, G in zip(sc.routes, X, np.asarray(b.G)):
        checks.append(Check(f"demand round trip {r.id}", demand_at(r.demand, G), x, 1e-12))
    pub = sc.published
    d0_pub = pub.get("d0")
    if isinstance(d0_pub, Mapping):
        for r in sc.routes:
            if r.id in d0_pub:
                checks.append(Check(f"d0 {r.id}", r.demand.d0, float(d0_pub[r.id]), 0.01))
    total = float(X.sum())
    k_avg = float(np.asarray(b.k) @ X) / total
    q_avg = float(np.asarray(b.q) @ X) / total
    p_avg = float(np.asarray(b.p) @ X) / total
    w = welfare(sc, b)
    checks += _base_cell_checks(sc, w, None, q_avg, k_avg, p_avg, total)
    routes_pub = _published_base(sc).get("routes", {}) or {}
    for i, r in enumerate(sc.routes):
        cells = routes_pub.get(r.id, {}) or {}
        for key, value in (("trips", X[i]), ("invehicle_value", np.asarray(b.k)[i]),
                           ("price", np.asarray(b.p)[i])):
            if key in cells:
                checks.append(Check(f"base {key} {r.id}", float(value), float(cells[key]),
                                    PUBLISHED_TOL))
    cost_alt = total_cost_network(sc.costs, sc.routes, X, b.R, b.R)
    checks += _cost_checks(sc, w, cost_alt)
    return checks


def _base_cell_checks(sc, w, occ, q, k, p, trips) -> list[Check]:
    pub = _published_base(sc)
    values = {
        "trips": trips, "waiting_value": q, "invehicle_value": k, "price": p,
        "occupancy": occ, "capacity": sc.base.R, "cwp": w.collective_wtp,
    }
    out = []
    for key, value in values.items():
        if key in pub and value is not None:
            out.append(Check(f"base {key}", float(value), float(pub[key]), PUBLISHED_TOL))
    return out


def _cost_checks(sc, w, cost_alt: float) -> list[Check]:
    pub = _published_base(sc)
    out = []
    if "cost" in pub:
        out.append(Check("base cost", w.operator_cost, float(pub["cost"]), PUBLISHED_TOL,
                         informational=True, note="operator cost with F = R/U"))
        out.append(Check("base cost (F = R reading)", float(cost_alt), float(pub["cost"]),
                         PUBLISHED_TOL, informational=True, note="capital term charged on R"))
    if "welfare" in pub:
        out.append(Check("base welfare", w.social_welfare, float(pub["welfare"]), PUBLISHED_TOL,
                         informational=True, note="with the recomputed operator cost"))
        if "cost" in pub:
            out.append(Check("base welfare (published cost)",
                             w.collective_wtp - float(pub["cost"]), float(pub["welfare"]),
                             PUBLISHED_TOL, note="collective WTP minus the published cost"))
    return out
