"""Domain types and elementary evaluations for the DRT welfare model.

Money is in euros, distances in km, and time costs are pre-multiplied by the
value of time. Every function here is pure. Functions that take demand
quantities broadcast over numpy arrays, so the oracles can evaluate whole
grids at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np

from .errors import ContractError, DomainError, UnsupportedElasticityError, ValidationError

ArrayLike = Union[float, np.ndarray]

WAITING = "waiting-time"
IN_VEHICLE = "in-vehicle-time"
OCCUPANCY = "occupancy-cap"
ROLES = (WAITING, IN_VEHICLE, OCCUPANCY)

# input kinds of a response surface; "complement" marks a demand input whose
# gradient may take either sign (vehicles freed near the route origin)
DEMAND, COMPLEMENT, CAPACITY, DISTANCE = "demand", "complement", "capacity", "distance"
INPUT_KINDS = (DEMAND, COMPLEMENT, CAPACITY, DISTANCE)

OCCUPANCY_FLOOR = 1e-9


# ---------------------------------------------------------------------------
# demand
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DemandCurve:
    """Log-linear demand ``X = d0 * G**(-d1)``."""

    d0: float
    d1: float

    def __post_init__(self):
        if not self.d0 > 0:
            raise DomainError(f"demand scale d0 must be > 0, got {self.d0}")
        if not self.d1 > 1:
            raise UnsupportedElasticityError(
                f"elasticity d1 must be > 1 for a finite gross willingness to pay, got {self.d1}")


def demand_at(curve: DemandCurve, G: ArrayLike) -> ArrayLike:
    """Trips per period demanded at generalized cost ``G``."""
    G_arr = np.asarray(G, dtype=float)
    if np.any(G_arr <= 0):
        raise DomainError(f"generalized cost must be > 0, got {G}")
    out = curve.d0 * G_arr ** (-curve.d1)
    return float(out) if out.ndim == 0 else out


def inverse_demand(curve: DemandCurve, X: ArrayLike) -> ArrayLike:
    """Generalized cost at which ``X`` trips are demanded."""
    X_arr = np.asarray(X, dtype=float)
    if np.any(X_arr <= 0):
        raise DomainError(f"demand must be > 0 to invert, got {X}")
    out = (curve.d0 / X_arr) ** (1.0 / curve.d1)
    return float(out) if out.ndim == 0 else out


def gross_wtp(curve: DemandCurve, X: ArrayLike) -> ArrayLike:
    """Area under the inverse demand curve from 0 to ``X``.

    Closed form ``d0**(1/d1) * X**(1 - 1/d1) / (1 - 1/d1)``; finite only for
    ``d1 > 1``.
    """
    if not curve.d1 > 1:
        raise UnsupportedElasticityError(f"integral diverges at 0 for d1={curve.d1}")
    X_arr = np.asarray(X, dtype=float)
    if np.any(X_arr < 0):
        raise DomainError(f"demand must be >= 0, got {X}")
    e = 1.0 - 1.0 / curve.d1
    out = curve.d0 ** (1.0 / curve.d1) * X_arr ** e / e
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# response surfaces
# ---------------------------------------------------------------------------

_SIGN_RULES = {
    # (role, kind) -> required sign: +1 means >= 0, -1 means <= 0
    (WAITING, DEMAND): 1,
    (WAITING, CAPACITY): -1,
    (IN_VEHICLE, DEMAND): 1,
    (IN_VEHICLE, CAPACITY): -1,
    (IN_VEHICLE, DISTANCE): 1,
    (OCCUPANCY, DEMAND): 1,
}


@dataclass(frozen=True)
class ResponseSurface:
    """Affine surface ``anchor_value + gradients . (inputs - anchor_inputs)``.

    ``kinds`` labels each input (demand, complement, capacity, distance) and
    drives the sign checks; ``names`` are used in validation messages.
    """

    role: str
    anchor_inputs: tuple[float, ...]
    anchor_value: float
    gradients: tuple[float, ...]
    kinds: tuple[str, ...]
    names: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "anchor_inputs", tuple(float(v) for v in self.anchor_inputs))
        object.__setattr__(self, "gradients", tuple(float(v) for v in self.gradients))
        object.__setattr__(self, "kinds", tuple(self.kinds))
        object.__setattr__(self, "names", tuple(self.names))
        if self.role not in ROLES:
            raise ContractError(f"unknown surface role {self.role!r}")
        m = len(self.anchor_inputs)
        if len(self.gradients) != m or len(self.kinds) != m:
            raise ContractError("anchor_inputs, gradients and kinds must have equal length")
        if self.names and len(self.names) != m:
            raise ContractError("names must match the number of inputs")
        for i, (g, kind) in enumerate(zip(self.gradients, self.kinds)):
            if kind not in INPUT_KINDS:
                raise ContractError(f"unknown input kind {kind!r}")
            sign = _SIGN_RULES.get((self.role, kind))
            if sign is not None and g * sign < 0:
                name = self.names[i] if self.names else f"gradient[{i}]"
                rel = ">= 0" if sign > 0 else "<= 0"
                raise ValidationError(
                    f"{self.role} gradient w.r.t. {kind} must be {rel}, got {g}", field=name)
        if self.role == OCCUPANCY and not 0 < self.anchor_value <= 1:
            raise ValidationError(
                f"occupancy cap anchor must lie in (0, 1], got {self.anchor_value}",
                field=self.names[0] if self.names else None)

    @property
    def dim(self) -> int:
        return len(self.anchor_inputs)

    def evaluate(self, inputs) -> tuple[ArrayLike, ArrayLike]:
        """Return ``(value, clamped)``; only occupancy surfaces ever clamp.

        ``inputs`` has shape ``(..., dim)``.
        """
        x = np.asarray(inputs, dtype=float)
        if x.shape[-1:] != (self.dim,):
            raise ContractError(
                f"surface expects {self.dim} inputs, got shape {x.shape}")
        raw = self.anchor_value + (x - np.asarray(self.anchor_inputs)) @ np.asarray(self.gradients)
        if self.role == OCCUPANCY:
            value = np.clip(raw, OCCUPANCY_FLOOR, 1.0)
            clamped = value != raw
        else:
            value = raw
            clamped = np.zeros_like(raw, dtype=bool)
        if np.ndim(value) == 0:
            return float(value), bool(clamped)
        return value, clamped


def eval_surface(surface: ResponseSurface, inputs) -> ArrayLike:
    """Value of ``surface`` at ``inputs`` (occupancy clamped to (0, 1])."""
    return surface.evaluate(inputs)[0]


# ---------------------------------------------------------------------------
# costs and geometry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CostParameters:
    c0: float
    c1: float
    c2: float
    c3: float
    c4: float
    c5: float
    U: float
    s: float

    def __post_init__(self):
        for name in ("c0", "c1", "c2", "c3", "c4", "c5"):
            if getattr(self, name) < 0:
                raise ValidationError(f"cost coefficient must be >= 0, got {getattr(self, name)}",
                                      field=f"costs.{name}")
        if not 0 < self.U <= 1:
            raise ValidationError(f"utilization cap must lie in (0, 1], got {self.U}",
                                  field="costs.utilization")
        if not self.s > 0:
            raise ValidationError(f"seats per vehicle must be > 0, got {self.s}", field="costs.seats")


@dataclass(frozen=True)
class AggregateGeometry:
    """Average trip distance ``a``, detour ``b`` and added vehicle-km ``c``."""

    a: float
    b: float
    c: float

    def __post_init__(self):
        if not self.a > 0:
            raise ValidationError(f"trip distance must be > 0, got {self.a}", field="model.trip_distance")
        if self.b < 0:
            raise ValidationError(f"detour must be >= 0, got {self.b}", field="model.detour")
        if not self.c > 0:
            raise ValidationError(f"added vehicle-km must be > 0, got {self.c}",
                                  field="model.added_vehicle_km")


@dataclass(frozen=True)
class Route:
    id: str
    d_r: float
    b_r: float
    c_r: float
    demand: DemandCurve
    k_surface: ResponseSurface
    q_surface: ResponseSurface

    def __post_init__(self):
        if not self.d_r > 0:
            raise ValidationError(f"route distance must be > 0, got {self.d_r}",
                                  field=f"routes.{self.id}.distance")
        if self.b_r < 0:
            raise ValidationError(f"route detour must be >= 0, got {self.b_r}",
                                  field=f"routes.{self.id}.detour")
        if not self.c_r > 0:
            raise ValidationError(f"added vehicle-km must be > 0, got {self.c_r}",
                                  field=f"routes.{self.id}.added_vehicle_km")
        if self.q_surface.role != WAITING or self.k_surface.role != IN_VEHICLE:
            raise ContractError(f"route {self.id}: surfaces have the wrong roles")


@dataclass(frozen=True)
class OperatingPoint:
    """Operating point; ``X``, ``p``, ``q``, ``k``, ``G`` are arrays for networks."""

    X: ArrayLike
    R: float
    F: float
    p: ArrayLike
    q: ArrayLike
    k: ArrayLike
    G: ArrayLike
    O: float

    @property
    def total_demand(self) -> float:
        return float(np.sum(self.X))


@dataclass(frozen=True)
class WelfareBreakdown:
    gross_wtp: float
    time_cost: float
    collective_wtp: float
    operator_cost: float
    social_welfare: float

    @classmethod
    def from_parts(cls, gross: float, time_cost: float, operator_cost: float) -> "WelfareBreakdown":
        cwp = gross - time_cost
        return cls(gross, time_cost, cwp, operator_cost, cwp - operator_cost)


def occupancy(X: ArrayLike, a: float, R: ArrayLike) -> ArrayLike:
    """Shortest-route passenger-km per potential seat-km."""
    R_arr = np.asarray(R, dtype=float)
    if np.any(R_arr <= 0):
        raise DomainError(f"potential seat-km must be > 0, got {R}")
    if np.any(np.asarray(X) < 0):
        raise DomainError(f"demand must be >= 0, got {X}")
    out = np.asarray(X, dtype=float) * a / R_arr
    return float(out) if out.ndim == 0 else out


def occupancy_with_detours(X: ArrayLike, a: float, b: float, R: ArrayLike) -> ArrayLike:
    """Occupied seat-km (detours included) per potential seat-km."""
    R_arr = np.asarray(R, dtype=float)
    if np.any(R_arr <= 0):
        raise DomainError(f"potential seat-km must be > 0, got {R}")
    if np.any(np.asarray(X) < 0):
        raise DomainError(f"demand must be >= 0, got {X}")
    out = np.asarray(X, dtype=float) * (a + b) / R_arr
    return float(out) if out.ndim == 0 else out


def total_cost_aggregate(costs: CostParameters, geom: AggregateGeometry,
                         X: ArrayLike, R: ArrayLike, F: ArrayLike) -> ArrayLike:
    return (costs.c0 + costs.c1 * F + costs.c2 * R + costs.c3 * X
            + costs.c4 * (X * geom.a + X * geom.b) + costs.c5 * (X * geom.c))


def route_arrays(routes: Sequence[Route]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(d_r, b_r, c_r)`` as float arrays in route order."""
    return (np.array([r.d_r for r in routes], dtype=float),
            np.array([r.b_r for r in routes], dtype=float),
            np.array([r.c_r for r in routes], dtype=float))


def total_cost_network(costs: CostParameters, routes: Sequence[Route],
                       X_r, R: ArrayLike, F: ArrayLike) -> ArrayLike:
    """Operator cost with per-route passenger-km and vehicle-km terms.

    ``X_r`` has shape ``(..., n)``.
    """
    if not routes:
        raise ContractError("network needs at least one route")
    d, b, c = route_arrays(routes)
    X = np.asarray(X_r, dtype=float)
    if X.shape[-1:] != (len(routes),):
        raise ContractError(f"expected {len(routes)} route demands, got shape {X.shape}")
    per_route = (costs.c4 * (X * d + X * b) + costs.c5 * X * c).sum(axis=-1)
    out = costs.c0 + costs.c1 * np.asarray(F) + costs.c2 * np.asarray(R) + costs.c3 * X.sum(axis=-1) + per_route
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AggregateScenario:
    """Calibrated aggregate model with flat pricing and endogenous occupancy."""

    name: str
    demand: DemandCurve
    geometry: AggregateGeometry
    costs: CostParameters
    q_surface: ResponseSurface  # inputs (X, R)
    k_surface: ResponseSurface  # inputs (X, R, a)
    o_surface: ResponseSurface  # inputs (X, R)
    base: OperatingPoint
    occupancy_declared: float
    seats_pinned: float | None = None
    published: Mapping = field(default_factory=dict)

    kind = "aggregate"

    def Q(self, X, R):
        return eval_surface(self.q_surface, np.stack(np.broadcast_arrays(X, R), axis=-1))

    def K(self, X, R):
        a = np.full(np.broadcast(X, R).shape, self.geometry.a)
        return eval_surface(self.k_surface, np.stack(np.broadcast_arrays(X, R, a), axis=-1))

    def O(self, X, R):
        return eval_surface(self.o_surface, np.stack(np.broadcast_arrays(X, R), axis=-1))

    @property
    def dQ_dX(self) -> float:
        return self.q_surface.gradients[0]

    @property
    def dQ_dR(self) -> float:
        return self.q_surface.gradients[1]

    @property
    def dK_dX(self) -> float:
        return self.k_surface.gradients[0]

    @property
    def dK_dR(self) -> float:
        return self.k_surface.gradients[1]

    @property
    def dO_dX(self) -> float:
        return self.o_surface.gradients[0]

    @property
    def dO_dR(self) -> float:
        return self.o_surface.gradients[1]


@dataclass(frozen=True)
class NetworkScenario:
    """Calibrated route-network model with per-route pricing."""

    name: str
    routes: tuple[Route, ...]
    costs: CostParameters
    base: OperatingPoint
    seats_pinned: float | None = None
    published: Mapping = field(default_factory=dict)

    kind = "network"

    def __post_init__(self):
        object.__setattr__(self, "routes", tuple(self.routes))
        if not self.routes:
            raise ContractError("network needs at least one route")
        n = len(self.routes)
        ids = [r.id for r in self.routes]
        if len(set(ids)) != n:
            raise ValidationError("route ids must be unique", field="routes")
        for r in self.routes:
            if r.q_surface.dim != n + 1 or r.k_surface.dim != n + 2:
                raise ContractError(f"route {r.id}: surface dimension does not match {n} routes")

    @property
    def n(self) -> int:
        return len(self.routes)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(r.id for r in self.routes)

    def index(self, route) -> int:
        if isinstance(route, (int, np.integer)) and not isinstance(route, bool):
            if 0 <= route < self.n:
                return int(route)
        elif route in self.ids:
            return self.ids.index(route)
        raise ContractError(f"unknown route {route!r}")

    @property
    def dQ_dX(self) -> np.ndarray:
        """Matrix ``M[i, r] = dQ_i/dX_r``."""
        return np.array([r.q_surface.gradients[: self.n] for r in self.routes])

    @property
    def dK_dX(self) -> np.ndarray:
        """Matrix ``M[i, r] = dK_i/dX_r``."""
        return np.array([r.k_surface.gradients[: self.n] for r in self.routes])

    @property
    def dQ_dR(self) -> np.ndarray:
        return np.array([r.q_surface.gradients[self.n] for r in self.routes])

    @property
    def dK_dR(self) -> np.ndarray:
        return np.array([r.k_surface.gradients[self.n] for r in self.routes])

    def q(self, X, R) -> np.ndarray:
        """Per-route waiting-time values; ``X`` shape ``(..., n)``."""
        inp = _append_columns(X, R)
        return np.stack([eval_surface(r.q_surface, inp) for r in self.routes], axis=-1)

    def k(self, X, R) -> np.ndarray:
        """Per-route in-vehicle-time values; ``X`` shape ``(..., n)``."""
        inp = _append_columns(X, R)
        cols = []
        for r in self.routes:
            d = np.full(inp.shape[:-1] + (1,), r.d_r)
            cols.append(eval_surface(r.k_surface, np.concatenate([inp, d], axis=-1)))
        return np.stack(cols, axis=-1)


def _append_columns(X, R) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    R = np.broadcast_to(np.asarray(R, dtype=float), X.shape[:-1])
    return np.concatenate([X, R[..., None]], axis=-1)


Scenario = Union[AggregateScenario, NetworkScenario]


def welfare(scenario: Scenario, point: OperatingPoint) -> WelfareBreakdown:
    """Welfare accounting at ``point`` using the point's own ``q`` and ``k``."""
    if isinstance(scenario, AggregateScenario):
        X = float(point.X)
        gross = gross_wtp(scenario.demand, X)
        time_cost = (float(point.q) + float(point.k)) * X
        cost = total_cost_aggregate(scenario.costs, scenario.geometry, X, point.R, point.F)
        return WelfareBreakdown.from_parts(float(gross), float(time_cost), float(cost))
    X = np.asarray(point.X, dtype=float)
    gross = sum(gross_wtp(r.demand, x) for r, x in zip(scenario.routes, X))
    time_cost = float(np.sum((np.asarray(point.q) + np.asarray(point.k)) * X))
    cost = total_cost_network(scenario.costs, scenario.routes, X, point.R, point.F)
    return WelfareBreakdown.from_parts(float(gross), time_cost, float(cost))


def network_capacity(scenario: NetworkScenario, X) -> ArrayLike:
    """Seat-km required when capacity binds: ``s * sum_r X_r c_r``."""
    _, _, c = route_arrays(scenario.routes)
    out = scenario.costs.s * (np.asarray(X, dtype=float) @ c)
    return float(out) if np.ndim(out) == 0 else out


def network_social_welfare(scenario: NetworkScenario, X) -> ArrayLike:
    """Social welfare with binding capacity, ``F = R/U`` and implied prices.

    Broadcasts over stacked demand vectors ``X`` of shape ``(..., n)``.
    """
    X = np.asarray(X, dtype=float)
    R = np.asarray(network_capacity(scenario, X))
    F = R / scenario.costs.U
    gross = sum(gross_wtp(r.demand, X[..., i]) for i, r in enumerate(scenario.routes))
    time_cost = ((scenario.q(X, R) + scenario.k(X, R)) * X).sum(axis=-1)
    cost = total_cost_network(scenario.costs, scenario.routes, X, R, F)
    out = gross - time_cost - cost
    return float(out) if np.ndim(out) == 0 else out
