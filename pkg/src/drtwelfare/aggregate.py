"""Welfare-optimal flat price and capacity for the aggregate model.

The planner maximizes collective willingness to pay minus operator cost subject
to a capital constraint ``R <= U F`` and an occupancy constraint
``a X <= O(X, R) R``. With both binding, capacity is a function of demand and
the problem reduces to a one-dimensional fixed point in ``X``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import ConvergenceError, DomainError, SingularityError
from .model import (
    AggregateScenario, OperatingPoint, WelfareBreakdown, demand_at, gross_wtp,
    inverse_demand, total_cost_aggregate, welfare,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverOptions:
    damping: float = 0.5
    max_iterations: int = 10_000
    convergence_tol: float = 1e-10
    foc_tol: float = 1e-8

    def __post_init__(self):
        if not 0 < self.damping <= 1:
            raise DomainError(f"damping must lie in (0, 1], got {self.damping}")
        if self.convergence_tol <= 0 or self.foc_tol <= 0:
            raise DomainError("tolerances must be > 0")
        if self.max_iterations < 1:
            raise DomainError("max_iterations must be >= 1")


@dataclass(frozen=True)
class AggregateSolution:
    point: OperatingPoint
    lambda_: float
    mu: float
    welfare: WelfareBreakdown
    foc_residuals: tuple[float, float, float]
    iterations: int
    converged: bool
    subsidized: bool = False
    occupancy_clamped: bool = False
    trace: tuple[float, ...] = field(default=(), repr=False)

    @property
    def lagrangean(self) -> float:
        # both constraints bind at the solution, so the penalty terms vanish
        return self.welfare.social_welfare


def lagrangean_value(sc: AggregateScenario, X, R, F, lam, mu) -> float:
    """``W - C - lam (a X - O R) - mu (R - U F)``."""
    a = sc.geometry.a
    W = gross_wtp(sc.demand, X) - (sc.Q(X, R) + sc.K(X, R)) * X
    C = total_cost_aggregate(sc.costs, sc.geometry, X, R, F)
    return W - C - lam * (a * X - sc.O(X, R) * R) - mu * (R - sc.costs.U * F)


def foc_residuals(sc: AggregateScenario, X, R, F, lam, mu) -> tuple[float, float, float]:
    """Partial derivatives of the Lagrangean in ``X``, ``R`` and ``F``."""
    g, cp = sc.geometry, sc.costs
    q, k, O = sc.Q(X, R), sc.K(X, R), sc.O(X, R)
    rX = (inverse_demand(sc.demand, X) - q - k - sc.dQ_dX * X - sc.dK_dX * X
          - (cp.c3 + cp.c4 * g.a + cp.c4 * g.b + cp.c5 * g.c)
          - lam * (g.a - R * sc.dO_dX))
    rR = -sc.dQ_dR * X - sc.dK_dR * X - cp.c2 + lam * (O + sc.dO_dR * R) - mu
    rF = -cp.c1 + mu * cp.U
    return float(rX), float(rR), float(rF)


def _occupancy_bracket(sc: AggregateScenario, X, R) -> float:
    bracket = sc.O(X, R) + sc.dO_dR * R
    if abs(bracket) < 1e-12:
        raise SingularityError(f"occupancy bracket O + R dO/dR vanishes at X={X}, R={R}")
    return bracket


def optimal_price(sc: AggregateScenario, X: float, R: float) -> float:
    """Flat price equal to marginal operator cost plus net time externalities."""
    g, cp = sc.geometry, sc.costs
    bracket = _occupancy_bracket(sc, X, R)
    capacity = (cp.c1 / (bracket * cp.U) + cp.c2 / bracket
                + sc.dQ_dR * X / bracket + sc.dK_dR * X / bracket)
    return (sc.dQ_dX * X + sc.dK_dX * X + cp.c3 + cp.c4 * g.a + cp.c4 * g.b + cp.c5 * g.c
            + capacity * (g.a - R * sc.dO_dX))


def binding_capacity(sc: AggregateScenario, X: float) -> float:
    """Seat-km ``R`` with ``a X = O(X, R) R``."""
    a = sc.geometry.a
    if X <= 0:
        raise DomainError(f"demand must be > 0, got {X}")
    if sc.dO_dR == 0:
        return a * X / sc.O(X, 0.0)
    f = lambda R: sc.O(X, R) * R - a * X
    lo = a * X  # occupancy <= 1 so f(lo) <= 0
    hi = lo
    for _ in range(200):
        hi *= 2.0
        if f(hi) > 0:
            break
    else:
        raise DomainError(f"no capacity satisfies the occupancy constraint at X={X}")
    return brentq(f, lo, hi, xtol=1e-12, rtol=4 * np.finfo(float).eps, maxiter=500)


def _point_at(sc: AggregateScenario, X: float, R: float, p: float) -> OperatingPoint:
    q, k = float(sc.Q(X, R)), float(sc.K(X, R))
    return OperatingPoint(X=X, R=R, F=R / sc.costs.U, p=p, q=q, k=k, G=p + q + k,
                          O=float(sc.O(X, R)))


def solve(sc: AggregateScenario, opts: SolverOptions | None = None) -> AggregateSolution:
    """Damped fixed point on demand with both constraints binding."""
    opts = opts or SolverOptions()
    X = float(sc.base.X)
    trace = []
    for it in range(1, opts.max_iterations + 1):
        R = binding_capacity(sc, X)
        p = optimal_price(sc, X, R)
        G = p + sc.Q(X, R) + sc.K(X, R)
        if G <= 0:
            raise DomainError(f"generalized cost became non-positive ({G}) at X={X}")
        step = opts.damping * (demand_at(sc.demand, G) - X)
        X = X + step
        trace.append(X)
        if abs(step) < opts.convergence_tol:
            break
    else:
        raise ConvergenceError(
            f"aggregate solver did not converge in {opts.max_iterations} iterations", trace[-20:])

    R = binding_capacity(sc, X)
    F = R / sc.costs.U
    p = optimal_price(sc, X, R)
    mu = sc.costs.c1 / sc.costs.U
    lam = (mu + sc.costs.c2 + sc.dQ_dR * X + sc.dK_dR * X) / _occupancy_bracket(sc, X, R)
    res = foc_residuals(sc, X, R, F, lam, mu)
    point = _point_at(sc, X, R, p)
    converged = max(abs(r) for r in res) < opts.foc_tol
    if p < 0:
        log.warning("optimal flat price is negative (%.4g): solution is subsidized", p)
    return AggregateSolution(
        point=point, lambda_=float(lam), mu=mu, welfare=welfare(sc, point), foc_residuals=res,
        iterations=it, converged=converged, subsidized=p < 0,
        occupancy_clamped=bool(sc.o_surface.evaluate((X, R))[1]), trace=tuple(trace))


@dataclass(frozen=True)
class GridOracleResult:
    X: np.ndarray
    welfare: np.ndarray
    best_index: int

    @property
    def best_X(self) -> float:
        return float(self.X[self.best_index])

    @property
    def best_welfare(self) -> float:
        return float(self.welfare[self.best_index])

    @property
    def step(self) -> float:
        return float(self.X[1] - self.X[0])


def grid_welfare(sc: AggregateScenario, X: float) -> float:
    """Social welfare at demand ``X`` with binding constraints and implied price."""
    R = binding_capacity(sc, X)
    F = R / sc.costs.U
    q, k = sc.Q(X, R), sc.K(X, R)
    p = inverse_demand(sc.demand, X) - q - k
    point = OperatingPoint(X=X, R=R, F=F, p=p, q=q, k=k, G=p + q + k, O=sc.O(X, R))
    return welfare(sc, point).social_welfare


def oracle_grid(sc: AggregateScenario, X_min: float, X_max: float, steps: int = 2000) -> GridOracleResult:
    """Brute-force welfare maximization over an evenly spaced demand grid."""
    if not X_min > 0:
        raise DomainError("X_min must be > 0")
    if steps < 100:
        raise DomainError("oracle grid needs at least 100 steps")
    xs = np.linspace(X_min, X_max, steps)
    ws = np.array([grid_welfare(sc, float(x)) for x in xs])
    return GridOracleResult(xs, ws, int(np.argmax(ws)))
