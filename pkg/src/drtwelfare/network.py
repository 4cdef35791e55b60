"""Welfare-optimal differentiated route prices for the network model.

Capacity binds through ``s * sum_r X_r c_r = R = U F``. Each route price is its
marginal operator cost, plus the time externality it imposes on all routes,
plus the capacity bracket scaled by the route's added vehicle-km.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .aggregate import SolverOptions
from .errors import ConvergenceError, DomainError
from .model import (
    NetworkScenario, OperatingPoint, WelfareBreakdown, demand_at, gross_wtp, inverse_demand,
    network_capacity, network_social_welfare, route_arrays, total_cost_network, welfare,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NetworkSolution:
    point: OperatingPoint
    lambda_: float
    mu: float
    welfare: WelfareBreakdown
    weighted_avg_price: float
    foc_residuals: tuple[float, ...]
    iterations: int
    converged: bool
    subsidized: bool = False
    trace: tuple[tuple[float, ...], ...] = field(default=(), repr=False)


def capacity_required(routes, X_r, s: float) -> float:
    """Seat-km needed to serve ``X_r``: ``s * sum_r X_r c_r``."""
    if not s > 0:
        raise DomainError(f"seats must be > 0, got {s}")
    _, _, c = route_arrays(routes)
    return float(s * (np.asarray(X_r, dtype=float) @ c))


def _externality(sc: NetworkScenario, X) -> np.ndarray:
    """Per-route ``sum_i dQ_i/dX_r X_i + sum_i dK_i/dX_r X_i``."""
    X = np.asarray(X, dtype=float)
    return X @ sc.dQ_dX + X @ sc.dK_dX


def _capacity_bracket(sc: NetworkScenario, X) -> float:
    X = np.asarray(X, dtype=float)
    cp = sc.costs
    return cp.c1 / cp.U + cp.c2 + float(sc.dQ_dR @ X) + float(sc.dK_dR @ X)


def _operator_terms(sc: NetworkScenario) -> np.ndarray:
    cp = sc.costs
    d, b, c = route_arrays(sc.routes)
    return cp.c3 + cp.c4 * d + cp.c4 * b + cp.c5 * c


def route_prices(sc: NetworkScenario, X_r, R: float) -> np.ndarray:
    """Optimal price of every route at ``(X_r, R)``."""
    _, _, c = route_arrays(sc.routes)
    return (_externality(sc, X_r) + _operator_terms(sc)
            + _capacity_bracket(sc, X_r) * (c * sc.costs.s))


def route_price(sc: NetworkScenario, r, X_r, R: float) -> float:
    """Optimal price of route ``r`` (index or id)."""
    return float(route_prices(sc, X_r, R)[sc.index(r)])


def lagrangean_value_network(sc: NetworkScenario, X_r, R, F, lam, mu) -> float:
    X = np.asarray(X_r, dtype=float)
    gross = sum(gross_wtp(r.demand, x) for r, x in zip(sc.routes, X))
    time_cost = float(((sc.q(X, R) + sc.k(X, R)) * X).sum())
    C = total_cost_network(sc.costs, sc.routes, X, R, F)
    required = capacity_required(sc.routes, X, sc.costs.s)
    return gross - time_cost - C - lam * (required - R) - mu * (R - sc.costs.U * F)


def foc_residuals_network(sc: NetworkScenario, X_r, R, F, lam, mu) -> np.ndarray:
    """Partials of the network Lagrangean: ``n`` route entries, then ``R``, ``F``."""
    X = np.asarray(X_r, dtype=float)
    cp = sc.costs
    _, _, c = route_arrays(sc.routes)
    G = np.array([inverse_demand(r.demand, x) for r, x in zip(sc.routes, X)])
    rX = (G - sc.q(X, R) - sc.k(X, R) - _externality(sc, X) - _operator_terms(sc)
          - lam * (c * cp.s))
    rR = -float(sc.dQ_dR @ X) - float(sc.dK_dR @ X) - cp.c2 + lam - mu
    rF = -cp.c1 + mu * cp.U
    return np.concatenate([rX, [rR, rF]])


def _point_at(sc: NetworkScenario, X: np.ndarray, R: float, p: np.ndarray) -> OperatingPoint:
    q, k = sc.q(X, R), sc.k(X, R)
    d, _, _ = route_arrays(sc.routes)
    return OperatingPoint(X=X, R=R, F=R / sc.costs.U, p=p, q=q, k=k, G=p + q + k,
                          O=float(X @ d) / R)


def solve_network(sc: NetworkScenario, opts: SolverOptions | None = None) -> NetworkSolution:
    """Damped fixed point on route demands with capacity binding."""
    opts = opts or SolverOptions()
    X = np.asarray(sc.base.X, dtype=float).copy()
    trace = []
    for it in range(1, opts.max_iterations + 1):
        R = capacity_required(sc.routes, X, sc.costs.s)
        p = route_prices(sc, X, R)
        G = p + sc.q(X, R) + sc.k(X, R)
        if np.any(G <= 0):
            raise DomainError(f"generalized cost became non-positive at X={X}")
        target = np.array([demand_at(r.demand, g) for r, g in zip(sc.routes, G)])
        step = opts.damping * (target - X)
        X = X + step
        trace.append(tuple(X))
        if np.max(np.abs(step)) < opts.convergence_tol:
            break
    else:
        raise ConvergenceError(
            f"network solver did not converge in {opts.max_iterations} iterations", trace[-20:])

    R = capacity_required(sc.routes, X, sc.costs.s)
    F = R / sc.costs.U
    p = route_prices(sc, X, R)
    mu = sc.costs.c1 / sc.costs.U
    lam = mu + sc.costs.c2 + float(sc.dQ_dR @ X) + float(sc.dK_dR @ X)
    res = foc_residuals_network(sc, X, R, F, lam, mu)
    point = _point_at(sc, X, R, p)
    if np.any(p < 0):
        log.warning("negative route price at the optimum: solution is subsidized")
    return NetworkSolution(
        point=point, lambda_=float(lam), mu=mu, welfare=welfare(sc, point),
        weighted_avg_price=float(p @ X / X.sum()), foc_residuals=tuple(float(v) for v in res),
        iterations=it, converged=bool(np.max(np.abs(res)) < opts.foc_tol),
        subsidized=bool(np.any(p < 0)), trace=tuple(trace))


@dataclass(frozen=True)
class NetworkOracleResult:
    coarse_X: np.ndarray
    coarse_welfare: float
    coarse_step: np.ndarray
    X: np.ndarray
    welfare: float
    evaluations: int


_CHUNK = 200_000


def _grid_argmax(sc: NetworkScenario, axes: Sequence[np.ndarray]) -> tuple[np.ndarray, float, int]:
    best_w, best_x, count = -np.inf, None, 0
    # chunk along the first axis so memory stays bounded
    rest = np.stack(np.meshgrid(*axes[1:], indexing="ij"), axis=-1).reshape(-1, len(axes) - 1) \
        if len(axes) > 1 else np.empty((1, 0))
    per_first = max(1, _CHUNK // len(rest))
    first = axes[0]
    for start in range(0, len(first), per_first):
        block = first[start:start + per_first]
        pts = np.concatenate([np.repeat(block, len(rest))[:, None],
                              np.tile(rest, (len(block), 1))], axis=1)
        w = network_social_welfare(sc, pts)
        count += len(pts)
        i = int(np.argmax(w))
        # strict ">" keeps the first maximum in grid order
        if w[i] > best_w:
            best_w, best_x = float(w[i]), pts[i].copy()
    return best_x, best_w, count


def _coordinate_ascent(sc: NetworkScenario, bounds, resolution: int, sweeps: int = 50):
    X = np.clip(np.asarray(sc.base.X, dtype=float), bounds[:, 0], bounds[:, 1])
    best = network_social_welfare(sc, X)
    count = 1
    for _ in range(sweeps):
        improved = False
        for r in range(len(X)):
            cand = np.repeat(X[None, :], resolution, axis=0)
            cand[:, r] = np.linspace(bounds[r, 0], bounds[r, 1], resolution)
            w = network_social_welfare(sc, cand)
            count += resolution
            i = int(np.argmax(w))
            if w[i] > best:
                best, X, improved = float(w[i]), cand[i].copy(), True
        if not improved:
            break
    return X, best, count


def oracle_network(sc: NetworkScenario, bounds, resolution: int = 25,
                   refinements: int = 4) -> NetworkOracleResult:
    """Brute-force welfare maximization over route demands.

    Exhaustive grid for up to six routes, coordinate ascent beyond. After the
    coarse pass, ``refinements`` zoom passes re-grid one coarse step either
    side of the incumbent at the same resolution.
    """
    bounds = np.asarray(bounds, dtype=float)
    n = sc.n
    if bounds.shape != (n, 2) or np.any(bounds[:, 0] <= 0) or np.any(bounds[:, 1] <= bounds[:, 0]):
        raise DomainError("bounds must be n pairs (lo, hi) with 0 < lo < hi")
    if resolution < 3:
        raise DomainError("resolution must be >= 3")
    exhaustive = n <= 6

    def search(bnds):
        if exhaustive:
            axes = [np.linspace(lo, hi, resolution) for lo, hi in bnds]
            return _grid_argmax(sc, axes)
        return _coordinate_ascent(sc, bnds, resolution)

    step = (bounds[:, 1] - bounds[:, 0]) / (resolution - 1)
    X, w, count = search(bounds)
    coarse_X, coarse_w, coarse_step = X.copy(), w, step.copy()
    for _ in range(refinements):
        lo = np.maximum(X - step, bounds[:, 0] * 0.5)
        hi = X + step
        Xn, wn, cn = search(np.stack([lo, hi], axis=1))
        count += cn
        if wn >= w:
            X, w = Xn, wn
        step = (hi - lo) / (resolution - 1)
    return NetworkOracleResult(coarse_X, coarse_w, coarse_step, X, w, count)


def default_oracle_bounds(sc: NetworkScenario, spread: float = 0.6) -> np.ndarray:
    X = np.asarray(sc.base.X, dtype=float)
    return np.stack([X * (1 - spread), X * (1 + spread)], axis=1)
