import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from drtwelfare.errors import ContractError, DomainError, UnsupportedElasticityError, ValidationError
from drtwelfare.model import (
    CAPACITY, DEMAND, DISTANCE, IN_VEHICLE, OCCUPANCY, WAITING,
    AggregateGeometry, CostParameters, DemandCurve, OperatingPoint, ResponseSurface,
    WelfareBreakdown, demand_at, eval_surface, gross_wtp, inverse_demand, occupancy,
    occupancy_with_detours, total_cost_aggregate, total_cost_network, welfare,
)

COSTS = CostParameters(c0=0.0, c1=0.006, c2=0.098, c3=0.016, c4=0.005, c5=0.5, U=0.8, s=10)
GEOM = AggregateGeometry(a=6.38, b=0.19, c=4.104)

curves = st.builds(DemandCurve, d0=st.floats(1.0, 1e4), d1=st.floats(1.05, 4.0))


def quad_wtp(curve, X):
    value, _ = quad(lambda x: (curve.d0 / x) ** (1 / curve.d1), 0, X, limit=500,
                    epsabs=0, epsrel=1e-12)
    return value


class TestDemand:
    def test_aggregate_base_anchor(self):
        assert demand_at(DemandCurve(3340, 1.5), 5.37 + 1.20 + 3.80) == pytest.approx(100.0, abs=0.5)

    def test_route_ab_base(self):
        assert demand_at(DemandCurve(1113, 1.5), 10.37) == pytest.approx(33.33, abs=0.2)

    def test_power_law_homogeneity(self):
        c = DemandCurve(500, 1.7)
        assert demand_at(c, 30.0) / demand_at(c, 3.0) == pytest.approx(10 ** -1.7, rel=1e-12)

    @pytest.mark.parametrize("G", [0.0, -1.0])
    def test_nonpositive_cost_rejected(self, G):
        with pytest.raises(DomainError):
            demand_at(DemandCurve(3340, 1.5), G)

    def test_inverse_base_points(self):
        assert inverse_demand(DemandCurve(3340, 1.5), 100) == pytest.approx(10.37, abs=0.01)
        # route AC: 5.37 + 1.20 + 4.79
        assert inverse_demand(DemandCurve(638, 1.5), 16.67) == pytest.approx(11.36, abs=0.02)

    @pytest.mark.parametrize("G", [1.0, 5.0, 20.0])
    def test_inverse_round_trip(self, G):
        c = DemandCurve(3340, 1.5)
        assert inverse_demand(c, demand_at(c, G)) == pytest.approx(G, rel=1e-12)
        assert demand_at(c, inverse_demand(c, G)) == pytest.approx(G, rel=1e-12)

    def test_inverse_rejects_zero(self):
        with pytest.raises(DomainError):
            inverse_demand(DemandCurve(3340, 1.5), 0.0)

    def test_curve_invariants(self):
        with pytest.raises(DomainError):
            DemandCurve(0.0, 1.5)
        with pytest.raises(UnsupportedElasticityError):
            DemandCurve(10.0, 1.0)

    @given(curves, st.floats(0.01, 100), st.floats(1.0001, 10))
    def test_strictly_decreasing(self, curve, G, factor):
        assert demand_at(curve, G) > demand_at(curve, G * factor)

    @given(curves, st.floats(0.1, 100))
    def test_round_trip_property(self, curve, G):
        assert abs(inverse_demand(curve, demand_at(curve, G)) - G) < 1e-9 * G

    def test_broadcasts(self):
        c = DemandCurve(3340, 1.5)
        G = np.array([5.0, 10.0, 20.0])
        np.testing.assert_allclose(demand_at(c, G), [demand_at(c, g) for g in G])


class TestGrossWtp:
    def test_aggregate_base(self):
        c = DemandCurve(3340, 1.5)
        assert quad_wtp(c, 100) == pytest.approx(3112, abs=1)
        assert gross_wtp(c, 100) == pytest.approx(3112, abs=1)

    def test_route_ab_base(self):
        c = DemandCurve(1113, 1.5)
        assert quad_wtp(c, 33.33) == pytest.approx(1037, abs=1)
        assert gross_wtp(c, 33.33) == pytest.approx(1037, abs=1)

    def test_zero_demand(self):
        assert gross_wtp(DemandCurve(3340, 1.5), 0.0) == 0.0

    def test_negative_demand_rejected(self):
        with pytest.raises(DomainError):
            gross_wtp(DemandCurve(3340, 1.5), -1.0)

    def test_divergent_integral_rejected(self):
        # bypass the constructor check to reach the integral guard
        c = object.__new__(DemandCurve)
        object.__setattr__(c, "d0", 10.0)
        object.__setattr__(c, "d1", 0.9)
        with pytest.raises(UnsupportedElasticityError):
            gross_wtp(c, 5.0)

    @settings(max_examples=40, deadline=None)
    @given(curves, st.floats(0.5, 500))
    def test_matches_quadrature(self, curve, X):
        assert gross_wtp(curve, X) == pytest.approx(quad_wtp(curve, X), rel=1e-6)

    @given(curves, st.floats(1, 200))
    def test_derivative_is_inverse_demand(self, curve, X):
        h = 1e-4 * X
        fd = (gross_wtp(curve, X + h) - gross_wtp(curve, X - h)) / (2 * h)
        assert fd == pytest.approx(inverse_demand(curve, X), rel=1e-5)


def waiting_surface():
    return ResponseSurface(WAITING, (100, 4104), 1.20, (0.003, -0.00008), (DEMAND, CAPACITY),
                           ("dQ_dX", "dQ_dR"))


class TestSurfaces:
    def test_waiting_surface_at_optimum(self):
        assert eval_surface(waiting_surface(), (101.5, 3478)) == pytest.approx(1.2546, abs=1e-4)

    def test_invehicle_surface_route_ab(self):
        k = ResponseSurface(IN_VEHICLE, (100, 4104), 3.80, (0.0009, -0.000007), (DEMAND, CAPACITY))
        assert eval_surface(k, (101.5, 3478)) == pytest.approx(3.806, abs=1e-3)

    def test_anchor_identity(self):
        s = waiting_surface()
        assert eval_surface(s, s.anchor_inputs) == s.anchor_value

    def test_dimension_mismatch(self):
        with pytest.raises(ContractError):
            eval_surface(waiting_surface(), (1.0, 2.0, 3.0))

    @pytest.mark.parametrize("role,kind,grad", [
        (WAITING, DEMAND, -0.001), (WAITING, CAPACITY, 0.001),
        (IN_VEHICLE, DEMAND, -0.001), (IN_VEHICLE, CAPACITY, 0.001),
        (IN_VEHICLE, DISTANCE, -0.1), (OCCUPANCY, DEMAND, -1e-5),
    ])
    def test_sign_rules(self, role, kind, grad):
        anchor = 0.155 if role == OCCUPANCY else 1.0
        with pytest.raises(ValidationError) as exc:
            ResponseSurface(role, (1.0,), anchor, (grad,), (kind,), ("offender",))
        assert exc.value.field == "offender"

    def test_occupancy_clamped(self):
        o = ResponseSurface(OCCUPANCY, (100, 4104), 0.155, (0.01, 0.0), (DEMAND, CAPACITY))
        value, clamped = o.evaluate((1000, 4104))
        assert value == 1.0 and clamped
        value, clamped = o.evaluate((0, 4104))
        assert 0 < value <= 1 and clamped
        value, clamped = o.evaluate((100, 4104))
        assert value == 0.155 and not clamped

    def test_occupancy_anchor_range(self):
        with pytest.raises(ValidationError):
            ResponseSurface(OCCUPANCY, (1.0,), 1.5, (0.0,), (DEMAND,))

    def test_vectorized(self):
        s = waiting_surface()
        pts = np.array([[100, 4104], [101.5, 3478]])
        np.testing.assert_allclose(eval_surface(s, pts), [1.2, eval_surface(s, (101.5, 3478))])


class TestOccupancy:
    def test_base_values(self):
        assert occupancy(100, 6.38, 4104) == pytest.approx(0.15546, abs=1e-5)
        assert occupancy(0, 6.38, 4104) == 0
        assert occupancy(102, 6.38, 4180) == pytest.approx(0.1557, abs=1e-4)

    def test_with_detours(self):
        assert occupancy_with_detours(100, 6.38, 0.19, 4104) == pytest.approx(0.16009, abs=1e-5)
        assert occupancy_with_detours(100, 6.38, 0.0, 4104) == occupancy(100, 6.38, 4104)
        assert occupancy_with_detours(100, 6.38, 0.19, 2 * 4104) == pytest.approx(
            occupancy_with_detours(100, 6.38, 0.19, 4104) / 2, rel=1e-15)

    @given(st.floats(0, 500), st.floats(0.1, 20), st.floats(0, 5), st.floats(1, 1e4))
    def test_detour_measure_dominates(self, X, a, b, R):
        assert occupancy_with_detours(X, a, b, R) >= occupancy(X, a, R)

    @pytest.mark.parametrize("R", [0.0, -5.0])
    def test_rejects_nonpositive_capacity(self, R):
        with pytest.raises(DomainError):
            occupancy(100, 6.38, R)
        with pytest.raises(DomainError):
            occupancy_with_detours(100, 6.38, 0.19, R)


class TestCosts:
    def test_all_zero_quantities(self):
        costs = CostParameters(7.0, 0.006, 0.098, 0.016, 0.005, 0.5, 0.8, 10)
        assert total_cost_aggregate(costs, GEOM, 0, 0, 0) == 7.0

    def test_base_point(self):
        F = 4104 / 0.8
        by_hand = 0.006 * F + 0.098 * 4104 + 0.016 * 100 + 0.005 * 100 * (6.38 + 0.19) + 0.5 * 100 * 4.104
        value = total_cost_aggregate(COSTS, GEOM, 100, 4104, F)
        assert value == pytest.approx(by_hand, rel=1e-12)
        assert value == pytest.approx(643.1, abs=0.5)

    def test_linear_in_demand(self):
        costs = CostParameters(3.0, 0, 0, 0.016, 0, 0, 0.8, 10)
        one = total_cost_aggregate(costs, GEOM, 50, 0, 0) - costs.c0
        two = total_cost_aggregate(costs, GEOM, 100, 0, 0) - costs.c0
        assert two == pytest.approx(2 * one, rel=1e-15)

    @given(*(st.floats(0, 1e3) for _ in range(6)))
    def test_superposition(self, X1, R1, F1, X2, R2, F2):
        f = lambda X, R, F: total_cost_aggregate(COSTS, GEOM, X, R, F) - COSTS.c0
        assert f(X1 + X2, R1 + R2, F1 + F2) == pytest.approx(f(X1, R1, F1) + f(X2, R2, F2),
                                                             rel=1e-12, abs=1e-9)

    def test_cost_invariants(self):
        with pytest.raises(ValidationError):
            CostParameters(0, -1, 0, 0, 0, 0, 0.8, 10)
        with pytest.raises(ValidationError):
            CostParameters(0, 0, 0, 0, 0, 0, 1.2, 10)
        with pytest.raises(ValidationError):
            CostParameters(0, 0, 0, 0, 0, 0, 0.8, 0)


class TestNetworkCost:
    def test_base_point(self, net):
        X = np.array([33.333, 33.333, 16.667, 16.667])
        d = np.array([7.14, 3, 9, 9]); b = np.array([0, 0, 0, 1.14]); c = np.array([3, 2.312, 8, 6])
        by_hand = 0.006 * 5130 + 0.098 * 4104 + 0.016 * X.sum() + 0.005 * X @ (d + b) + 0.5 * X @ c
        value = total_cost_network(net.costs, net.routes, X, 4104, 5130)
        assert value == pytest.approx(by_hand, rel=1e-12)
        assert value == pytest.approx(643, abs=1)

    def test_zero(self, net):
        assert total_cost_network(net.costs, net.routes, np.zeros(4), 0, 0) == 0

    def test_single_route_reduces_to_aggregate(self, net):
        from dataclasses import replace
        route = replace(net.routes[0], d_r=GEOM.a, b_r=GEOM.b, c_r=GEOM.c)
        assert total_cost_network(COSTS, [route], [80.0], 3000, 3750) == pytest.approx(
            total_cost_aggregate(COSTS, GEOM, 80.0, 3000, 3750), rel=1e-14)

    def test_shape_checked(self, net):
        with pytest.raises(ContractError):
            total_cost_network(net.costs, net.routes, [1.0, 2.0], 0, 0)
        with pytest.raises(ContractError):
            total_cost_network(net.costs, [], [], 0, 0)


class TestWelfare:
    def test_network_base(self, net):
        w = welfare(net, net.base)
        assert w.collective_wtp == pytest.approx(2550, abs=2)
        assert w.collective_wtp - 631 == pytest.approx(1919, abs=2)

    def test_identities_exact(self, net, agg):
        for sc in (net, agg):
            w = welfare(sc, sc.base)
            assert w.collective_wtp == w.gross_wtp - w.time_cost
            assert w.social_welfare == w.collective_wtp - w.operator_cost

    def test_zero_demand(self, agg):
        p = OperatingPoint(X=0.0, R=0.0, F=0.0, p=1.0, q=1.2, k=3.8, G=6.0, O=0.0)
        w = welfare(agg, p)
        assert w.gross_wtp == 0 and w.time_cost == 0
        assert w.operator_cost == agg.costs.c0

    @given(st.floats(0, 1e4), st.floats(0, 1e4), st.floats(0, 1e4))
    def test_breakdown_identity(self, g, t, c):
        w = WelfareBreakdown.from_parts(g, t, c)
        assert w.collective_wtp == g - t
        assert w.social_welfare == w.collective_wtp - c
