import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from drtwelfare.calibration import (
    Check, calibrate_d0, consistency_report, derive_fleet, derive_seats, time_value,
)
from drtwelfare.errors import DomainError
from drtwelfare.model import demand_at


class TestD0:
    # (base trips, generalized cost, published scale)
    CASES = [
        (100.0, 5.37 + 1.20 + 3.80, 3340),
        (33.333, 5.37 + 1.20 + 3.80, 1113),
        (33.333, 5.37 + 1.20 + 1.60, 778),
        (16.667, 5.37 + 1.20 + 4.79, 638),
        (16.667, 5.37 + 1.20 + 5.40, 690),
    ]

    @pytest.mark.parametrize("X,G,published", CASES)
    def test_published_scales(self, X, G, published):
        assert calibrate_d0(X, G, 1.5) == pytest.approx(published, rel=0.01)

    def test_frozen_value(self):
        # 100 * 10.37 ** 1.5
        assert calibrate_d0(100, 10.37, 1.5) == pytest.approx(3339.3976, rel=1e-7)

    @given(st.floats(0.1, 1e4), st.floats(0.1, 100), st.floats(1.01, 5))
    def test_round_trip(self, X, G, d1):
        from drtwelfare.model import DemandCurve
        d0 = calibrate_d0(X, G, d1)
        assert demand_at(DemandCurve(d0, d1), G) == pytest.approx(X, rel=1e-12)

    @pytest.mark.parametrize("args", [(0, 10, 1.5), (100, 0, 1.5), (100, 10, 1.0)])
    def test_domain(self, args):
        with pytest.raises(DomainError):
            calibrate_d0(*args)


class TestDerived:
    def test_time_value(self):
        assert time_value(0.2, 6) == pytest.approx(1.2)
        assert time_value(0.2, 19) == pytest.approx(3.8)
        with pytest.raises(DomainError):
            time_value(-0.1, 6)

    def test_seats_network_base(self, net):
        X = np.asarray(net.base.X)
        assert derive_seats(4104, net.routes, X) == pytest.approx(10.0, abs=0.01)
        assert net.costs.s == pytest.approx(9.99993, abs=1e-5)

    def test_seats_degenerate(self, net):
        with pytest.raises(DomainError):
            derive_seats(4104, net.routes, np.zeros(4))

    def test_fleet(self):
        assert derive_fleet(4104, 0.8) == pytest.approx(5130)
        with pytest.raises(DomainError):
            derive_fleet(4104, 0.0)


class TestAggregateCalibration:
    def test_report_ok(self, agg_file):
        assert agg_file.consistency().ok

    def test_anchor_identity(self, agg):
        cr = consistency_report(agg)
        chk = cr["anchor identity c*s vs a/O"]
        assert chk.passed and chk.tolerance == 0.001
        assert 4.104 * 10 == pytest.approx(6.38 / 0.15546, rel=1e-3)

    def test_occupancy_identity(self, agg):
        assert consistency_report(agg)["occupancy identity"].computed == 0.155
        assert agg.base.O == pytest.approx(0.155458, abs=1e-6)

    def test_base_cells(self, agg):
        cr = consistency_report(agg)
        assert cr["base cwp"].computed == pytest.approx(2609, rel=0.005)
        assert cr["base occupancy"].computed == pytest.approx(0.1555, abs=0.0005)
        assert cr["d0"].passed

    def test_cost_discrepancy_is_informational(self, agg):
        cr = consistency_report(agg)
        assert cr["base cost"].informational and not cr["base cost"].passed
        assert cr["base welfare (published cost)"].passed

    def test_surfaces_anchored(self, agg):
        b = agg.base
        assert agg.Q(b.X, b.R) == pytest.approx(1.2, rel=1e-15)
        assert agg.K(b.X, b.R) == pytest.approx(3.8)
        assert agg.O(b.X, b.R) == 0.155

    def test_unknown_check(self, agg):
        with pytest.raises(KeyError):
            consistency_report(agg)["nope"]


class TestNetworkCalibration:
    def test_report_ok(self, net_file):
        cr = net_file.consistency()
        assert cr.ok
        for rid in ("AB", "BC", "AC", "ABC"):
            assert cr[f"d0 {rid}"].passed
            assert cr[f"demand round trip {rid}"].passed

    def test_base_welfare(self, net):
        cr = consistency_report(net)
        assert cr["base cwp"].computed == pytest.approx(2550, abs=2)
        assert cr["base welfare (published cost)"].computed == pytest.approx(1920, abs=2)

    def test_route_surfaces(self, net):
        b = net.base
        np.testing.assert_allclose(net.q(b.X, b.R), 1.2)
        np.testing.assert_allclose(net.k(b.X, b.R), [3.80, 1.60, 4.79, 5.40])


class TestCheck:
    def test_deviation(self):
        assert Check("x", 101, 100, 0.01).passed
        assert not Check("x", 102, 100, 0.01).passed
        assert Check("zero", 1e-13, 0, 1e-12).passed


class TestDerivedExamples:
    def test_fleet_examples(self):
        assert derive_fleet(1234.5, 1.0) == 1234.5
        assert derive_fleet(0.0, 0.8) == 0.0

    def test_time_value_zero(self):
        assert time_value(0.2, 0) == 0

    def test_seats_single_route_exact(self, net):
        route = net.routes[0]
        assert derive_seats(7 * 3.0 * 10.0, [route], [7.0]) == pytest.approx(10.0, rel=1e-15)

    def test_seats_homogeneous(self, net):
        X = np.asarray(net.base.X)
        assert derive_seats(2 * 4104, net.routes, X) == pytest.approx(
            2 * derive_seats(4104, net.routes, X), rel=1e-15)

    def test_network_total_demand(self, net):
        assert float(np.sum(net.base.X)) == pytest.approx(100.0, abs=1e-9)

    def test_zero_marginals_constant_surfaces(self):
        from conftest import fixture_doc, from_doc
        doc = fixture_doc("aggregate-table1")
        doc["marginals"] = {k: 0.0 for k in doc["marginals"]}
        sc = from_doc(doc).model
        for X, R in ((50, 2000), (300, 9000)):
            assert sc.Q(X, R) == pytest.approx(1.2, rel=1e-15)
            assert sc.K(X, R) == pytest.approx(3.8, rel=1e-15)
            assert sc.O(X, R) == 0.155

    def test_default_occupancy_gradients(self, agg):
        assert agg.dO_dX == 0.00003 and agg.dO_dR == 0.0
        assert agg.q_surface.gradients == (0.003, -0.00008)
