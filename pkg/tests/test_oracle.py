"""Reference solvers: grid demand search, EG maximizer, NSW maximizer."""

import numpy as np
import pytest

import helpers as H
from marketeq import chores, market, oracle, utilities as U


def test_lambert_w_values():
    assert oracle.lambert_w(0.0) == 0.0
    assert oracle.lambert_w(np.e) == pytest.approx(1.0, abs=1e-14)
    assert oracle.lambert_w(3.0 * np.e) == pytest.approx(H.LAMBERT_W_3E, abs=1e-14)
    for z in np.geomspace(1e-6, 1e6, 25):
        w = oracle.lambert_w(z)
        assert w * np.exp(w) == pytest.approx(z, rel=1e-12)
    with pytest.raises(ValueError):
        oracle.lambert_w(-1.0)


def test_demand_oracle_matches_goods_closed_forms():
    rng = np.random.default_rng(0)
    fams = [
        U.CES([1.0, 2.0, 1.5], -2.0),
        U.CES([2.0, 1.0, 1.0], 0.5),
        U.CobbDouglas([1.0, 3.0, 2.0]),
        U.Leontief([1.0, 0.5, 2.0]),
    ]
    for fam in fams:
        for _ in range(3):
            p = rng.uniform(0.5, 2.0, 3)
            B = float(rng.uniform(0.5, 2.0))
            res = oracle.oracle_demand(fam, p, B, levels=20)
            assert res.method == "grid-refine"
            assert res.value == pytest.approx(fam.indirect_utility(p, B), rel=1e-6)
            np.testing.assert_allclose(res.point, fam.demand(p, B), rtol=3e-3, atol=3e-3)


def test_demand_oracle_linear_value():
    fam = U.Linear([3.0, 1.0])
    res = oracle.oracle_demand(fam, np.array([1.0, 2.0]), 4.0)
    assert res.value == pytest.approx(12.0, rel=1e-8)
    np.testing.assert_allclose(res.point, [4.0, 0.0], atol=1e-6)


def test_demand_oracle_matches_chores_closed_forms():
    rng = np.random.default_rng(1)
    fams = [
        U.LinearDisutility([1.0, 2.5, 0.8]),
        U.MaxRatio([1.0, 2.0, 0.5]),
        U.ConvexCES([1.0, 1.5, 0.7], 2.0),
    ]
    for fam in fams:
        for _ in range(3):
            p = rng.uniform(0.5, 2.0, 3)
            B = float(rng.uniform(0.5, 2.0))
            res = oracle.oracle_demand(fam, p, B, levels=20)
            assert res.value == pytest.approx(chores.indirect_disutility(fam, p, B), rel=1e-6)
            np.testing.assert_allclose(
                res.point, chores.roy_chores(fam, p, B), rtol=3e-3, atol=3e-3
            )


def test_demand_oracle_grid_refinement_converges():
    fam = U.CES([1.0, 2.0], -1.0)
    p = np.array([1.0, 1.3])
    truth = fam.indirect_utility(p, 1.0)
    coarse = oracle.oracle_demand(fam, p, 1.0, levels=4)
    fine = oracle.oracle_demand(fam, p, 1.0, levels=12)
    assert abs(fine.value - truth) <= abs(coarse.value - truth)
    assert fine.precision < coarse.precision
    assert abs(fine.value - truth) < 1e-9


def test_demand_oracle_rejections():
    with pytest.raises(ValueError):
        oracle.oracle_demand(U.Linear(np.ones(5)), np.ones(5), 1.0)
    with pytest.raises(ValueError):
        oracle.oracle_demand(U.Linear([1.0, 1.0]), np.array([1.0, 0.0]), 1.0)
    with pytest.raises(ValueError):
        oracle.oracle_demand(U.MaxRatio([1.0, 1.0]), np.zeros(2), 1.0)


def test_eg_oracle_routes_and_rejections():
    rng = np.random.default_rng(2)
    linear = H.random_goods_instance(rng, market.FISHER, 3, 3, kinds=("linear",))
    res = oracle.oracle_eg(linear, precision=1e-7)
    assert res.method == "eg-primal"
    assert res.precision <= 1e-7
    assert market.verify_fisher(linear, res.point, 1e-5).certified

    smooth = H.random_goods_instance(rng, market.FISHER, 3, 3, kinds=("ces", "leontief"))
    res = oracle.oracle_eg(smooth, precision=1e-7)
    assert res.method == "eg-dual"
    assert market.verify_fisher(smooth, res.point, 1e-5).certified

    mixed = market.MarketInstance(
        market.FISHER,
        market.GOODS,
        np.ones(2),
        [U.Linear([1.0, 2.0]), U.CES([1.0, 1.0], 0.5)],
    )
    with pytest.raises(U.UnsupportedFamily):
        oracle.oracle_eg(mixed)
    with pytest.raises(ValueError):
        oracle.oracle_eg(H.divergence_pair())  # lindahl instance


def test_nsw_oracle_divergent_example():
    res = oracle.oracle_nsw_lindahl(H.divergence_pair(), precision=1e-8)
    assert res.method == "nsw-pgd"
    np.testing.assert_allclose(res.point, H.DIVERGENCE_OPT, atol=1e-4)


def test_nsw_oracle_grid_route_on_kinked_pair():
    inst = H.tight_ratio_instance(1e-3)
    res = oracle.oracle_nsw_lindahl(inst)
    assert res.method == "nsw-grid"
    np.testing.assert_allclose(res.point, [H.E, 0.0], atol=2e-3)


def test_nsw_oracle_certified_by_first_order_prices():
    from marketeq import programs

    rng = np.random.default_rng(3)
    inst = H.random_goods_instance(rng, market.LINDAHL, 3, 3, kinds=("ces", "cobbdouglas"))
    res = oracle.oracle_nsw_lindahl(inst, precision=1e-7)
    prices = programs.lindahl_prices(inst, np.asarray(res.point))
    eq = market.LindahlEquilibrium(np.asarray(res.point), prices)
    assert market.verify_lindahl(inst, eq, 1e-5).certified
