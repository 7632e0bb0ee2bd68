"""Verifier gap channels, the Fisher/Lindahl mapping, and instance I/O."""

import numpy as np
import pytest

import helpers as H
from marketeq import chores, market, oracle, programs, utilities as U


def linear_lindahl():
    return market.MarketInstance(
        market.LINDAHL,
        market.GOODS,
        np.array([1.0, 2.0]),
        [U.Linear([2.0, 1.0]), U.Linear([1.0, 3.0])],
    )


# ---------------------------------------------------------------------------
# verifiers


def test_verify_fisher_accepts_and_rejects():
    inst = market.MarketInstance(
        market.FISHER,
        market.GOODS,
        np.array([1.0, 1.0]),
        [U.Linear([2.0, 1.0]), U.Linear([1.0, 2.0])],
    )
    good = market.FisherEquilibrium([[1.0, 0.0], [0.0, 1.0]], [1.0, 1.0])
    assert market.verify_fisher(inst, good).certified

    overspend = market.FisherEquilibrium([[1.0, 0.0], [0.0, 1.0]], [2.0, 1.0])
    rep = market.verify_fisher(inst, overspend)
    assert not rep.certified and rep.affordability_gap > 0.5

    swapped = market.FisherEquilibrium([[0.0, 1.0], [1.0, 0.0]], [1.0, 1.0])
    rep = market.verify_fisher(inst, swapped)
    assert not rep.certified and rep.optimality_gap > 0.4

    unsold = market.FisherEquilibrium([[0.5, 0.0], [0.0, 1.0]], [1.0, 1.0])
    rep = market.verify_fisher(inst, unsold)
    assert not rep.certified and rep.clearing_gap == pytest.approx(0.5)


def test_verify_lindahl_accepts_and_rejects():
    inst = H.divergence_pair()
    good = market.LindahlEquilibrium([0.5, 0.5], [[2 / 3, 1 / 3], [1 / 3, 2 / 3]])
    assert market.verify_lindahl(inst, good).certified

    # price columns summing past one on a funded good break the profit condition
    heavy = market.LindahlEquilibrium([0.5, 0.5], [[2 / 3, 1 / 3], [2 / 3, 2 / 3]])
    rep = market.verify_lindahl(inst, heavy)
    assert not rep.certified and rep.clearing_gap > 0.3

    # starving an agent of its optimal bundle shows up as an optimality gap
    skew = market.LindahlEquilibrium([1.0, 0.0], [[2 / 3, 1 / 3], [1 / 3, 2 / 3]])
    assert market.verify_lindahl(inst, skew).optimality_gap > 0


def test_verify_fisher_chores_trims_free_chores():
    # chore 1 is unpriced and over-assigned; agents can always shed excess work
    x = market.trim_zero_price_chores(np.array([1.0, 0.0]), np.array([[1.0, 2.0]]))
    np.testing.assert_allclose(x, [[1.0, 1.0]])

    # under a max-ratio disutility the trimmed free work is also optimal
    inst = market.MarketInstance(
        market.FISHER, market.CHORES, np.array([1.0]), [U.MaxRatio([1.0, 1.0])]
    )
    eq = market.FisherEquilibrium([[1.0, 2.0]], [1.0, 0.0])
    assert market.verify_fisher_chores(inst, eq).certified

    # a linear agent working the unpaid chore stays suboptimal after the trim
    lin = market.MarketInstance(
        market.FISHER, market.CHORES, np.array([1.0]), [U.LinearDisutility([1.0, 1.0])]
    )
    rep = market.verify_fisher_chores(lin, eq)
    assert not rep.certified and rep.optimality_gap == pytest.approx(1.0)


def test_verify_chores_earning_is_exact():
    inst = H.chores_2x2()
    under = market.FisherEquilibrium([[0.5, 0.0], [0.0, 1.0]], [1.0, 1.0])
    rep = market.verify_fisher_chores(inst, under)
    # underearning is a violation for chores even though overspending is fine for goods
    assert rep.affordability_gap == pytest.approx(0.5)


# ---------------------------------------------------------------------------
# duality mapping


def test_dualize_swaps_market_and_keeps_budgets():
    inst = linear_lindahl()
    dual = market.dualize(inst)
    assert dual.market == market.FISHER and dual.items == market.GOODS
    np.testing.assert_allclose(dual.budgets, inst.budgets)
    assert all(isinstance(fam, U.Leontief) for fam in dual.families)
    assert market.dualize(dual).market == market.LINDAHL


def test_dualize_twice_keeps_preferences():
    inst = linear_lindahl()
    back = market.dualize(market.dualize(inst))
    rng = np.random.default_rng(0)
    for fam, orig in zip(back.families, inst.families):
        assert type(fam) is type(orig)
        for _ in range(10):
            p = rng.uniform(0.3, 2.0, inst.m)
            np.testing.assert_allclose(
                U.marshallian_demand(fam, p, 1.5),
                U.marshallian_demand(orig, p, 1.5),
                atol=1e-10,
            )


def test_dualize_equilibrium_swaps_roles():
    inst = linear_lindahl()
    eq = market.LindahlEquilibrium([1.0, 2.0], [[0.4, 0.6], [0.6, 0.4]])
    deq = market.dualize_equilibrium(inst, eq)
    assert isinstance(deq, market.FisherEquilibrium)
    np.testing.assert_allclose(deq.prices, eq.allocation)
    np.testing.assert_allclose(deq.allocations, eq.prices)


def test_duality_round_trip_certifies():
    rng = np.random.default_rng(1)
    for _ in range(5):
        inst = H.random_goods_instance(
            rng, market.FISHER, 3, 3, kinds=("leontief", "ces", "cobbdouglas")
        )
        res = oracle.oracle_eg(inst, precision=1e-7)
        assert market.verify_fisher(inst, res.point, 1e-5).certified
        mapped = market.dualize_equilibrium(inst, res.point)
        assert market.verify_lindahl(market.dualize(inst), mapped, 1e-5).certified


def test_lindahl_supply_equals_total_budget():
    rng = np.random.default_rng(2)
    for _ in range(5):
        inst = H.random_goods_instance(
            rng, market.LINDAHL, 3, 3, kinds=("ces", "cobbdouglas")
        )
        res = oracle.oracle_nsw_lindahl(inst, precision=1e-7)
        x = np.asarray(res.point)
        eq = market.LindahlEquilibrium(x, programs.lindahl_prices(inst, x))
        assert market.verify_lindahl(inst, eq, 1e-5).certified
        assert float(x.sum()) == pytest.approx(
            float(inst.budgets.sum()), abs=inst.n * inst.m * 1e-8
        )


def test_lindahl_chores_equilibrium_is_weakly_pareto_optimal():
    inst = market.MarketInstance(
        market.LINDAHL,
        market.CHORES,
        np.array([1.0, 1.5]),
        [U.LinearDisutility([1.0, 2.0]), U.LinearDisutility([2.0, 1.0])],
    )
    res = chores.solve_lindahl_chores(inst)
    assert res.certified
    x = res.equilibrium.allocation
    total = float(x.sum())
    base = [U.evaluate(fam, x) for fam in inst.families]
    for t in np.linspace(0.0, total, 33):
        y = np.array([t, total - t])
        better = [U.evaluate(fam, y) < d - 1e-9 for fam, d in zip(inst.families, base)]
        assert not all(better)


# ---------------------------------------------------------------------------
# serialization


def test_instance_round_trip():
    for inst in (linear_lindahl(), H.chores_2x2(), H.tree_instance()):
        back = market.instance_from_dict(market.instance_to_dict(inst))
        assert back.market == inst.market and back.items == inst.items
        np.testing.assert_allclose(back.budgets, inst.budgets)
        assert all(a == b for a, b in zip(back.families, inst.families))


def test_instance_parse_errors_carry_pointers():
    with pytest.raises(ValueError, match=r"\$\.market"):
        market.instance_from_dict({"market": "barter", "items": "goods", "goods": 1, "agents": []})
    with pytest.raises(ValueError, match=r"\$\.goods"):
        market.instance_from_dict(
            {"market": "fisher", "items": "goods", "goods": 0, "agents": [{}]}
        )
    with pytest.raises(ValueError, match=r"\$\.agents\[0\]"):
        market.instance_from_dict(
            {"market": "fisher", "items": "goods", "goods": 1, "agents": [{"budget": 1.0}]}
        )


def test_equilibrium_round_trip():
    eq = market.FisherEquilibrium([[1.0, 0.0]], [0.5, 0.5])
    back = market.equilibrium_from_dict(eq.to_dict())
    assert isinstance(back, market.FisherEquilibrium)
    np.testing.assert_allclose(back.allocations, eq.allocations)

    leq = market.LindahlEquilibrium([1.0, 2.0], [[0.4, 0.6]])
    back = market.equilibrium_from_dict(leq.to_dict())
    assert isinstance(back, market.LindahlEquilibrium)
    np.testing.assert_allclose(back.prices, leq.prices)
