"""Market instances, equilibrium containers, residual verification, and duality maps.

Four market kinds: fisher/lindahl crossed with goods/chores. Every item has
unit supply. Verification is residual-based and never mutates its inputs;
a candidate is certified iff all three gap components are within tolerance.
"""

import numpy as np

from . import utilities
from ._util import parallel_map

FISHER = "fisher"
LINDAHL = "lindahl"
GOODS = "goods"
CHORES = "chores"

DEFAULT_TOL = 1e-6


def _nonneg_array(arr, name, ndim):
    arr = np.asarray(arr, dtype=float)
    if arr.ndim != ndim:
        raise ValueError("%s must be %d-dimensional" % (name, ndim))
    if not np.all(np.isfinite(arr)):
        raise ValueError("%s must be finite" % name)
    if arr.size and arr.min() < -1e-9:
        raise ValueError("%s must be nonnegative" % name)
    return np.maximum(arr, 0.0)


class MarketInstance:
    """n agents with budgets and one utility (goods) or disutility (chores) family each."""

    def __init__(self, market, items, budgets, families):
        if market not in (FISHER, LINDAHL):
            raise ValueError("market must be %r or %r" % (FISHER, LINDAHL))
        if items not in (GOODS, CHORES):
            raise ValueError("items must be %r or %r" % (GOODS, CHORES))
        budgets = np.asarray(budgets, dtype=float)
        if budgets.ndim != 1 or budgets.size == 0:
            raise ValueError("budgets must be a nonempty vector")
        if np.any(budgets <= 0) or not np.all(np.isfinite(budgets)):
            raise ValueError("budgets must be positive reals")
        families = list(families)
        if len(families) != budgets.size:
            raise ValueError("need exactly one family per agent")
        base = utilities.UtilityFamily if items == GOODS else utilities.DisutilityFamily
        for i, fam in enumerate(families):
            if not isinstance(fam, base):
                raise ValueError("agent %d: family type does not fit a %s market" % (i, items))
        sizes = {fam.m for fam in families}
        if len(sizes) != 1:
            raise ValueError("families disagree on the number of items")
        self.market = market
        self.items = items
        self.budgets = budgets
        self.families = families
        self.n = int(budgets.size)
        self.m = int(sizes.pop())

    @classmethod
    def fisher_goods(cls, budgets, families):
        return cls(FISHER, GOODS, budgets, families)

    @classmethod
    def lindahl_goods(cls, budgets, families):
        return cls(LINDAHL, GOODS, budgets, families)

    @classmethod
    def fisher_chores(cls, budgets, families):
        return cls(FISHER, CHORES, budgets, families)

    @classmethod
    def lindahl_chores(cls, budgets, families):
        return cls(LINDAHL, CHORES, budgets, families)

    def __repr__(self):
        return "MarketInstance(%s-%s, n=%d, m=%d)" % (self.market, self.items, self.n, self.m)


class FisherEquilibrium:
    """Per-agent allocations (n x m) and a common price vector (m)."""

    def __init__(self, allocations, prices):
        self.allocations = _nonneg_array(allocations, "allocations", 2)
        self.prices = _nonneg_array(prices, "prices", 1)

    def to_dict(self):
        return {"allocations": self.allocations.tolist(), "prices": self.prices.tolist()}

    def __repr__(self):
        return "FisherEquilibrium(prices=%s)" % self.prices


class LindahlEquilibrium:
    """A common allocation (m) and per-agent personalized prices (n x m)."""

    def __init__(self, allocation, prices):
        self.allocation = _nonneg_array(allocation, "allocation", 1)
        self.prices = _nonneg_array(prices, "prices", 2)

    def to_dict(self):
        return {"allocation": self.allocation.tolist(), "prices": self.prices.tolist()}

    def __repr__(self):
        return "LindahlEquilibrium(allocation=%s)" % self.allocation


def equilibrium_from_dict(obj):
    if not isinstance(obj, dict):
        raise ValueError("equilibrium must be a JSON object")
    if "allocations" in obj:
        return FisherEquilibrium(obj["allocations"], obj["prices"])
    if "allocation" in obj:
        return LindahlEquilibrium(obj["allocation"], obj["prices"])
    raise ValueError("equilibrium object needs 'allocations' or 'allocation'")


class ResidualReport:
    """Max-norm residuals of one equilibrium candidate."""

    def __init__(self, affordability_gap, optimality_gap, clearing_gap, tolerance):
        self.affordability_gap = float(affordability_gap)
        self.optimality_gap = float(optimality_gap)
        self.clearing_gap = float(clearing_gap)
        self.tolerance = float(tolerance)
        self.certified = (
            self.affordability_gap <= self.tolerance
            and self.optimality_gap <= self.tolerance
            and self.clearing_gap <= self.tolerance
        )

    def to_dict(self):
        return {
            "affordability_gap": self.affordability_gap,
            "optimality_gap": self.optimality_gap,
            "clearing_gap": self.clearing_gap,
            "tolerance": self.tolerance,
            "certified": self.certified,
        }

    def __repr__(self):
        return (
            "ResidualReport(afford=%.3g, opt=%.3g, clear=%.3g, certified=%s)"
            % (self.affordability_gap, self.optimality_gap, self.clearing_gap, self.certified)
        )


def _relative_shortfall(best, achieved):
    # how far achieved falls below best, scale-free; +inf best means uncertifiable
    if not np.isfinite(best):
        return 1.0
    return max(best - achieved, 0.0) / max(best, 1e-12)


def _relative_excess(lowest, achieved):
    if not np.isfinite(lowest):
        return 1.0
    return max(achieved - lowest, 0.0) / max(lowest, 1e-12)


def _require(cond, message):
    if not cond:
        raise ValueError(message)


def verify_fisher(inst, eq, tol=DEFAULT_TOL):
    """Budget feasibility, demand optimality, and market clearing for Fisher goods."""
    _require(inst.market == FISHER and inst.items == GOODS, "needs a fisher-goods instance")
    _require(isinstance(eq, FisherEquilibrium), "needs a FisherEquilibrium")
    x = eq.allocations
    p = eq.prices
    _require(x.shape == (inst.n, inst.m), "allocation shape mismatch")
    _require(p.shape == (inst.m,), "price shape mismatch")
    afford = float(np.max(np.maximum(x @ p - inst.budgets, 0.0)))

    def agent_gap(i):
        best = inst.families[i].indirect_utility(p, inst.budgets[i])
        return _relative_shortfall(best, inst.families[i].value(x[i]))

    opt = max(parallel_map(agent_gap, range(inst.n)))
    supply = x.sum(axis=0)
    clear = np.where(p > tol, np.abs(supply - 1.0), np.maximum(supply - 1.0, 0.0))
    return ResidualReport(afford, opt, float(np.max(clear)), tol)


def verify_lindahl(inst, eq, tol=DEFAULT_TOL):
    """Personalized budgets, optimality of the shared allocation, and unit price sums."""
    _require(inst.market == LINDAHL and inst.items == GOODS, "needs a lindahl-goods instance")
    _require(isinstance(eq, LindahlEquilibrium), "needs a LindahlEquilibrium")
    x = eq.allocation
    prices = eq.prices
    _require(x.shape == (inst.m,), "allocation shape mismatch")
    _require(prices.shape == (inst.n, inst.m), "price shape mismatch")
    afford = float(np.max(np.maximum(prices @ x - inst.budgets, 0.0)))

    def agent_gap(i):
        best = inst.families[i].indirect_utility(prices[i], inst.budgets[i])
        return _relative_shortfall(best, inst.families[i].value(x))

    opt = max(parallel_map(agent_gap, range(inst.n)))
    total = prices.sum(axis=0)
    clear = np.where(x > tol, np.abs(total - 1.0), np.maximum(total - 1.0, 0.0))
    return ResidualReport(afford, opt, float(np.max(clear)), tol)


def trim_zero_price_chores(prices, allocations, tol=DEFAULT_TOL):
    """Scale down over-assigned chores whose price is (numerically) zero."""
    x = np.array(allocations, dtype=float)
    total = x.sum(axis=0)
    over = (prices <= tol) & (total > 1.0)
    if np.any(over):
        x[:, over] /= total[over]
    return x


def verify_fisher_chores(inst, eq, tol=DEFAULT_TOL):
    """Exact earning, disutility minimality, and full assignment for Fisher chores."""
    _require(inst.market == FISHER and inst.items == CHORES, "needs a fisher-chores instance")
    _require(isinstance(eq, FisherEquilibrium), "needs a FisherEquilibrium")
    p = eq.prices
    _require(eq.allocations.shape == (inst.n, inst.m), "allocation shape mismatch")
    _require(p.shape == (inst.m,), "price shape mismatch")
    x = trim_zero_price_chores(p, eq.allocations, tol)
    earning = float(np.max(np.abs(x @ p - inst.budgets)))

    def agent_gap(i):
        lowest = inst.families[i].indirect(p, inst.budgets[i])
        return _relative_excess(lowest, inst.families[i].value(x[i]))

    opt = max(parallel_map(agent_gap, range(inst.n)))
    clear = float(np.max(np.abs(x.sum(axis=0) - 1.0)))
    return ResidualReport(earning, opt, clear, tol)


def verify_lindahl_chores(inst, eq, tol=DEFAULT_TOL):
    """Exact earning per agent, disutility minimality, and unit wage split per chore."""
    _require(inst.market == LINDAHL and inst.items == CHORES, "needs a lindahl-chores instance")
    _require(isinstance(eq, LindahlEquilibrium), "needs a LindahlEquilibrium")
    x = eq.allocation
    prices = eq.prices
    _require(x.shape == (inst.m,), "allocation shape mismatch")
    _require(prices.shape == (inst.n, inst.m), "price shape mismatch")
    earning = float(np.max(np.abs(prices @ x - inst.budgets)))

    def agent_gap(i):
        lowest = inst.families[i].indirect(prices[i], inst.budgets[i])
        return _relative_excess(lowest, inst.families[i].value(x))

    opt = max(parallel_map(agent_gap, range(inst.n)))
    clear = float(np.max(np.abs(prices.sum(axis=0) - 1.0)))
    return ResidualReport(earning, opt, clear, tol)


def verify_equilibrium(inst, eq, tol=DEFAULT_TOL):
    """Dispatch to the verifier matching the instance kind."""
    if inst.items == GOODS:
        return verify_fisher(inst, eq, tol) if inst.market == FISHER else verify_lindahl(inst, eq, tol)
    return (
        verify_fisher_chores(inst, eq, tol)
        if inst.market == FISHER
        else verify_lindahl_chores(inst, eq, tol)
    )


def dualize(inst):
    """Swap Fisher and Lindahl by dualizing every agent's family; budgets carry over."""
    market = LINDAHL if inst.market == FISHER else FISHER
    duals = [fam.dual(B) for fam, B in zip(inst.families, inst.budgets)]
    return MarketInstance(market, inst.items, inst.budgets.copy(), duals)


def dualize_equilibrium(inst, eq):
    """Map an equilibrium of inst to one of dualize(inst): allocation and price roles swap."""
    if inst.market == LINDAHL:
        _require(isinstance(eq, LindahlEquilibrium), "lindahl instance needs a LindahlEquilibrium")
        return FisherEquilibrium(allocations=eq.prices, prices=eq.allocation)
    _require(isinstance(eq, FisherEquilibrium), "fisher instance needs a FisherEquilibrium")
    return LindahlEquilibrium(allocation=eq.prices, prices=eq.allocations)


# ---------------------------------------------------------------------------
# JSON schema

def instance_to_dict(inst):
    return {
        "market": inst.market,
        "items": inst.items,
        "goods": inst.m,
        "agents": [
            {"budget": float(b), "utility": fam.to_dict()}
            for b, fam in zip(inst.budgets, inst.families)
        ],
    }


def instance_from_dict(obj):
    """Parse and validate an instance document; errors carry a JSON pointer."""
    if not isinstance(obj, dict):
        raise ValueError("$: instance must be a JSON object")
    for field in ("market", "items", "goods", "agents"):
        if field not in obj:
            raise ValueError("$.%s: missing required field" % field)
    market = obj["market"]
    items = obj["items"]
    if market not in (FISHER, LINDAHL):
        raise ValueError("$.market: expected 'fisher' or 'lindahl', got %r" % (market,))
    if items not in (GOODS, CHORES):
        raise ValueError("$.items: expected 'goods' or 'chores', got %r" % (items,))
    m = obj["goods"]
    if not isinstance(m, int) or m < 1:
        raise ValueError("$.goods: expected a positive integer, got %r" % (m,))
    agents = obj["agents"]
    if not isinstance(agents, list) or not agents:
        raise ValueError("$.agents: expected a nonempty array")
    budgets = []
    families = []
    for k, agent in enumerate(agents):
        path = "$.agents[%d]" % k
        if not isinstance(agent, dict):
            raise ValueError("%s: expected an object" % path)
        if "budget" not in agent:
            raise ValueError("%s.budget: missing required field" % path)
        budget = agent["budget"]
        if not isinstance(budget, (int, float)) or not budget > 0:
            raise ValueError("%s.budget: expected a positive number, got %r" % (path, budget))
        fam_obj = agent.get("utility", agent.get("disutility"))
        if fam_obj is None:
            raise ValueError("%s.utility: missing required field" % path)
        try:
            fam = utilities.family_from_dict(fam_obj, chores=(items == CHORES))
        except (ValueError, KeyError, TypeError) as exc:
            raise ValueError("%s.utility: %s" % (path, exc)) from exc
        if fam.m != m:
            raise ValueError(
                "%s.utility: family covers %d items but the instance declares %d"
                % (path, fam.m, m)
            )
        budgets.append(float(budget))
        families.append(fam)
    try:
        return MarketInstance(market, items, budgets, families)
    except ValueError as exc:
        raise ValueError("$: %s" % exc) from exc
