"""Shared builders and property checks for the test suite."""

import numpy as np

from marketeq import dynamics, market, utilities


E = float(np.e)

# value of the worked three-good tree at the all-ones bundle: 776 ** (10 / 7)
TREE_VALUE_AT_ONES = 13439.214557272837

# tight-approximation ratios for the two-agent bound family, eps -> ratio
TIGHT_RATIOS = {
    1e-2: 0.696568158151366952,
    1e-3: 0.692638101355927670,
    1e-4: 0.692244382175298165,
}
RATIO_LIMIT = (1.0 / E) ** (1.0 / E)

# Lambert W at 3e, used by the closed form of the divergence economy optimum
LAMBERT_W_3E = 1.61764246677607430897
DIVERGENCE_OPT = (0.145449280903873828, 0.854550719096126172)


def worked_tree():
    """Two-level tree: goods 0,1 nest at rho=0.2, joined with good 2 at rho=0.7."""
    inner = utilities.Nest(0.2, [(3.0, 0), (1.0, 1)])
    return utilities.NestedCES(utilities.Nest(0.7, [(6.0, inner), (8.0, 2)]))


def complement_tree():
    inner = utilities.Nest(0.3, [(2.0, 0), (1.0, 2)])
    return utilities.NestedCES(utilities.Nest(-0.5, [(1.0, inner), (2.0, 1)]))


def tree_instance(market_kind=market.FISHER):
    return market.MarketInstance(
        market_kind, market.GOODS, np.array([1.0, 2.0]), [worked_tree(), complement_tree()]
    )


def divergence_pair():
    """Two goods, one linear and one log agent; equilibrium and optimum split apart."""
    fams = [
        utilities.Linear([2.0, 1.0]),
        utilities.LogLinear([1.0, 2.0], offset=0.0),
    ]
    return market.MarketInstance(market.LINDAHL, market.GOODS, np.array([0.5, 0.5]), fams)


def tight_ratio_instance(eps):
    """Two-agent family whose equilibrium NSW ratio tends to (1/e)^(1/e) as eps -> 0."""
    eps = float(eps)
    piecewise = utilities.MinAffine(
        [
            [1.0 / E, 1.0 / (E - 1.0)],
            [eps, eps * E / (E - 1.0)],
            [0.0, eps / (E - 1.0)],
            [eps, eps / (E - 1.0)],
        ],
        [0.0, 1.0 - eps * E, 1.0, 1.0 - eps],
    )
    fams = [utilities.Linear([1.0, 0.0]), piecewise]
    return market.MarketInstance(market.LINDAHL, market.GOODS, np.array([1.0, E - 1.0]), fams)


def tight_ratio_equilibrium():
    """The lower-welfare equilibrium of the tight family: x = (1, e-1)."""
    allocation = np.array([1.0, E - 1.0])
    prices = np.array([[1.0, 0.0], [0.0, 1.0]])
    return market.LindahlEquilibrium(allocation, prices)


def chores_2x2():
    """Mirror-image linear chores; equilibrium p = (1, 1) with full specialization."""
    fams = [utilities.LinearDisutility([1.0, 2.0]), utilities.LinearDisutility([2.0, 1.0])]
    return market.MarketInstance(market.FISHER, market.CHORES, np.array([1.0, 1.0]), fams)


# ---------------------------------------------------------------------------
# random generators; every test passes its own seeded Generator


def coeffs(rng, m):
    return np.exp(rng.uniform(np.log(0.5), np.log(2.0), m))


def random_goods_family(rng, m, kinds=("linear", "leontief", "ces", "cobbdouglas")):
    kind = kinds[int(rng.integers(len(kinds)))]
    a = coeffs(rng, m)
    if kind == "linear":
        return utilities.Linear(a)
    if kind == "leontief":
        return utilities.Leontief(a)
    if kind == "cobbdouglas":
        return utilities.CobbDouglas(a)
    if kind == "nested":
        return random_tree(rng, m)
    rho = float(rng.choice([-2.0, -1.0, -0.5, 0.5, 0.9]))
    return utilities.CES(a, rho)


def random_tree(rng, m):
    """Random two-level tree touching every good."""
    order = rng.permutation(m)
    cut = int(rng.integers(1, m)) if m > 1 else 1
    rho_values = np.array([-1.0, -0.5, 0.3, 0.6])
    inner = utilities.Nest(
        float(rng.choice(rho_values)),
        [(float(w), int(j)) for w, j in zip(coeffs(rng, cut), order[:cut])],
    )
    children = [(float(rng.uniform(1.0, 3.0)), inner)]
    children += [(float(w), int(j)) for w, j in zip(coeffs(rng, m - cut), order[cut:])]
    if len(children) == 1:
        children.append((1.0, int(order[0])))  # unreachable for m > 1
    return utilities.NestedCES(utilities.Nest(float(rng.choice(rho_values)), children), m=m)


def random_goods_instance(rng, market_kind, n, m, kinds=("linear", "leontief", "ces", "cobbdouglas")):
    fams = [random_goods_family(rng, m, kinds) for _ in range(n)]
    budgets = rng.uniform(0.5, 2.0, n)
    return market.MarketInstance(market_kind, market.GOODS, budgets, fams)


def random_chores_family(rng, m, kinds=("linear", "maxratio", "ces")):
    kind = kinds[int(rng.integers(len(kinds)))]
    d = coeffs(rng, m)
    if kind == "linear":
        return utilities.LinearDisutility(d)
    if kind == "maxratio":
        return utilities.MaxRatio(d)
    return utilities.ConvexCES(d, 1.0 + rng.uniform(0.5, 2.0))


def random_chores_instance(rng, n, m, kinds=("linear", "maxratio", "ces")):
    fams = [random_chores_family(rng, m, kinds) for _ in range(n)]
    budgets = rng.uniform(0.5, 2.0, n)
    return market.MarketInstance(market.FISHER, market.CHORES, budgets, fams)


def simplex_points(rng, m, count, total=1.0):
    g = rng.exponential(1.0, (count, m))
    return total * g / g.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# invariant checks shared between the module suites and the acceptance gate


def max_homogeneity_gap(fam, rng, count=20):
    worst = 0.0
    for _ in range(count):
        x = rng.uniform(0.1, 2.0, fam.m)
        c = float(rng.uniform(0.05, 10.0))
        u = utilities.evaluate(fam, x)
        worst = max(worst, abs(utilities.evaluate(fam, c * x) - c * u) / max(abs(u), 1e-12))
    return worst


def max_gradient_gap(fam, rng, count=20, h=1e-6):
    worst = 0.0
    for _ in range(count):
        x = rng.uniform(0.5, 2.0, fam.m)
        g = utilities.gradient(fam, x)
        for j in range(fam.m):
            e = np.zeros(fam.m)
            e[j] = h
            fd = (utilities.evaluate(fam, x + e) - utilities.evaluate(fam, x - e)) / (2 * h)
            worst = max(worst, abs(g[j] - fd) / max(abs(fd), 1e-8))
    return worst


def max_budget_gap(fam, rng, count=20):
    worst = 0.0
    for _ in range(count):
        p = rng.uniform(0.2, 3.0, fam.m)
        B = float(rng.uniform(0.5, 5.0))
        x = utilities.marshallian_demand(fam, p, B)
        worst = max(worst, abs(float(p @ x) - B) / B)
    return worst


def max_involution_gap(fam, B, rng, count=20):
    double = utilities.dual_utility(utilities.dual_utility(fam, B), B)
    worst = 0.0
    for _ in range(count):
        p = rng.uniform(0.2, 3.0, fam.m)
        x0 = utilities.marshallian_demand(fam, p, B)
        x1 = utilities.marshallian_demand(double, p, B)
        worst = max(worst, float(np.max(np.abs(x0 - x1))))
    return worst


def max_neg_homogeneity_gap(fam, B, rng, count=20):
    from marketeq import chores

    worst = 0.0
    for _ in range(count):
        p = rng.uniform(0.2, 3.0, fam.m)
        c = float(rng.uniform(0.05, 10.0))
        h = chores.indirect_disutility(fam, p, B)
        hc = chores.indirect_disutility(fam, c * p, B)
        worst = max(worst, abs(hc - h / c) / abs(h / c))
    return worst


def dual_norm(fam, p):
    """Closed-form sup of <p, x> over d(x) <= 1 for the three chore families."""
    p = np.asarray(p, dtype=float)
    if isinstance(fam, utilities.LinearDisutility):
        return float(np.max(p / (fam.scale * fam.d)))
    if isinstance(fam, utilities.MaxRatio):
        return float(np.sum(p / (fam.scale * fam.d)))
    if fam.rho == 1.0:
        return float(np.max(p / (fam.scale * fam.d)))
    rh = fam.rho / (fam.rho - 1.0)
    s = float(np.power(fam.d, 1.0 - rh) @ np.power(p, rh))
    return s ** (1.0 / rh) / fam.scale


def max_dual_norm_gap(fam, B, rng, count=20):
    from marketeq import chores

    worst = 0.0
    for _ in range(count):
        p = rng.uniform(0.2, 3.0, fam.m)
        h = chores.indirect_disutility(fam, p, B)
        worst = max(worst, abs(dual_norm(fam, p) * h - B) / B)
    return worst


STEP_FUNCTIONS = {
    "prd-fisher-gs": dynamics.prd_fisher_gs_step,
    "prd-lindahl-tc": dynamics.prd_lindahl_tc_step,
    "prd-lindahl-gs": dynamics.prd_lindahl_gs_step,
    "prd-fisher-tc": dynamics.prd_fisher_tc_step,
    "prd-ces": dynamics.prd_ces_mirror_step,
}


def max_spend_conservation_gap(inst, rule, steps=50):
    b = dynamics.default_spending(inst)
    budgets = inst.budgets
    step = STEP_FUNCTIONS[rule]
    worst = 0.0
    for _ in range(steps):
        b = step(inst, b)
        worst = max(worst, float(np.max(np.abs(b.sum(axis=1) - budgets) / budgets)))
    return worst


def permutation_gap(inst, rule, steps=10, seed=3):
    """Relabeling goods and agents commutes with iterating the rule."""
    rng = np.random.default_rng(seed)
    gperm = rng.permutation(inst.m)
    aperm = rng.permutation(inst.n)
    permuted = market.MarketInstance(
        inst.market,
        inst.items,
        inst.budgets[aperm],
        [_permute_family(inst.families[i], gperm) for i in aperm],
    )
    step = STEP_FUNCTIONS[rule]
    b = dynamics.default_spending(inst)
    bp = dynamics.default_spending(permuted)
    worst = float(np.max(np.abs(b[np.ix_(aperm, gperm)] - bp)))
    for _ in range(steps):
        b = step(inst, b)
        bp = step(permuted, bp)
        worst = max(worst, float(np.max(np.abs(b[np.ix_(aperm, gperm)] - bp))))
    return worst


def _permute_family(fam, perm):
    obj = utilities.family_to_dict(fam)
    chores_side = isinstance(fam, utilities.DisutilityFamily)
    key = "d" if chores_side else "a"
    if key in obj and isinstance(obj[key], list):
        arr = np.asarray(obj[key])
        obj[key] = arr[perm].tolist()
        return utilities.family_from_dict(obj, chores=chores_side)
    raise ValueError("cannot permute %r" % obj.get("kind"))
