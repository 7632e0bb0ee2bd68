"""Chore markets: indirect disutility, Roy-style earning bundles, the pole-free
price program for private chores, KKT residual verification, and solvers for
both the private (Fisher) and public (Lindahl) settings.

The price program minimizes sum_i B_i log beta_i over the scaled price simplex
subject to beta_i >= 1/h_i(p, B_i); its KKT points are exactly the competitive
equilibria, so the solvers chase a zero KKT residual rather than a global
optimum of the (nonconvex) objective.
"""

import itertools
import math

import numpy as np
from scipy.optimize import least_squares, linprog

from . import market, utilities
from ._util import project_simplex

TRIM_RTOL = 1e-12


class ChoresConfig:
    """Iteration budget and tolerances for the chore-market solvers."""

    def __init__(self, max_iters=20000, stop_residual=1e-9, tol=1e-6, seed=0, restarts=8):
        self.max_iters = int(max_iters)
        self.stop_residual = float(stop_residual)
        self.tol = float(tol)
        self.seed = int(seed)
        self.restarts = int(restarts)


class IndirectDisutility:
    """h(., B) for one family at a fixed earning requirement."""

    def __init__(self, family, budget):
        self.family = family
        self.budget = float(budget)
        if not self.budget > 0:
            raise ValueError("budget must be positive")

    def value(self, p):
        return indirect_disutility(self.family, p, self.budget)

    __call__ = value

    def earn(self, p):
        return roy_chores(self.family, p, self.budget)


def indirect_disutility(fam, p, budget):
    """Minimum disutility needed to earn the budget at chore prices p.

    Negative prices are clipped to zero (the hat extension), so the value is
    defined on all of R^m and is +inf only when no earning is possible.
    """
    return fam.indirect(p, budget)


def roy_chores(fam, p, budget):
    """Disutility-minimizing bundle earning exactly the budget at prices p."""
    p = np.asarray(p, dtype=float)
    if not np.any(np.maximum(p, 0.0) > 0):
        raise ValueError("prices are all zero")
    return fam.earn(p, budget)


def _check_chores_instance(inst):
    if inst.market != market.FISHER or inst.items != market.CHORES:
        raise ValueError("expected a fisher-chores instance")


def fisher_chores_objective(inst, p):
    """sum_i B_i log(1/h_i(p, B_i)) with the level variables at their bound."""
    _check_chores_instance(inst)
    p = np.asarray(p, dtype=float)
    if p.shape != (inst.m,):
        raise ValueError("price vector has wrong shape")
    total = float(inst.budgets.sum())
    scale = max(total, 1.0)
    if np.any(p < -1e-9 * scale) or abs(p.sum() - total) > 1e-9 * scale:
        raise ValueError("off-simplex price")
    value = 0.0
    for fam, budget in zip(inst.families, inst.budgets):
        h = indirect_disutility(fam, p, budget)
        if h == 0:
            return np.inf
        if not np.isfinite(h):
            return -np.inf
        value -= budget * math.log(h)
    return value


def lindahl_chores_objective(inst, x):
    """sum_i B_i log d_i(x) over the scaled allocation simplex."""
    if inst.market != market.LINDAHL or inst.items != market.CHORES:
        raise ValueError("expected a lindahl-chores instance")
    x = np.asarray(x, dtype=float)
    if x.shape != (inst.m,):
        raise ValueError("allocation vector has wrong shape")
    total = float(inst.budgets.sum())
    scale = max(total, 1.0)
    if np.any(x < -1e-9 * scale) or abs(x.sum() - total) > 1e-9 * scale:
        raise ValueError("off-simplex allocation")
    clipped = np.maximum(x, 0.0)
    value = 0.0
    for fam, budget in zip(inst.families, inst.budgets):
        d = fam.value(clipped)
        if d <= 0:
            return -np.inf
        value += budget * math.log(d)
    return value


class KktResidualReport:
    """Per-condition violation levels for the price program, largest wins."""

    FIELDS = (
        "nonnegativity",
        "feasibility",
        "dual_feasibility",
        "complementary_slackness",
        "price_stationarity",
        "level_stationarity",
    )

    def __init__(self, **values):
        for name in self.FIELDS:
            setattr(self, name, float(values.pop(name)))
        if values:
            raise ValueError("unknown residual fields %r" % sorted(values))

    @property
    def max(self):
        return max(getattr(self, name) for name in self.FIELDS)

    def to_dict(self):
        out = {name: getattr(self, name) for name in self.FIELDS}
        out["max"] = self.max
        return out

    def __repr__(self):
        return "KktResidualReport(max=%.3g)" % self.max


class KktPoint:
    """Candidate solution of the price program with multipliers and recovered
    allocations; carries its residual report and market verification once a
    solver has filled them in."""

    def __init__(self, p, beta, lam, gamma, alpha, mu, allocations):
        self.p = np.asarray(p, dtype=float)
        self.beta = np.asarray(beta, dtype=float)
        self.lam = np.asarray(lam, dtype=float)
        self.gamma = np.asarray(gamma, dtype=float)
        self.alpha = np.asarray(alpha, dtype=float)
        self.mu = float(mu)
        self.allocations = np.asarray(allocations, dtype=float)
        n, m = self.allocations.shape
        if self.p.shape != (m,) or self.gamma.shape != (m,):
            raise ValueError("price-side vectors must have length m")
        if self.beta.shape != (n,) or self.lam.shape != (n,) or self.alpha.shape != (n,):
            raise ValueError("agent-side vectors must have length n")
        self.kkt_report = None
        self.verification = None
        self.certified = False

    def to_dict(self):
        out = {
            "p": self.p.tolist(),
            "beta": self.beta.tolist(),
            "lam": self.lam.tolist(),
            "gamma": self.gamma.tolist(),
            "alpha": self.alpha.tolist(),
            "mu": self.mu,
            "allocations": self.allocations.tolist(),
            "certified": bool(self.certified),
        }
        if self.kkt_report is not None:
            out["kkt"] = self.kkt_report.to_dict()
        if self.verification is not None:
            out["verification"] = self.verification.to_dict()
        return out


def fisher_chores_kkt_residual(inst, point):
    """Evaluate the six KKT conditions of the price program at a point."""
    _check_chores_instance(inst)
    p, beta, lam = point.p, point.beta, point.lam
    gamma, alpha, mu, x = point.gamma, point.alpha, point.mu, point.allocations
    budgets = inst.budgets
    total = float(budgets.sum())
    h = np.array(
        [indirect_disutility(fam, p, b) for fam, b in zip(inst.families, budgets)]
    )

    hard = np.any(beta <= 0) or np.any(~np.isfinite(beta))
    nonneg = max(float(np.max(np.maximum(-p, 0.0)) / total), 1.0 if hard else 0.0)

    feas = abs(float(p.sum()) - total) / total
    for i in range(inst.n):
        if h[i] == 0 or not np.isfinite(beta[i]):
            feas = max(feas, 1.0)
        elif np.isfinite(h[i]):
            feas = max(feas, max(1.0 - beta[i] * h[i], 0.0))

    dual = max(
        float(np.max(np.maximum(-lam / budgets, 0.0))),
        float(np.max(np.maximum(-gamma, 0.0))),
        float(np.max(np.maximum(-alpha / budgets, 0.0))),
    )

    comp = float(np.max(np.abs(gamma * p)) / total)
    for i in range(inst.n):
        bound = 1.0 / h[i] if h[i] > 0 else np.inf
        if np.isfinite(bound):
            comp = max(comp, abs(lam[i] * (bound - beta[i])) / budgets[i])
        elif lam[i] != 0:
            comp = max(comp, 1.0)
        comp = max(comp, abs(alpha[i] * beta[i]))

    station = float(np.max(np.abs(x.sum(axis=0) - gamma + mu)))
    for i, fam in enumerate(inst.families):
        station = max(station, abs(float(p @ x[i]) - budgets[i]) / budgets[i])
        if np.isfinite(h[i]) and h[i] > 0:
            station = max(station, abs(fam.value(x[i]) - h[i]) / h[i])
        else:
            station = max(station, 1.0)

    level = 0.0
    for i in range(inst.n):
        if beta[i] > 0 and np.isfinite(beta[i]):
            level = max(level, abs(1.0 - (lam[i] + alpha[i]) * beta[i] / budgets[i]))
        else:
            level = max(level, 1.0)

    return KktResidualReport(
        nonnegativity=nonneg,
        feasibility=feas,
        dual_feasibility=dual,
        complementary_slackness=comp,
        price_stationarity=station,
        level_stationarity=level,
    )


# ---------------------------------------------------------------------------
# solver

def _restrict_family(fam, keep):
    if isinstance(fam, utilities.LinearDisutility):
        return utilities.LinearDisutility(fam.d[keep], fam.scale)
    if isinstance(fam, utilities.MaxRatio):
        return utilities.MaxRatio(fam.d[keep], fam.scale)
    if isinstance(fam, utilities.ConvexCES):
        return utilities.ConvexCES(fam.d[keep], fam.rho, fam.scale)
    raise utilities.UnsupportedFamily("cannot restrict kind %r" % fam.kind)


def free_chore_reduction(inst):
    """Drop chores that some agent performs at zero disutility.

    Such chores are pre-assigned to those agents at price zero; the returned
    mask marks the chores that remain.
    """
    _check_chores_instance(inst)
    supports = np.stack([fam.support() for fam in inst.families])
    keep = supports.all(axis=0)
    if keep.all():
        return inst, keep
    if not keep.any():
        raise ValueError("every chore is free for some agent; prices cannot clear")
    families = [_restrict_family(fam, keep) for fam in inst.families]
    reduced = market.MarketInstance(market.FISHER, market.CHORES, inst.budgets, families)
    return reduced, keep


def _scaled_projection(v, total):
    return total * project_simplex(np.asarray(v, dtype=float) / total)


def _objective(inst, p):
    value = 0.0
    for fam, budget in zip(inst.families, inst.budgets):
        h = indirect_disutility(fam, p, budget)
        if h == 0:
            return np.inf
        if not np.isfinite(h):
            return -np.inf
        value -= budget * math.log(h)
    return value


def _total_earn(inst, p):
    g = np.zeros(inst.m)
    for fam, budget in zip(inst.families, inst.budgets):
        g += roy_chores(fam, p, budget)
    return g


def _assemble(inst, p, x, config):
    """Build a KktPoint at (p, x) with the equilibrium multipliers, then score it."""
    p = np.maximum(np.asarray(p, dtype=float), 0.0)
    x = np.maximum(np.asarray(x, dtype=float), 0.0)
    total = float(inst.budgets.sum())
    trimmed = market.trim_zero_price_chores(p, x, TRIM_RTOL * total)
    h = np.array(
        [indirect_disutility(fam, p, b) for fam, b in zip(inst.families, inst.budgets)]
    )
    with np.errstate(divide="ignore"):
        beta = np.where(h > 0, 1.0 / h, np.inf)
    lam = np.where(np.isfinite(h), inst.budgets * h, 0.0)
    point = KktPoint(p, beta, lam, np.zeros(inst.m), np.zeros(inst.n), -1.0, trimmed)
    point.kkt_report = fisher_chores_kkt_residual(inst, point)
    point.verification = market.verify_fisher_chores(
        inst, market.FisherEquilibrium(trimmed, p), config.tol
    )
    point.certified = (
        point.kkt_report.max <= config.stop_residual and point.verification.certified
    )
    return point


def _better(candidate, incumbent):
    if candidate is None:
        return incumbent
    if incumbent is None or candidate.kkt_report.max < incumbent.kkt_report.max:
        return candidate
    return incumbent


def _single_agent(inst, config):
    # the lone agent performs everything; prices follow the gradient at 1
    fam = inst.families[0]
    g = fam.gradient(np.ones(inst.m))
    p = inst.budgets[0] * g / g.sum()
    return _assemble(inst, p, np.ones((1, inst.m)), config)


def _single_chore(inst, config):
    total = float(inst.budgets.sum())
    x = (inst.budgets / total).reshape(-1, 1)
    return _assemble(inst, np.array([total]), x, config)


class _UnionFind:
    def __init__(self, size):
        self.parent = list(range(size))

    def find(self, a):
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def _proportional_fit(mask, rows, cols, tol):
    """Matrix with given row/column sums supported on mask; alternating scaling
    with an LP fallback when the support pattern forces a boundary solution.
    Columns with zero total may be left uncovered by the mask."""
    need = cols > 0
    if not mask.any(axis=1).all() or not mask.any(axis=0)[need].all():
        return None
    b = mask * np.outer(rows, cols)
    for _ in range(5000):
        rs = b.sum(axis=1)
        if np.any(rs <= 0):
            return None
        b *= (rows / rs)[:, None]
        cs = b.sum(axis=0)
        if np.any(cs[need] <= 0):
            return None
        dev = float(np.max(np.abs(cs - cols)))
        b[:, need] *= cols[need] / cs[need]
        if dev <= tol:
            return b
    edges = np.argwhere(mask)
    n, m = mask.shape
    a_eq = np.zeros((n + m, len(edges)))
    for e, (i, j) in enumerate(edges):
        a_eq[i, e] = 1.0
        a_eq[n + j, e] = 1.0
    rhs = np.concatenate([rows, cols])
    res = linprog(np.ones(len(edges)), A_eq=a_eq, b_eq=rhs, bounds=(0, None), method="highs")
    if not res.success:
        return None
    b = np.zeros((n, m))
    for e, (i, j) in enumerate(edges):
        b[i, j] = res.x[e]
    return b


def _linear_resolve(inst, coeff, active, consistency, config):
    """Solve one tie pattern exactly and route spending through it.

    The pattern fixes log-price differences inside each tie component; the
    component's money pins its scale. Returns an assembled point, or None
    when the pattern is inconsistent or cannot carry the money.
    """
    n, m = coeff.shape
    budgets = inst.budgets
    if not active.any(axis=0).all() or not active.any(axis=1).all():
        return None

    uf = _UnionFind(n + m)
    for i, j in np.argwhere(active):
        uf.union(i, n + j)

    # one log-linear system per tie component, then money pins each scale
    edges = np.argwhere(active)
    cols = {}
    for i, j in edges:
        cols.setdefault(("a", i), len(cols))
        cols.setdefault(("c", j), len(cols))
    a_mat = np.zeros((len(edges), len(cols)))
    rhs = np.zeros(len(edges))
    for e, (i, j) in enumerate(edges):
        a_mat[e, cols[("c", j)]] = 1.0
        a_mat[e, cols[("a", i)]] = -1.0
        rhs[e] = math.log(coeff[i, j])
    sol, _, _, _ = np.linalg.lstsq(a_mat, rhs, rcond=None)
    if np.max(np.abs(a_mat @ sol - rhs)) > consistency:
        return None

    q = np.full(m, -np.inf)
    for j in range(m):
        key = ("c", j)
        if key in cols:
            q[j] = sol[cols[key]]
    if np.any(~np.isfinite(q)):
        return None
    new_p = np.exp(q)
    roots = {}
    for j in range(m):
        roots.setdefault(uf.find(n + j), []).append(j)
    for root, chores in roots.items():
        agents = [i for i in range(n) if uf.find(i) == root]
        if not agents:
            return None
        money = budgets[agents].sum()
        new_p[chores] *= money / new_p[chores].sum()

    with np.errstate(divide="ignore"):
        exact = new_p[None, :] / coeff
    best = exact.max(axis=1)
    tied = exact >= best[:, None] * (1.0 - 1e-11)
    b = _proportional_fit(tied, budgets, new_p, 1e-13 * float(budgets.sum()))
    if b is None:
        return None
    x = b / new_p[None, :]
    return _assemble(inst, new_p, x, config)


def _linear_snap(inst, coeff, p, delta, config):
    """Read off the tie structure near p at one threshold and re-solve it."""
    with np.errstate(divide="ignore"):
        ratios = p[None, :] / coeff
    best = ratios.max(axis=1)
    if np.any(best <= 0):
        return None
    active = ratios >= best[:, None] * (1.0 - delta)
    return _linear_resolve(inst, coeff, active, 1e-6 + 10.0 * delta, config)


def _linear_enumerate(inst, coeff, p, band, cap, config):
    """Try every tie pattern compatible with the ratio gaps within band.

    A kink stall can leave each agent's near-tie gaps straddling any single
    threshold, so chores inside the band are optionally active and all
    combinations are resolved, nearest pattern first.
    """
    n, m = coeff.shape
    with np.errstate(divide="ignore"):
        ratios = p[None, :] / coeff
    best = ratios.max(axis=1)
    if np.any(best <= 0):
        return None
    gaps = 1.0 - ratios / best[:, None]
    options = []
    size = 1
    for i in range(n):
        opt = np.flatnonzero((gaps[i] > 1e-11) & (gaps[i] <= band))
        options.append(opt)
        size *= 2 ** len(opt)
        if size > cap:
            return None
    base = gaps <= 1e-11
    if not (base.any(axis=0) | np.isin(np.arange(m), np.concatenate(options))).all():
        return None

    choices = sorted(
        itertools.product(*[range(2 ** len(opt)) for opt in options]),
        key=lambda bits: sum(bin(b).count("1") for b in bits),
    )
    result = None
    for bits in choices:
        active = base.copy()
        for i, b in enumerate(bits):
            for k, j in enumerate(options[i]):
                if b >> k & 1:
                    active[i, j] = True
        point = _linear_resolve(inst, coeff, active, 1e-6 + 10.0 * band, config)
        result = _better(point, result)
        if result is not None and result.certified:
            return result
    return result


def _first_order(inst, config, rng, snap, maximize=False):
    """Projected first-order loop on the reduced price objective.

    The gradient is the total Roy bundle, so steps cut pay on over-demanded
    chores (or raise it, in the maximizing regime).
    """
    total = float(inst.budgets.sum())
    sign = -1.0 if maximize else 1.0
    p = np.full(inst.m, total / inst.m)
    phi = sign * _objective(inst, p)
    step = 0.25 * total
    best = None
    for t in range(config.max_iters):
        if t % 25 == 0:
            point = snap(p)
            best = _better(point, best)
            if best is not None and best.certified:
                return best
        g = sign * _total_earn(inst, p)
        trial = _scaled_projection(p - step * g, total)
        move = float(np.max(np.abs(trial - p)))
        if move == 0.0:
            step *= 0.5
        else:
            phi_trial = sign * _objective(inst, trial)
            if phi_trial <= phi - 1e-4 * move * move / step:
                p, phi = trial, phi_trial
                step = min(step * 1.3, total)
                continue
            step *= 0.5
        if step < 1e-13 * total:
            point = snap(p)
            best = _better(point, best)
            if best is not None and best.certified:
                return best
            p = _scaled_projection(p * np.exp(0.05 * rng.standard_normal(inst.m)), total)
            phi = sign * _objective(inst, p)
            step = 0.05 * total
    best = _better(snap(p), best)
    return best


def _solve_linear(inst, coeff, config, rng):
    def snap(p):
        point = None
        for delta in (1e-9, 1e-7, 1e-5, 1e-3, 3e-2):
            point = _better(_linear_snap(inst, coeff, p, delta, config), point)
            if point is not None and point.certified:
                return point
        for band in (3e-2, 0.15):
            point = _better(_linear_enumerate(inst, coeff, p, band, 512, config), point)
            if point is not None and point.certified:
                return point
        return point

    # Smoothing homotopy first: soften the kinks, anneal the exponent back
    # toward 1, and read the tie pattern off the smoothed clearing prices.
    # Descent alone can stall in the nonsmooth valleys between tie manifolds.
    total = float(inst.budgets.sum())
    best = None
    warm = None
    for eps in (0.5, 0.1, 3e-2, 1e-2, 3e-3, 1e-3):
        fams = [utilities.ConvexCES(c, 1.0 + eps) for c in coeff]
        p = _smooth_clearing(
            fams, inst.budgets, rng, config.restarts if warm is None else 2,
            1e-9 * max(1.0, total), warm=warm,
        )
        if p is None:
            continue
        warm = p.copy()
        best = _better(snap(p * (total / p.sum())), best)
        if best is not None and best.certified:
            return best

    result = _better(_first_order(inst, config, rng, snap), best)
    if result is None:
        p = np.full(inst.m, total / inst.m)
        result = _assemble(inst, p, np.stack([roy_chores(f, p, b) for f, b in zip(inst.families, inst.budgets)]), config)
    return result


def _earn_snap(inst, config):
    def snap(p):
        x = np.stack([roy_chores(f, p, b) for f, b in zip(inst.families, inst.budgets)])
        return _assemble(inst, p, x, config)

    return snap


def _mixed_snap(inst, config):
    """Earn snap plus a tie-split repair for the linear agents.

    Agents with curvature have a unique earning bundle at given prices, but a
    linear agent may split arbitrarily across tied chores. Holding the rigid
    bundles fixed, the linear rows' splits become a transportation problem
    over the tie mask with the leftover money per chore as column totals.
    """
    plain = _earn_snap(inst, config)
    coeffs = [_linear_coeff(fam) for fam in inst.families]
    flexible = np.array([c is not None for c in coeffs])
    if not flexible.any() or flexible.all():
        return plain

    def snap(p):
        best = plain(p)
        if best.certified:
            return best
        rigid = np.zeros(inst.m)
        for i in np.flatnonzero(~flexible):
            rigid += roy_chores(inst.families[i], p, inst.budgets[i])
        cols = p * np.maximum(1.0 - rigid, 0.0)
        rows = inst.budgets[flexible]
        if cols.sum() <= 0:
            return best
        cols *= rows.sum() / cols.sum()
        lin = np.flatnonzero(flexible)
        for delta in (1e-9, 1e-7, 1e-5, 1e-3, 3e-2):
            priced = p > 0
            mask = np.zeros((lin.size, inst.m), dtype=bool)
            for r, i in enumerate(lin):
                ratio = np.where(priced, p / coeffs[i], 0.0)
                mask[r] = priced & (ratio >= (1.0 - delta) * ratio.max())
            b = _proportional_fit(mask, rows, cols, 1e-12 * float(rows.sum()))
            if b is None:
                continue
            x = np.zeros((inst.n, inst.m))
            x[~flexible] = np.stack(
                [roy_chores(inst.families[i], p, inst.budgets[i]) for i in np.flatnonzero(~flexible)]
            )
            x[flexible] = np.divide(b, p[None, :], out=np.zeros_like(b), where=priced[None, :])
            best = _better(_assemble(inst, p, x, config), best)
            if best.certified:
                return best
        return best

    return snap


def _maxratio_enumerate(inst, config, rng):
    coeff = np.stack([fam.d for fam in inst.families])
    n, m = coeff.shape
    budgets = inst.budgets
    total = float(budgets.sum())
    inv = 1.0 / coeff
    best = None
    for size in range(m):
        for zero in itertools.combinations(range(m), size):
            kept = [j for j in range(m) if j not in zero]
            k = len(kept)

            def resid(z, kept=kept, k=k):
                p, t = z[:k], z[k:]
                earn_rate = inv[:, kept] @ p
                return np.concatenate(
                    [t * earn_rate - budgets, inv[:, kept].T @ t - 1.0]
                )

            p0 = np.full(k, total / k)
            t0 = budgets / (inv[:, kept] @ p0)
            starts = [np.concatenate([p0, t0])]
            for _ in range(config.restarts):
                starts.append(starts[0] * np.exp(0.4 * rng.standard_normal(k + n)))
            lower = np.concatenate([np.zeros(k), np.full(n, 1e-12 * total)])
            for z0 in starts:
                sol = least_squares(
                    resid, np.maximum(z0, lower + 1e-12), bounds=(lower, np.inf),
                    xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=400 * (k + n)
                )
                if np.max(np.abs(sol.fun)) > 1e-10 * max(1.0, total):
                    continue
                p_kept, t = sol.x[:k], sol.x[k:]
                caps = inv.T * t  # caps[j, i] = t_i / d_ij
                if size and np.any(caps[list(zero)].sum(axis=1) < 1.0 - 1e-9):
                    continue
                p = np.zeros(m)
                p[kept] = p_kept
                x = np.zeros((n, m))
                x[:, kept] = (t[:, None] * inv[:, kept])
                for j in zero:
                    x[:, j] = caps[j] / caps[j].sum()
                point = _assemble(inst, p, x, config)
                best = _better(point, best)
                if point.certified:
                    return best
    return best


def _solve_maxratio(inst, config, rng):
    result = _first_order(inst, config, rng, _earn_snap(inst, config), maximize=True)
    if result is not None and result.certified:
        return result
    return _better(_maxratio_enumerate(inst, config, rng), result)


def _smooth_clearing(families, budgets, rng, restarts, accept, kept=None, warm=None):
    """Prices clearing the summed earn bundles on the kept chores, or None.

    Solves sum_i earn_i(p) = 1 per kept chore in log-price space with the
    remaining prices pinned at zero; valid whenever every family's earning
    bundle is a smooth function of the positive prices. A warm price vector,
    when given, is tried before the uniform and randomized starts.
    """
    m = families[0].m
    total = float(budgets.sum())
    if kept is None:
        kept = np.arange(m)

    def embed(q):
        p = np.zeros(m)
        p[kept] = np.exp(q)
        return p

    def resid(q):
        p = embed(q)
        x = np.zeros(m)
        for fam, budget in zip(families, budgets):
            x += fam.earn(p, budget)
        return x[kept] - 1.0

    q0 = np.full(len(kept), math.log(total / m))
    starts = []
    if warm is not None and np.all(warm[kept] > 0):
        starts.append(np.log(warm[kept]))
    starts.append(q0)
    for _ in range(restarts):
        starts.append(q0 + 0.5 * rng.standard_normal(len(kept)))
    lo = math.log(1e-10 * total / m)
    hi = math.log(10.0 * total)
    for start in starts:
        sol = least_squares(
            resid, np.clip(start, lo + 1e-9, hi - 1e-9), bounds=(lo, hi),
            xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=1000
        )
        if np.max(np.abs(sol.fun)) <= accept:
            return embed(sol.x)
    return None


def _solve_smooth(inst, config, rng):
    total = float(inst.budgets.sum())
    p = _smooth_clearing(inst.families, inst.budgets, rng, config.restarts, 1e-10)
    if p is None:
        return None
    p *= total / p.sum()
    x = np.stack([fam.earn(p, b) for fam, b in zip(inst.families, inst.budgets)])
    return _assemble(inst, p, x, config)


def _linear_coeff(fam):
    if isinstance(fam, utilities.LinearDisutility):
        return fam.scale * fam.d
    if isinstance(fam, utilities.ConvexCES) and fam.rho == 1.0:
        return fam.scale * fam.d
    return None


def _mixed_exact(inst, coeffs, p_hint, delta, config, zero=()):
    """Fix the tie pattern read off p_hint and re-solve the clearing exactly.

    Linear agents only earn on chores tying their best price/coefficient
    ratio, so the ties pin price ratios inside each tie component up to one
    scale. Component scales and untied prices remain unknown; per-component
    money balance, clearing on untied priced chores from the rigid bundles
    alone, and total money close the system. Chores in zero stay at price
    zero and clear by capacity. Returns an assembled point or None.
    """
    n, m = inst.n, inst.m
    budgets = inst.budgets
    total = float(budgets.sum())
    lin = [i for i, c in enumerate(coeffs) if c is not None]
    rigid = [i for i, c in enumerate(coeffs) if c is None]
    coeff = np.stack([coeffs[i] for i in lin])
    ratios = p_hint[None, :] / coeff
    best = ratios.max(axis=1)
    if np.any(best <= 0):
        return None
    active = ratios >= best[:, None] * (1.0 - delta)

    uf = _UnionFind(len(lin) + m)
    for r, j in np.argwhere(active):
        uf.union(r, len(lin) + j)

    edges = np.argwhere(active)
    cols = {}
    for r, j in edges:
        cols.setdefault(("a", r), len(cols))
        cols.setdefault(("c", j), len(cols))
    a_mat = np.zeros((len(edges), len(cols)))
    rhs = np.zeros(len(edges))
    for e, (r, j) in enumerate(edges):
        a_mat[e, cols[("c", j)]] = 1.0
        a_mat[e, cols[("a", r)]] = -1.0
        rhs[e] = math.log(coeff[r, j])
    sol, _, _, _ = np.linalg.lstsq(a_mat, rhs, rcond=None)
    if len(edges) and np.max(np.abs(a_mat @ sol - rhs)) > 1e-6 + 10.0 * delta:
        return None

    comps = {}
    for r in range(len(lin)):
        comps.setdefault(uf.find(r), [[], []])[0].append(r)
    for j in range(m):
        root = uf.find(len(lin) + j)
        if root in comps:
            comps[root][1].append(j)
    comps = [(mem, ch) for mem, ch in comps.values()]
    if any(not ch for _, ch in comps):
        return None
    tied = sorted(j for _, ch in comps for j in ch)
    if set(tied) & set(zero):
        return None
    free = [j for j in range(m) if j not in tied and j not in zero]
    offsets = np.zeros(m)
    for j in tied:
        offsets[j] = sol[cols[("c", j)]]

    def prices(z):
        p = np.zeros(m)
        for c, (_, ch) in enumerate(comps):
            p[ch] = np.exp(offsets[ch] + z[c])
        p[free] = np.exp(z[len(comps):])
        return p

    def rigid_load(p):
        x = np.zeros(m)
        for i in rigid:
            x += inst.families[i].earn(p, budgets[i])
        return x

    def resid(z):
        p = prices(z)
        load = rigid_load(p)
        out = np.empty(len(comps) + len(free) + 1)
        for c, (mem, ch) in enumerate(comps):
            money = budgets[[lin[r] for r in mem]].sum()
            out[c] = float(np.dot(p[ch], 1.0 - load[ch])) - money
        out[len(comps):-1] = load[free] - 1.0
        out[-1] = p.sum() - total
        return out / max(1.0, total)

    base = math.log(total / m)
    z0 = np.concatenate([np.full(len(comps), base), np.full(len(free), base)])
    guess = z0.copy()
    for c, (_, ch) in enumerate(comps):
        guess[c] = float(np.mean(np.log(np.maximum(p_hint[ch], 1e-300)) - offsets[ch]))
    guess[len(comps):] = np.log(np.maximum(p_hint[free], 1e-300))
    lo = math.log(1e-12 * total / m)
    hi = math.log(10.0 * total)
    for start in (guess, z0):
        sol2 = least_squares(
            resid, np.clip(start, lo + 1e-9, hi - 1e-9), bounds=(lo, hi),
            xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=1000
        )
        if np.max(np.abs(sol2.fun)) > 1e-10:
            continue
        p = prices(sol2.x)
        load = rigid_load(p)
        colmoney = p * np.maximum(1.0 - load, 0.0)
        if colmoney.sum() <= 0:
            continue
        colmoney *= budgets[lin].sum() / colmoney.sum()
        with np.errstate(divide="ignore"):
            exact = p[None, :] / coeff
        mask = exact >= exact.max(axis=1)[:, None] * (1.0 - 1e-11)
        b = _proportional_fit(mask, budgets[lin], colmoney, 1e-12 * total)
        if b is None:
            continue
        x = np.zeros((n, m))
        for i in rigid:
            x[i] = inst.families[i].earn(p, budgets[i])
        x[lin] = np.divide(b, p[None, :], out=np.zeros((len(lin), m)), where=p[None, :] > 0)
        return _assemble(inst, p, x, config)
    return None


def _solve_mixed(inst, coeffs, config, rng):
    """Clear a market mixing linear agents with curved ones.

    Linear agents get a softened exponent so every bundle is a smooth map of
    prices, the smooth clearing system is solved, and the tie pattern at the
    softened solution is then imposed exactly.
    """
    total = float(inst.budgets.sum())
    best = None
    snap = _mixed_snap(inst, config)
    has_linear = any(c is not None for c in coeffs)
    # Only MaxRatio agents keep working zero-pay chores, so only then can an
    # equilibrium leave chores unpriced; enumerate small zero sets for them.
    zero_sets = [()]
    if any(isinstance(fam, utilities.MaxRatio) for fam in inst.families) and inst.m <= 10:
        for size in range(1, min(inst.m - 1, 4) + 1):
            zero_sets.extend(itertools.combinations(range(inst.m), size))
    for zero in zero_sets:
        kept = np.array([j for j in range(inst.m) if j not in zero], dtype=int)
        # soften the linear kinks gently first, then anneal: the clearing
        # system's basin around a tie shrinks like the softened width
        warm = None
        for eps in (0.5, 0.1, 3e-2, 1e-2, 3e-3, 1e-3) if has_linear else (0.0,):
            fams = [
                fam if c is None else utilities.ConvexCES(c, 1.0 + eps)
                for fam, c in zip(inst.families, coeffs)
            ]
            p = _smooth_clearing(
                fams, inst.budgets, rng, config.restarts if warm is None else 2,
                1e-9 * max(1.0, total), kept=kept, warm=warm,
            )
            if p is None:
                continue
            warm = p.copy()
            p[kept] *= total / p[kept].sum()
            best = _better(snap(p), best)
            if best is not None and best.certified:
                return best
            if not has_linear:
                break
            for delta in (1e-7, 1e-5, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2):
                best = _better(_mixed_exact(inst, coeffs, p, delta, config, zero=zero), best)
                if best is not None and best.certified:
                    return best
    return best


def _solve_core(inst, config, rng):
    if inst.m == 1:
        return _single_chore(inst, config)
    if inst.n == 1:
        return _single_agent(inst, config)
    coeffs = [_linear_coeff(fam) for fam in inst.families]
    if all(c is not None for c in coeffs):
        return _solve_linear(inst, np.stack(coeffs), config, rng)
    if all(isinstance(fam, utilities.MaxRatio) for fam in inst.families):
        return _solve_maxratio(inst, config, rng)
    if all(
        isinstance(fam, utilities.ConvexCES) and fam.rho > 1.0 for fam in inst.families
    ):
        result = _solve_smooth(inst, config, rng)
        if result is not None:
            return result
    result = _solve_mixed(inst, coeffs, config, rng)
    if result is not None and result.certified:
        return result
    # Fall back to the first-order sweep; MaxRatio agents carve concave
    # pockets where the clearing point is a local maximum, so try both
    # directions. Iterations are capped since this is a last resort.
    capped = ChoresConfig(
        max_iters=min(config.max_iters, 4000), stop_residual=config.stop_residual,
        tol=config.tol, seed=config.seed, restarts=config.restarts,
    )
    snap = _mixed_snap(inst, capped)
    result = _better(_first_order(inst, capped, rng, snap), result)
    if result is not None and result.certified:
        return result
    return _better(_first_order(inst, capped, rng, snap, maximize=True), result)


def solve_fisher_chores(inst, config=None):
    """Find a KKT point of the price program; certification is post hoc.

    Free chores (zero disutility for somebody) are pre-assigned at price zero
    before solving. The returned point carries its residual report, market
    verification, and a certified flag; exhausting the budget returns the best
    point found, flagged uncertified.
    """
    _check_chores_instance(inst)
    if config is None:
        config = ChoresConfig()
    core, keep = free_chore_reduction(inst)
    rng = np.random.default_rng(config.seed)
    point = _solve_core(core, config, rng)
    if point is None:
        p = np.full(core.m, float(core.budgets.sum()) / core.m)
        x = np.stack([roy_chores(f, p, b) for f, b in zip(core.families, core.budgets)])
        point = _assemble(core, p, x, config)
    if core is inst:
        return point
    supports = np.stack([fam.support() for fam in inst.families])
    p = np.zeros(inst.m)
    p[keep] = point.p
    x = np.zeros((inst.n, inst.m))
    x[:, keep] = point.allocations
    for j in np.flatnonzero(~keep):
        free = ~supports[:, j]
        x[free, j] = 1.0 / free.sum()
    return _assemble(inst, p, x, config)


class LindahlChoresResult:
    """Public-chores equilibrium recovered through the dual private market."""

    def __init__(self, equilibrium, dual_point, verification, certified):
        self.equilibrium = equilibrium
        self.dual_point = dual_point
        self.verification = verification
        self.certified = bool(certified)

    def to_dict(self):
        return {
            "equilibrium": self.equilibrium.to_dict(),
            "dual_point": self.dual_point.to_dict(),
            "verification": self.verification.to_dict(),
            "certified": self.certified,
        }


def solve_lindahl_chores(inst, config=None):
    """Solve the public-chores market through its dual private market."""
    if inst.market != market.LINDAHL or inst.items != market.CHORES:
        raise ValueError("expected a lindahl-chores instance")
    if config is None:
        config = ChoresConfig()
    dual_inst = market.dualize(inst)
    point = solve_fisher_chores(dual_inst, config)
    eq = market.LindahlEquilibrium(point.p, point.allocations)
    verification = market.verify_lindahl_chores(inst, eq, config.tol)
    return LindahlChoresResult(
        eq, point, verification, point.certified and verification.certified
    )
