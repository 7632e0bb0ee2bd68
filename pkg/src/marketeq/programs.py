"""Convex-program objectives for goods markets and budget-weighted welfare metrics.

The spending objective generalizes the classic money-flow program: agents with
substitution parameter rho contribute entropy-like terms weighted by 1/rho,
Cobb-Douglas rows are pinned to their closed-form spending, and the linear and
Leontief cases fall out as the rho = 1 and rho = -inf reductions.
"""

import numpy as np

from . import market, utilities

FEAS_TOL = 1e-7


class NswValue:
    """Budget-weighted log welfare with the matching geometric mean."""

    def __init__(self, log_nsw, total_budget):
        self.log_nsw = float(log_nsw)
        self.total_budget = float(total_budget)
        with np.errstate(over="ignore"):
            self.geometric_mean = float(np.exp(self.log_nsw / self.total_budget))

    def to_dict(self):
        return {
            "log_nsw": self.log_nsw,
            "geometric_mean": self.geometric_mean,
        }

    def __repr__(self):
        return "NswValue(log_nsw=%.12g, geometric_mean=%.12g)" % (
            self.log_nsw,
            self.geometric_mean,
        )


def _log_welfare(inst, utilities_):
    total = 0.0
    for b, u in zip(inst.budgets, utilities_):
        if not u > 0:
            return -np.inf
        total += b * np.log(u)
    return total


def _check_fisher_alloc(inst, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (inst.n, inst.m):
        raise ValueError("allocation must be n x m")
    if x.min() < -1e-12:
        raise ValueError("allocation must be nonnegative")
    if np.any(x.sum(axis=0) > 1.0 + FEAS_TOL):
        raise ValueError("allocation oversells a good")
    return np.maximum(x, 0.0)


def _check_lindahl_alloc(inst, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (inst.m,):
        raise ValueError("allocation must be an m-vector")
    if x.min() < -1e-12:
        raise ValueError("allocation must be nonnegative")
    supply = float(inst.budgets.sum())
    if x.sum() > supply * (1.0 + 1e-9) + FEAS_TOL:
        raise ValueError("allocation exceeds the total budget")
    return np.maximum(x, 0.0)


def eg_objective(inst, x):
    """Budget-weighted sum of log utilities of a feasible private allocation."""
    if inst.market != market.FISHER or inst.items != market.GOODS:
        raise ValueError("eg_objective needs a fisher-goods instance")
    x = _check_fisher_alloc(inst, x)
    return _log_welfare(inst, [fam.value(row) for fam, row in zip(inst.families, x)])


def lindahl_nsw_objective(inst, x):
    """Budget-weighted sum of log utilities of a feasible public allocation."""
    if inst.market != market.LINDAHL or inst.items != market.GOODS:
        raise ValueError("lindahl_nsw_objective needs a lindahl-goods instance")
    x = _check_lindahl_alloc(inst, x)
    return _log_welfare(inst, [fam.value(x) for fam in inst.families])


def nsw(inst, alloc):
    """Budget-weighted geometric-mean welfare of an allocation (n x m or m)."""
    alloc = np.asarray(alloc, dtype=float)
    if alloc.ndim == 2:
        values = [fam.value(row) for fam, row in zip(inst.families, alloc)]
    else:
        values = [fam.value(alloc) for fam in inst.families]
    return NswValue(_log_welfare(inst, values), inst.budgets.sum())


def nsw_ratio(inst, eq_alloc, opt_alloc):
    """Welfare of eq_alloc relative to opt_alloc as a ratio of geometric means."""
    if inst.items != market.GOODS:
        raise ValueError("nsw_ratio is defined for goods markets")
    check = _check_lindahl_alloc if np.asarray(eq_alloc).ndim == 1 else _check_fisher_alloc
    eq_alloc = check(inst, eq_alloc)
    opt_alloc = check(inst, opt_alloc)
    top = nsw(inst, eq_alloc)
    bottom = nsw(inst, opt_alloc)
    if not np.isfinite(bottom.log_nsw):
        raise ValueError("opt_alloc gives some agent zero utility")
    total = inst.budgets.sum()
    return float(np.exp((top.log_nsw - bottom.log_nsw) / total))


def lindahl_prices(inst, x):
    """Personalized prices p_ij = B_i grad_j u_i(x) / <x, grad u_i(x)>."""
    x = np.asarray(x, dtype=float)
    prices = np.zeros((inst.n, inst.m))
    for i, (fam, b) in enumerate(zip(inst.families, inst.budgets)):
        g = fam.gradient(x)
        prices[i] = b * g / float(x @ g)
    return prices


# ---------------------------------------------------------------------------
# spending objective for public goods with CES-structured agents

RHO_LINEAR = 1.0
RHO_COBB = 0.0
RHO_LEONTIEF = -np.inf


def spending_rhos(inst):
    """Per-agent substitution parameter; raises for kinds outside the CES structure."""
    rhos = []
    for fam in inst.families:
        if isinstance(fam, utilities.Linear):
            rhos.append(RHO_LINEAR)
        elif isinstance(fam, utilities.CES):
            rhos.append(fam.rho)
        elif isinstance(fam, utilities.CobbDouglas):
            rhos.append(RHO_COBB)
        elif isinstance(fam, utilities.Leontief):
            rhos.append(RHO_LEONTIEF)
        else:
            raise utilities.UnsupportedFamily(
                "spending objective needs flat linear/ces/cobbdouglas/leontief agents"
            )
    return np.array(rhos)


def _coeff_rows(inst):
    return np.stack([fam.a for fam in inst.families])


def pin_cobb_douglas(inst, b):
    """Return a copy of b with Cobb-Douglas rows replaced by their closed-form spending."""
    rhos = spending_rhos(inst)
    b = np.array(b, dtype=float)
    for i, rho in enumerate(rhos):
        if rho == RHO_COBB:
            a = inst.families[i].a
            b[i] = inst.budgets[i] * a / a.sum()
    return b


def _check_spending(inst, b):
    b = np.asarray(b, dtype=float)
    if b.shape != (inst.n, inst.m):
        raise ValueError("spending matrix must be n x m")
    if b.min() < 0:
        raise ValueError("spending must be nonnegative")
    rows = b.sum(axis=1)
    if np.any(np.abs(rows - inst.budgets) > 1e-12 * inst.budgets):
        raise ValueError("row sums must equal the budgets")
    for i, fam in enumerate(inst.families):
        supp = fam.support()
        if np.any(b[i, ~supp] > 0):
            raise ValueError("agent %d spends outside its support" % i)
        if np.any(b[i, supp] <= 0):
            raise ValueError("agent %d has zero spending on a supported good" % i)
    return b


def shmyrev_ces_objective(inst, b):
    """Spending-form objective for public goods; x_j is the column sum of b."""
    if inst.market != market.LINDAHL or inst.items != market.GOODS:
        raise ValueError("the spending objective needs a lindahl-goods instance")
    rhos = spending_rhos(inst)
    b = _check_spending(inst, b)
    x = b.sum(axis=0)
    pos = x > 0
    value = float(np.sum(x[pos] * np.log(x[pos])))
    for i, (fam, rho) in enumerate(zip(inst.families, rhos)):
        supp = fam.support()
        bi = b[i, supp]
        a = fam.a[supp]
        if np.isfinite(rho) and rho != 0.0:
            value -= float(np.sum(bi * np.log(bi / a))) / rho
        elif rho == RHO_LEONTIEF:
            value -= float(np.sum(bi * np.log(a)))
    return value


def shmyrev_ces_gradient(inst, b):
    """Entrywise gradient of the spending objective on each agent's support."""
    if inst.market != market.LINDAHL or inst.items != market.GOODS:
        raise ValueError("the spending objective needs a lindahl-goods instance")
    rhos = spending_rhos(inst)
    b = _check_spending(inst, b)
    x = b.sum(axis=0)
    grad = np.zeros_like(b)
    logx = np.where(x > 0, np.log(np.where(x > 0, x, 1.0)), 0.0)
    for i, (fam, rho) in enumerate(zip(inst.families, rhos)):
        supp = fam.support()
        common = logx[supp] + 1.0
        if np.isfinite(rho) and rho != 0.0:
            grad[i, supp] = common - (np.log(b[i, supp] / fam.a[supp]) + 1.0) / rho
        elif rho == RHO_LEONTIEF:
            grad[i, supp] = common - np.log(fam.a[supp])
        else:
            grad[i, supp] = common
    return grad
