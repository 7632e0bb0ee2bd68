"""Reference solvers used as ground truth: grid-refinement demand search,
EG and NSW maximizers with certificate-based stopping, and a Newton Lambert W.

Production modules never import this one; tests and the CLI oracle methods are
the only consumers, so an oracle bug cannot silently leak into the solvers.
"""

import numpy as np

from . import market, utilities
from ._util import project_capped_simplex


class OracleResult:
    """A reference optimum with an honest precision estimate."""

    def __init__(self, value, point, precision, method):
        self.value = float(value)
        self.point = point
        self.precision = float(precision)
        self.method = method

    def to_dict(self):
        point = self.point
        if isinstance(point, np.ndarray):
            point = point.tolist()
        elif hasattr(point, "to_dict"):
            point = point.to_dict()
        return {
            "value": self.value,
            "point": point,
            "precision": self.precision,
            "method": self.method,
        }

    def __repr__(self):
        return "OracleResult(%s, value=%.12g, precision=%.3g)" % (
            self.method,
            self.value,
            self.precision,
        )


def lambert_w(z):
    """Principal-branch Lambert W by Halley-damped Newton; z >= -1/e."""
    z = float(z)
    if z < -1.0 / np.e - 1e-15:
        raise ValueError("lambert_w is real only for z >= -1/e")
    if z > np.e:
        w = np.log(z) - np.log(np.log(z))
    elif z >= 0:
        w = np.log1p(z)
    elif z > -0.25 / np.e:
        w = z - z * z
    else:
        # branch-point expansion near z = -1/e
        w = -1.0 + np.sqrt(max(2.0 * (1.0 + np.e * z), 0.0))
    for _ in range(100):
        ew = np.exp(w)
        f = w * ew - z
        if abs(f) <= 1e-12 * max(1.0, abs(z)):
            return float(w)
        denom = ew * (w + 1.0) - (w + 2.0) * f / (2.0 * w + 2.0)
        if denom == 0:
            break
        w -= f / denom
    raise RuntimeError("lambert_w did not converge for z=%r" % z)


# ---------------------------------------------------------------------------
# grid-refinement demand

def _batch_value(fam, x):
    """Family value on a batch of points, vectorized where the kind allows."""
    if isinstance(fam, utilities.Linear):
        return fam.scale * x @ fam.a
    if isinstance(fam, utilities.Leontief):
        supp = fam.a > 0
        return fam.scale * np.min(x[:, supp] / fam.a[supp], axis=1)
    if isinstance(fam, utilities.CES) and fam.rho != 1.0:
        supp = fam.a > 0
        xs = x[:, supp]
        if fam.rho < 0:
            vals = np.zeros(x.shape[0])
            ok = np.all(xs > 0, axis=1)
            if np.any(ok):
                s = np.power(xs[ok], fam.rho) @ fam.a[supp]
                vals[ok] = fam.scale * s ** (1.0 / fam.rho)
            return vals
        s = np.power(xs, fam.rho) @ fam.a[supp]
        return fam.scale * s ** (1.0 / fam.rho)
    if isinstance(fam, utilities.CobbDouglas):
        supp = fam.a > 0
        vals = np.zeros(x.shape[0])
        ok = np.all(x[:, supp] > 0, axis=1)
        if np.any(ok):
            vals[ok] = fam.scale * np.exp(np.log(x[ok][:, supp]) @ fam.alpha[supp])
        return vals
    if isinstance(fam, utilities.MinAffine):
        return fam.scale * np.min(x @ fam.w.T + fam.c0, axis=1)
    if isinstance(fam, utilities.MaxRatio):
        return fam.scale * np.max(x * fam.d, axis=1)
    if isinstance(fam, utilities.LinearDisutility):
        return fam.scale * x @ fam.d
    if isinstance(fam, utilities.ConvexCES):
        supp = fam.d > 0
        s = np.power(x[:, supp], fam.rho) @ fam.d[supp]
        return fam.scale * s ** (1.0 / fam.rho)
    return np.array([fam.value(row) for row in x])


def _share_grid(center, radius, grid):
    """Renormalized box grid around a simplex point; rows sum to one."""
    axes = [
        np.linspace(max(c - radius, 0.0), min(c + radius, 1.0), grid) for c in center
    ]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    sums = pts.sum(axis=1)
    keep = sums > 1e-12
    return pts[keep] / sums[keep, None]


def oracle_demand(fam, p, B, grid=7, levels=12):
    """Brute-force optimal bundle on the budget (or earning) hyperplane, m <= 4."""
    if fam.m > 4:
        raise ValueError("grid demand oracle supports at most 4 items")
    p = np.asarray(p, dtype=float)
    B = float(B)
    chores = isinstance(fam, utilities.DisutilityFamily)
    if chores:
        cols = np.flatnonzero(p > 0)
        if cols.size == 0:
            raise ValueError("no chore pays a positive price")
    else:
        if np.any(p <= 0):
            raise ValueError("demand oracle needs strictly positive prices")
        cols = np.arange(p.size)
    sign = -1.0 if chores else 1.0
    center = np.full(cols.size, 1.0 / cols.size)
    radius = 1.0
    best_val = -np.inf
    best_x = None
    level_bests = []
    for _ in range(levels):
        shares = _share_grid(center, radius, grid)
        x = np.zeros((shares.shape[0], fam.m))
        x[:, cols] = B * shares / p[cols]
        vals = sign * _batch_value(fam, x)
        k = int(np.argmax(vals))
        if vals[k] > best_val:
            best_val = vals[k]
            best_x = x[k]
            center = shares[k]
        level_bests.append(best_val)
        radius *= 0.45
    precision = abs(level_bests[-1] - level_bests[-2]) + 1e-15 * max(1.0, abs(best_val))
    return OracleResult(sign * best_val, best_x, precision, "grid-refine")


# ---------------------------------------------------------------------------
# Eisenberg-Gale reference solver

def _log_utilities(families, budgets, rows):
    total = 0.0
    for fam, b, row in zip(families, budgets, rows):
        u = fam.value(row)
        if not u > 0:
            return -np.inf
        total += b * np.log(u)
    return total


def _eg_dual_value(inst, p):
    # Lagrangian dual of the budget-weighted log objective at prices p
    total = float(np.sum(p))
    for fam, b in zip(inst.families, inst.budgets):
        v = fam.indirect_utility(p, 1.0)
        if not np.isfinite(v) or v <= 0:
            return np.inf
        total += b * (np.log(b) - 1.0 + np.log(v))
    return total


def _certify_fisher(inst, x, p, tol):
    eq = market.FisherEquilibrium(x, p)
    report = market.verify_fisher(inst, eq, tol)
    gap = max(report.affordability_gap, report.optimality_gap, report.clearing_gap)
    return eq, report, gap


def _eg_linear(inst, precision, max_iters):
    a = np.stack([fam.a * fam.scale for fam in inst.families])
    budgets = inst.budgets
    n, m = a.shape
    x = np.full((n, m), 1.0 / n)
    value = float(budgets @ np.log((a * x).sum(axis=1)))
    step = 1.0
    best_gap = np.inf
    for it in range(max_iters):
        u = (a * x).sum(axis=1)
        grad = (budgets / u)[:, None] * a
        moved = x + step * grad
        nxt = np.stack(
            [project_capped_simplex(moved[:, j], 1.0) for j in range(m)], axis=1
        )
        nu = (a * nxt).sum(axis=1)
        if np.all(nu > 0):
            nval = float(budgets @ np.log(nu))
            if nval >= value + 1e-4 * float((grad * (nxt - x)).sum()):
                x, value = nxt, nval
                step = min(step * 1.25, 1e8)
            else:
                step *= 0.5
        else:
            step *= 0.5
        if it % 50 == 0 or step < 1e-16:
            u = (a * x).sum(axis=1)
            p = np.max((budgets / u)[:, None] * a, axis=0)
            eq, report, gap = _certify_fisher(inst, x, p, precision)
            best_gap = min(best_gap, gap)
            if report.certified:
                dual_gap = _eg_dual_value(inst, p) - value
                return OracleResult(value, eq, max(gap, dual_gap), "eg-primal")
            if step < 1e-16:
                break
    raise RuntimeError(
        "oracle_eg: residual %.3g did not reach %.3g in %d iterations"
        % (best_gap, precision, max_iters)
    )


def _eg_dual(inst, precision, max_iters):
    budgets = inst.budgets
    m = inst.m
    floor = 1e-12
    p = np.full(m, budgets.sum() / m)
    value = _eg_dual_value(inst, p)
    step = 1.0
    best_gap = np.inf
    for it in range(max_iters):
        demands = np.stack(
            [fam.demand(p, b) for fam, b in zip(inst.families, budgets)]
        )
        grad = 1.0 - demands.sum(axis=0)
        nxt = np.maximum(p - step * grad, floor)
        nval = _eg_dual_value(inst, nxt)
        if nval <= value - 1e-4 * float(grad @ (p - nxt)):
            p, value = nxt, nval
            step = min(step * 1.25, 1e8)
        else:
            step *= 0.5
        if it % 50 == 0 or step < 1e-16:
            demands = np.stack(
                [fam.demand(p, b) for fam, b in zip(inst.families, budgets)]
            )
            eq, report, gap = _certify_fisher(inst, demands, p, precision)
            best_gap = min(best_gap, gap)
            if report.certified:
                primal = _log_utilities(inst.families, budgets, demands)
                return OracleResult(primal, eq, gap, "eg-dual")
            if step < 1e-16:
                break
    raise RuntimeError(
        "oracle_eg: residual %.3g did not reach %.3g in %d iterations"
        % (best_gap, precision, max_iters)
    )


def oracle_eg(inst, precision=1e-8, max_iters=200000):
    """Budget-weighted log-utility maximizer for Fisher goods, verified before return."""
    if inst.market != market.FISHER or inst.items != market.GOODS:
        raise ValueError("oracle_eg needs a fisher-goods instance")
    if inst.n * inst.m > 64:
        raise ValueError("oracle_eg is limited to n*m <= 64")
    kinds = {type(fam) for fam in inst.families}
    if kinds <= {utilities.Linear}:
        return _eg_linear(inst, precision, max_iters)
    smooth = {utilities.Leontief, utilities.CES, utilities.CobbDouglas, utilities.NestedCES}
    if kinds <= smooth:
        for fam in inst.families:
            if isinstance(fam, utilities.CES) and fam.rho == 1.0:
                raise utilities.UnsupportedFamily(
                    "rho=1 CES agents belong to the linear route; mixing is unsupported"
                )
        return _eg_dual(inst, precision, max_iters)
    raise utilities.UnsupportedFamily(
        "oracle_eg handles all-linear or all-{leontief,ces,cobbdouglas,nested} instances"
    )


# ---------------------------------------------------------------------------
# NSW maximizer for public goods

def _nsw_value(inst, x):
    total = 0.0
    for fam, b in zip(inst.families, inst.budgets):
        u = fam.value(x)
        if not u > 0:
            return -np.inf
        total += b * np.log(u)
    return total


def _nsw_gradient(inst, x):
    g = np.zeros(inst.m)
    for fam, b in zip(inst.families, inst.budgets):
        g += b * fam.gradient(x) / fam.value(x)
    return g


def _nsw_residual(inst, x, grad, supply):
    active = x > 1e-8 * supply
    res = np.where(active, np.abs(grad - 1.0), np.maximum(grad - 1.0, 0.0))
    return float(np.max(res))


def _nsw_pgd(inst, precision, max_iters):
    supply = float(inst.budgets.sum())
    m = inst.m
    x = np.full(m, supply / m)
    value = _nsw_value(inst, x)
    if not np.isfinite(value):
        raise ValueError("uniform start is infeasible for the NSW objective")
    step = 1.0
    homogeneous = all(fam.homogeneous for fam in inst.families)
    best_res = np.inf
    for it in range(max_iters):
        grad = _nsw_gradient(inst, x)
        moved = project_capped_simplex(x + step * grad, supply)
        nxt = np.maximum(moved, 1e-13)
        nval = _nsw_value(inst, nxt)
        if np.isfinite(nval) and nval >= value + 1e-4 * float(grad @ (nxt - x)):
            x, value = nxt, nval
            step = min(step * 1.25, 1e8)
        else:
            step *= 0.5
        if it % 25 == 0 or step < 1e-16:
            grad = _nsw_gradient(inst, x)
            if homogeneous:
                res = _nsw_residual(inst, x, grad, supply)
            else:
                fw = supply * max(float(grad.max()), 0.0) - float(grad @ x)
                res = fw
            best_res = min(best_res, res)
            if res <= precision:
                return OracleResult(value, x, res, "nsw-pgd")
            if step < 1e-16:
                break
    raise RuntimeError(
        "oracle_nsw_lindahl: residual %.3g did not reach %.3g in %d iterations"
        % (best_res, precision, max_iters)
    )


def _nsw_grid(inst, levels):
    supply = float(inst.budgets.sum())
    if inst.m > 6:
        raise ValueError("grid NSW fallback supports at most 6 goods")
    grid = 7 if inst.m <= 3 else 5
    center = np.full(inst.m, 1.0 / inst.m)
    radius = 1.0
    best_val = -np.inf
    best_x = None
    level_bests = []
    for _ in range(levels):
        shares = _share_grid(center, radius, grid)
        xs = supply * shares
        vals = np.full(xs.shape[0], 0.0)
        for fam, b in zip(inst.families, inst.budgets):
            u = _batch_value(fam, xs)
            with np.errstate(divide="ignore", invalid="ignore"):
                vals = vals + b * np.where(u > 0, np.log(np.maximum(u, 1e-300)), -np.inf)
        k = int(np.argmax(vals))
        if vals[k] > best_val:
            best_val = vals[k]
            best_x = xs[k]
            center = shares[k]
        level_bests.append(best_val)
        radius *= 0.45
    precision = abs(level_bests[-1] - level_bests[-2]) + 1e-15 * max(1.0, abs(best_val))
    return OracleResult(best_val, best_x, precision, "nsw-grid")


def oracle_nsw_lindahl(inst, precision=1e-8, max_iters=500000):
    """Budget-weighted NSW maximizer over ||x||_1 <= sum of budgets."""
    if inst.market != market.LINDAHL or inst.items != market.GOODS:
        raise ValueError("oracle_nsw_lindahl needs a lindahl-goods instance")
    nondiff = (utilities.Leontief, utilities.MinAffine)
    if any(isinstance(fam, nondiff) for fam in inst.families):
        return _nsw_grid(inst, levels=14)
    return _nsw_pgd(inst, precision, max_iters)
