"""Utility and disutility families with closed-form demand, indirect utility, and duals.

Utility kinds: Linear, Leontief, CES (rho in (-inf, 1]), CobbDouglas, NestedCES,
plus two concave non-homogeneous kinds (LogLinear, MinAffine) used for
approximation experiments.  Disutility kinds for chores: LinearDisutility,
MaxRatio, ConvexCES (rho in [1, inf)).

Every family carries a positive scalar prefactor ``scale`` so the dual transform
(u~(p) = 1 / v(p, B)) stays inside the named families without renormalization;
demand and argmax operations ignore it.
"""

import json
import math

import numpy as np

from . import _backend

RHO_ZERO_TOL = 1e-9
RHO_NEG_LIMIT = -1e9
TIE_RTOL = 1e-12


class UnsupportedFamily(ValueError):
    """Raised when an operation has no implementation for the given kind."""


def _coeffs(a, name="a"):
    a = np.asarray(a, dtype=float)
    if a.ndim != 1 or a.size == 0:
        raise ValueError("%s must be a nonempty vector" % name)
    if np.any(a < 0) or not np.all(np.isfinite(a)):
        raise ValueError("%s must be finite and nonnegative" % name)
    if not np.any(a > 0):
        raise ValueError("%s must have at least one positive entry" % name)
    return a


def _check_scale(scale):
    scale = float(scale)
    if not np.isfinite(scale) or scale <= 0:
        raise ValueError("scale must be a positive real")
    return scale


def _check_prices(p, m):
    p = np.asarray(p, dtype=float)
    if p.shape != (m,):
        raise ValueError("price vector has wrong shape")
    if np.any(p <= 0):
        raise ValueError("demand requires strictly positive prices")
    return p


def _check_budget(B):
    B = float(B)
    if not (B > 0):
        raise ValueError("budget must be positive")
    return B


def _check_point(x, m):
    x = np.asarray(x, dtype=float)
    if x.shape != (m,):
        raise ValueError("allocation has wrong shape")
    return x


def _tie_mask(scores):
    top = np.max(scores)
    return scores >= top * (1 - TIE_RTOL) if top > 0 else scores == top


def _check_ces_rho(rho):
    rho = float(rho)
    if np.isnan(rho) or rho > 1:
        raise ValueError("CES rho must lie in (-inf, 1]")
    if abs(rho) < RHO_ZERO_TOL:
        raise ValueError("CES rho too close to 0; use the CobbDouglas kind")
    if rho < RHO_NEG_LIMIT:
        raise ValueError("CES rho below %g; use the Leontief kind" % RHO_NEG_LIMIT)
    if 1 - RHO_ZERO_TOL < rho < 1:
        raise ValueError("CES rho too close to 1; use rho=1 exactly or the Linear kind")
    return rho


def rho_hat(rho):
    """Dual elasticity rho/(rho - 1); an involution on (-inf, 1)."""
    return rho / (rho - 1.0)


class UtilityFamily:
    """Base class for utility families over m goods."""

    kind = None
    homogeneous = True

    def __init__(self, m, scale):
        self.m = int(m)
        self.scale = _check_scale(scale)

    def support(self):
        raise NotImplementedError

    def value(self, x):
        raise NotImplementedError

    def gradient(self, x):
        raise NotImplementedError

    def demand(self, p, B):
        raise NotImplementedError

    def indirect_utility(self, p, B):
        raise NotImplementedError

    def dual(self, B):
        raise UnsupportedFamily("no dual transform for kind %r" % self.kind)

    def to_dict(self):
        raise NotImplementedError

    def __eq__(self, other):
        return type(self) is type(other) and self.to_dict() == other.to_dict()

    __hash__ = None

    def __repr__(self):
        return "%s(%s)" % (type(self).__name__, self.to_dict())


def _linear_demand(a, p, B):
    # all budget on the best bang-per-buck goods, ties split equally
    ratios = np.where(a > 0, a / p, -np.inf)
    ties = _tie_mask(ratios)
    x = np.zeros_like(p)
    x[ties] = (B / ties.sum()) / p[ties]
    return x


class Linear(UtilityFamily):
    """u(x) = scale * <a, x>."""

    kind = "linear"

    def __init__(self, a, scale=1.0):
        self.a = _coeffs(a)
        super().__init__(self.a.size, scale)

    def support(self):
        return self.a > 0

    def value(self, x):
        x = _check_point(x, self.m)
        return self.scale * float(self.a @ x)

    def gradient(self, x):
        _check_point(x, self.m)
        return self.scale * self.a.copy()

    def demand(self, p, B):
        p = _check_prices(p, self.m)
        return _linear_demand(self.a, p, _check_budget(B))

    def indirect_utility(self, p, B):
        p = np.asarray(p, dtype=float)
        B = _check_budget(B)
        supp = self.a > 0
        if np.any(p[supp] == 0):
            return np.inf
        return self.scale * B * float(np.max(self.a[supp] / p[supp]))

    def dual(self, B):
        return Leontief(self.a, scale=1.0 / (self.scale * _check_budget(B)))

    def to_dict(self):
        return {"kind": "linear", "a": self.a.tolist(), "scale": self.scale}


class Leontief(UtilityFamily):
    """u(x) = scale * min_{j in supp} x_j / a_j."""

    kind = "leontief"

    def __init__(self, a, scale=1.0):
        self.a = _coeffs(a)
        super().__init__(self.a.size, scale)

    def support(self):
        return self.a > 0

    def value(self, x):
        x = _check_point(x, self.m)
        supp = self.a > 0
        return self.scale * float(np.min(x[supp] / self.a[supp]))

    def gradient(self, x):
        raise UnsupportedFamily("Leontief utility is not differentiable")

    def demand(self, p, B):
        p = _check_prices(p, self.m)
        B = _check_budget(B)
        t = B / float(p @ self.a)
        return t * self.a

    def indirect_utility(self, p, B):
        p = np.asarray(p, dtype=float)
        B = _check_budget(B)
        cost = float(p @ self.a)
        if cost == 0:
            return np.inf
        return self.scale * B / cost

    def dual(self, B):
        return Linear(self.a, scale=1.0 / (self.scale * _check_budget(B)))

    def to_dict(self):
        return {"kind": "leontief", "a": self.a.tolist(), "scale": self.scale}


class CES(UtilityFamily):
    """u(x) = scale * (sum_j a_j x_j^rho)^(1/rho), rho in (-inf, 1]; rho=1 behaves as Linear."""

    kind = "ces"

    def __init__(self, a, rho, scale=1.0):
        self.a = _coeffs(a)
        self.rho = 1.0 if rho == 1 else _check_ces_rho(rho)
        super().__init__(self.a.size, scale)

    def support(self):
        return self.a > 0

    def value(self, x):
        x = _check_point(x, self.m)
        supp = self.a > 0
        xs = x[supp]
        if self.rho < 0 and np.any(xs <= 0):
            return 0.0
        s = float(self.a[supp] @ np.power(xs, self.rho))
        return self.scale * s ** (1.0 / self.rho)

    def gradient(self, x):
        x = _check_point(x, self.m)
        supp = self.a > 0
        g = np.zeros(self.m)
        if self.rho == 1.0:
            g[supp] = self.scale * self.a[supp]
            return g
        if np.any(x[supp] <= 0):
            raise ValueError("CES gradient needs x > 0 on the support")
        xs = x[supp]
        s = float(self.a[supp] @ np.power(xs, self.rho))
        g[supp] = self.scale * self.a[supp] * xs ** (self.rho - 1.0) * s ** (1.0 / self.rho - 1.0)
        return g

    def demand(self, p, B):
        p = _check_prices(p, self.m)
        B = _check_budget(B)
        if self.rho == 1.0:
            return _linear_demand(self.a, p, B)
        rh = rho_hat(self.rho)
        supp = self.a > 0
        w = np.zeros(self.m)
        w[supp] = self.a[supp] ** (1.0 - rh) * p[supp] ** rh
        x = np.zeros(self.m)
        x[supp] = (B * w[supp] / w.sum()) / p[supp]
        return x

    def indirect_utility(self, p, B):
        p = np.asarray(p, dtype=float)
        B = _check_budget(B)
        supp = self.a > 0
        if self.rho == 1.0:
            if np.any(p[supp] == 0):
                return np.inf
            return self.scale * B * float(np.max(self.a[supp] / p[supp]))
        rh = rho_hat(self.rho)
        ps = p[supp]
        if rh < 0 and np.any(ps == 0):
            return np.inf
        w = float(np.sum(self.a[supp] ** (1.0 - rh) * np.power(ps, rh)))
        if w == 0:
            return np.inf
        return self.scale * B * w ** (-1.0 / rh)

    def dual(self, B):
        B = _check_budget(B)
        if self.rho == 1.0:
            return Leontief(self.a, scale=1.0 / (self.scale * B))
        rh = rho_hat(self.rho)
        return CES(self.a ** (1.0 - rh), rh, scale=1.0 / (self.scale * B))

    def to_dict(self):
        return {"kind": "ces", "a": self.a.tolist(), "rho": self.rho, "scale": self.scale}


class CobbDouglas(UtilityFamily):
    """u(x) = scale * prod_j x_j^(alpha_j) with alpha = a / sum(a)."""

    kind = "cobbdouglas"

    def __init__(self, a, scale=1.0):
        self.a = _coeffs(a)
        super().__init__(self.a.size, scale)
        self.alpha = self.a / self.a.sum()

    def support(self):
        return self.a > 0

    def value(self, x):
        x = _check_point(x, self.m)
        supp = self.a > 0
        if np.any(x[supp] <= 0):
            return 0.0
        return self.scale * float(np.exp(self.alpha[supp] @ np.log(x[supp])))

    def gradient(self, x):
        x = _check_point(x, self.m)
        supp = self.a > 0
        if np.any(x[supp] <= 0):
            raise ValueError("CobbDouglas gradient needs x > 0 on the support")
        u = self.value(x)
        g = np.zeros(self.m)
        g[supp] = self.alpha[supp] * u / x[supp]
        return g

    def demand(self, p, B):
        p = _check_prices(p, self.m)
        return _check_budget(B) * self.alpha / p

    def indirect_utility(self, p, B):
        p = np.asarray(p, dtype=float)
        B = _check_budget(B)
        supp = self.a > 0
        if np.any(p[supp] == 0):
            return np.inf
        return self.scale * B * float(np.exp(self.alpha[supp] @ np.log(self.alpha[supp] / p[supp])))

    def dual(self, B):
        B = _check_budget(B)
        supp = self.a > 0
        factor = float(np.exp(-self.alpha[supp] @ np.log(self.alpha[supp])))
        return CobbDouglas(self.a, scale=factor / (self.scale * B))

    def to_dict(self):
        return {"kind": "cobbdouglas", "a": self.a.tolist(), "scale": self.scale}


class Nest:
    """Interior node of a nested-CES tree: (sum_c w_c u_c^rho)^(1/rho).

    Children are either good indices (leaves) or further Nest nodes.
    """

    def __init__(self, rho, children):
        self.rho = _check_ces_rho(rho)
        if self.rho >= 1:
            raise ValueError("nested nodes need rho < 1 so the dual node exists")
        if not children:
            raise ValueError("nest must have at least one child")
        weights = []
        kids = []
        for w, child in children:
            w = float(w)
            if not np.isfinite(w) or w <= 0:
                raise ValueError("nest weights must be positive")
            weights.append(w)
            kids.append(child if isinstance(child, Nest) else int(child))
        self.weights = np.asarray(weights)
        self.children = kids

    def leaves(self):
        out = []
        for child in self.children:
            out.extend(child.leaves() if isinstance(child, Nest) else [child])
        return out


class NestedCES(UtilityFamily):
    """Nested-CES tree utility; leaves are goods, internal nodes aggregate with CES."""

    kind = "nested"

    def __init__(self, root, m=None, scale=1.0):
        if not isinstance(root, Nest):
            raise ValueError("root must be a Nest")
        leaves = root.leaves()
        if len(set(leaves)) != len(leaves):
            raise ValueError("each good may appear in at most one leaf")
        if min(leaves) < 0:
            raise ValueError("leaf good indices must be nonnegative")
        if m is None:
            m = max(leaves) + 1
        if max(leaves) >= m:
            raise ValueError("leaf good index out of range")
        self.root = root
        super().__init__(m, scale)
        self._flat_cache = None

    def support(self):
        mask = np.zeros(self.m, dtype=bool)
        mask[self.root.leaves()] = True
        return mask

    def _node_value(self, node, x):
        vals = np.array(
            [self._node_value(c, x) if isinstance(c, Nest) else x[c] for c in node.children]
        )
        if node.rho < 0 and np.any(vals <= 0):
            return 0.0
        return float(node.weights @ np.power(vals, node.rho)) ** (1.0 / node.rho)

    def value(self, x):
        x = _check_point(x, self.m)
        return self.scale * self._node_value(self.root, x)

    def gradient(self, x):
        x = _check_point(x, self.m)
        supp = self.support()
        if np.any(x[supp] <= 0):
            raise ValueError("NestedCES gradient needs x > 0 on the support")
        g = np.zeros(self.m)

        def walk(node, mult):
            vals = np.array(
                [self._node_value(c, x) if isinstance(c, Nest) else x[c] for c in node.children]
            )
            u = float(node.weights @ np.power(vals, node.rho)) ** (1.0 / node.rho)
            partial = node.weights * vals ** (node.rho - 1.0) * u ** (1.0 - node.rho)
            for c, dm in zip(node.children, mult * partial):
                if isinstance(c, Nest):
                    walk(c, dm)
                else:
                    g[c] = dm

        walk(self.root, self.scale)
        return g

    def flatten(self):
        """BFS arrays for the spending kernel: parent, rho_hat, contribution weight, leaf."""
        if self._flat_cache is not None:
            return self._flat_cache
        nodes = [(self.root, -1, 1.0)]
        k = 0
        while k < len(nodes):
            node, _, _ = nodes[k]
            if isinstance(node, Nest):
                for w, child in zip(node.weights, node.children):
                    nodes.append((child, k, w))
            k += 1
        count = len(nodes)
        parent = np.full(count, -1, dtype=np.int64)
        rhohat = np.zeros(count)
        cw = np.ones(count)
        leaf = np.full(count, -1, dtype=np.int64)
        for idx, (node, par, w) in enumerate(nodes):
            parent[idx] = par
            if isinstance(node, Nest):
                rhohat[idx] = rho_hat(node.rho)
            else:
                leaf[idx] = node
            if par >= 0:
                cw[idx] = w ** (1.0 - rhohat[par])
        self._flat_cache = (parent, rhohat, cw, leaf)
        return self._flat_cache

    def demand(self, p, B):
        p = _check_prices(p, self.m)
        B = _check_budget(B)
        spend, _ = _backend.nested_spend(*self.flatten(), p, B)
        return spend / p

    def indirect_utility(self, p, B):
        p = np.asarray(p, dtype=float)
        B = _check_budget(B)
        if np.any(p[self.support()] == 0):
            # a free good short-circuits every substitute node above it
            return self._indirect_with_zeros(p, B)
        _, root_index = _backend.nested_spend(*self.flatten(), np.maximum(p, 1e-300), B)
        return self.scale * B / root_index

    def _indirect_with_zeros(self, p, B):
        def index(node):
            parts = []
            for w, child in zip(node.weights, node.children):
                pc = index(child) if isinstance(child, Nest) else p[child]
                rh = rho_hat(node.rho)
                if pc == 0:
                    if rh < 0:
                        return 0.0
                    continue
                parts.append(w ** (1.0 - rh) * pc ** rh)
            rh = rho_hat(node.rho)
            s = sum(parts)
            if s == 0:
                return 0.0
            return s ** (1.0 / rh)

        root = index(self.root)
        if root == 0:
            return np.inf
        return self.scale * B / root

    def dual(self, B):
        B = _check_budget(B)

        def dual_node(node):
            rh = rho_hat(node.rho)
            children = [
                (w ** (1.0 - rh), dual_node(c) if isinstance(c, Nest) else c)
                for w, c in zip(node.weights, node.children)
            ]
            return Nest(rh, children)

        return NestedCES(dual_node(self.root), m=self.m, scale=1.0 / (self.scale * B))

    def to_dict(self):
        def node_dict(node):
            if not isinstance(node, Nest):
                return {"kind": "good", "j": int(node)}
            return {
                "kind": "nested",
                "rho": node.rho,
                "children": [
                    {"a": float(w), "node": node_dict(c)}
                    for w, c in zip(node.weights, node.children)
                ],
            }

        out = node_dict(self.root)
        out["m"] = self.m
        out["scale"] = self.scale
        return out


class LogLinear(UtilityFamily):
    """u(x) = scale * log(offset + <a, x>); concave, not homogeneous.

    offset=1 gives u(0) = 0; offset=0 gives a plain log of a linear form.
    """

    kind = "loglinear"
    homogeneous = False

    def __init__(self, a, offset=1.0, scale=1.0):
        self.a = _coeffs(a)
        self.offset = float(offset)
        if self.offset not in (0.0, 1.0):
            raise ValueError("offset must be 0 or 1")
        super().__init__(self.a.size, scale)

    def support(self):
        return self.a > 0

    def value(self, x):
        x = _check_point(x, self.m)
        return self.scale * float(np.log(self.offset + self.a @ x))

    def gradient(self, x):
        x = _check_point(x, self.m)
        return self.scale * self.a / (self.offset + float(self.a @ x))

    def demand(self, p, B):
        # monotone transform of a linear utility: same argmax
        p = _check_prices(p, self.m)
        return _linear_demand(self.a, p, _check_budget(B))

    def indirect_utility(self, p, B):
        p = np.asarray(p, dtype=float)
        B = _check_budget(B)
        supp = self.a > 0
        if np.any(p[supp] == 0):
            return np.inf
        best = float(np.max(self.a[supp] / p[supp]))
        return self.scale * float(np.log(self.offset + B * best))

    def to_dict(self):
        return {
            "kind": "loglinear",
            "a": self.a.tolist(),
            "offset": self.offset,
            "scale": self.scale,
        }


class MinAffine(UtilityFamily):
    """u(x) = scale * min_k (<w_k, x> + c0_k); concave piecewise affine, not homogeneous."""

    kind = "minaffine"
    homogeneous = False

    def __init__(self, w, c0, scale=1.0):
        w = np.asarray(w, dtype=float)
        c0 = np.asarray(c0, dtype=float)
        if w.ndim != 2 or w.shape[0] != c0.size or w.shape[0] == 0:
            raise ValueError("w must be k x m with one constant per row")
        if np.any(w < 0) or np.any(c0 < 0):
            raise ValueError("pieces must have nonnegative slopes and constants")
        self.w = w
        self.c0 = c0
        super().__init__(w.shape[1], scale)

    def support(self):
        return np.any(self.w > 0, axis=0)

    def value(self, x):
        x = _check_point(x, self.m)
        return self.scale * float(np.min(self.w @ x + self.c0))

    def gradient(self, x):
        x = _check_point(x, self.m)
        vals = self.w @ x + self.c0
        ties = vals <= np.min(vals) * (1 + TIE_RTOL) + TIE_RTOL
        return self.scale * self.w[ties].mean(axis=0)

    def _lp(self, p, B):
        from scipy.optimize import linprog

        k = self.c0.size
        # variables (x, t): maximize t with t <= w_k x + c0_k and <p, x> <= B
        c = np.zeros(self.m + 1)
        c[-1] = -1.0
        a_ub = np.zeros((k + 1, self.m + 1))
        a_ub[:k, : self.m] = -self.w
        a_ub[:k, -1] = 1.0
        a_ub[k, : self.m] = p
        b_ub = np.concatenate([self.c0, [B]])
        bounds = [(0, None)] * self.m + [(None, None)]
        res = linprog(c, A_ub=a_ub, b_ub=b_ub, bounds=bounds, method="highs")
        return res

    def demand(self, p, B):
        p = _check_prices(p, self.m)
        res = self._lp(p, _check_budget(B))
        if not res.success:
            raise ValueError("demand LP failed: %s" % res.message)
        return np.maximum(res.x[: self.m], 0.0)

    def indirect_utility(self, p, B):
        p = np.asarray(p, dtype=float)
        if np.any(p < 0):
            raise ValueError("prices must be nonnegative")
        res = self._lp(p, _check_budget(B))
        if res.status == 3:
            return np.inf
        if not res.success:
            raise ValueError("indirect utility LP failed: %s" % res.message)
        return self.scale * float(-res.fun)

    def to_dict(self):
        return {
            "kind": "minaffine",
            "w": self.w.tolist(),
            "c0": self.c0.tolist(),
            "scale": self.scale,
        }


class DisutilityFamily:
    """Base class for convex 1-homogeneous disutility families over m chores."""

    kind = None

    def __init__(self, m, scale):
        self.m = int(m)
        self.scale = _check_scale(scale)

    def support(self):
        raise NotImplementedError

    def value(self, x):
        raise NotImplementedError

    def gradient(self, x):
        raise NotImplementedError

    def indirect(self, p, B):
        """h(p, B): minimum disutility needed to earn B at chore prices p >= 0."""
        raise NotImplementedError

    def earn(self, p, B):
        """A disutility-minimizing allocation with earnings exactly B (Roy selection)."""
        raise NotImplementedError

    def dual(self, B):
        raise UnsupportedFamily("no dual transform for kind %r" % self.kind)

    def to_dict(self):
        raise NotImplementedError

    def __eq__(self, other):
        return type(self) is type(other) and self.to_dict() == other.to_dict()

    __hash__ = None

    def __repr__(self):
        return "%s(%s)" % (type(self).__name__, self.to_dict())


def _check_chore_prices(p, m):
    p = np.asarray(p, dtype=float)
    if p.shape != (m,):
        raise ValueError("price vector has wrong shape")
    # the hat extension clips negative entries to zero
    return np.maximum(p, 0.0)


class LinearDisutility(DisutilityFamily):
    """d(x) = scale * <d, x>."""

    kind = "linear"

    def __init__(self, d, scale=1.0):
        self.d = _coeffs(d, "d")
        super().__init__(self.d.size, scale)

    def support(self):
        return self.d > 0

    def value(self, x):
        x = _check_point(x, self.m)
        return self.scale * float(self.d @ x)

    def gradient(self, x):
        _check_point(x, self.m)
        return self.scale * self.d.copy()

    def indirect(self, p, B):
        p = _check_chore_prices(p, self.m)
        B = _check_budget(B)
        priced = p > 0
        if not np.any(priced):
            return np.inf
        if np.any(self.d[priced] == 0):
            return 0.0
        return self.scale * B * float(np.min(self.d[priced] / p[priced]))

    def earn(self, p, B):
        p = _check_chore_prices(p, self.m)
        B = _check_budget(B)
        priced = (p > 0) & (self.d > 0)
        if not np.any(priced):
            raise ValueError("no chore can earn at these prices")
        ratios = np.where(priced, p / np.where(self.d > 0, self.d, 1.0), -np.inf)
        ties = _tie_mask(ratios)
        h = self.indirect(p, B)
        x = np.zeros(self.m)
        x[ties] = h / (ties.sum() * self.scale * self.d[ties])
        return x

    def dual(self, B):
        B = _check_budget(B)
        if np.any(self.d == 0):
            raise UnsupportedFamily("dual needs strictly positive coefficients")
        return MaxRatio(1.0 / self.d, scale=1.0 / (self.scale * B))

    def to_dict(self):
        return {"kind": "linear", "d": self.d.tolist(), "scale": self.scale}


class MaxRatio(DisutilityFamily):
    """d(x) = scale * max_j d_j x_j."""

    kind = "maxratio"

    def __init__(self, d, scale=1.0):
        self.d = _coeffs(d, "d")
        super().__init__(self.d.size, scale)

    def support(self):
        return self.d > 0

    def value(self, x):
        x = _check_point(x, self.m)
        return self.scale * float(np.max(self.d * x))

    def gradient(self, x):
        x = _check_point(x, self.m)
        vals = self.d * x
        ties = _tie_mask(np.where(self.d > 0, vals, -np.inf))
        g = np.zeros(self.m)
        g[ties] = self.scale * self.d[ties] / ties.sum()
        return g

    def indirect(self, p, B):
        p = _check_chore_prices(p, self.m)
        B = _check_budget(B)
        if np.any((self.d == 0) & (p > 0)):
            return 0.0
        supp = self.d > 0
        total = float(np.sum(p[supp] / self.d[supp]))
        if total == 0:
            return np.inf
        return self.scale * B / total

    def earn(self, p, B):
        p = _check_chore_prices(p, self.m)
        B = _check_budget(B)
        h = self.indirect(p, B)
        if not np.isfinite(h) or h == 0:
            raise ValueError("no finite-positive earning bundle at these prices")
        supp = self.d > 0
        x = np.zeros(self.m)
        x[supp] = h / (self.scale * self.d[supp])
        return x

    def dual(self, B):
        B = _check_budget(B)
        if np.any(self.d == 0):
            raise UnsupportedFamily("dual needs strictly positive coefficients")
        return LinearDisutility(1.0 / self.d, scale=1.0 / (self.scale * B))

    def to_dict(self):
        return {"kind": "maxratio", "d": self.d.tolist(), "scale": self.scale}


class ConvexCES(DisutilityFamily):
    """d(x) = scale * (sum_j d_j x_j^rho)^(1/rho), rho in [1, inf); rho=1 behaves as linear."""

    kind = "ces"

    def __init__(self, d, rho, scale=1.0):
        self.d = _coeffs(d, "d")
        rho = float(rho)
        if not (1.0 <= rho <= 1e9):
            raise ValueError("ConvexCES rho must lie in [1, 1e9]")
        if 1.0 < rho < 1.0 + RHO_ZERO_TOL:
            raise ValueError("rho too close to 1; use rho=1 exactly")
        self.rho = rho
        super().__init__(self.d.size, scale)

    def support(self):
        return self.d > 0

    def _linear_view(self):
        return LinearDisutility(self.d, scale=self.scale)

    def value(self, x):
        # log-space sum keeps rho near 1 (huge rho_hat) and rho near 1e9 finite
        x = _check_point(x, self.m)
        supp = self.d > 0
        if not np.any(x[supp] > 0):
            return 0.0
        with np.errstate(divide="ignore"):
            logs = np.log(self.d[supp]) + self.rho * np.log(x[supp])
        top = logs.max()
        return self.scale * math.exp((top + math.log(np.exp(logs - top).sum())) / self.rho)

    def gradient(self, x):
        x = _check_point(x, self.m)
        if self.rho == 1.0:
            return self.scale * self.d.copy()
        supp = self.d > 0
        g = np.zeros(self.m)
        if not np.any(x[supp] > 0):
            return g
        with np.errstate(divide="ignore"):
            logs = np.log(self.d[supp]) + self.rho * np.log(x[supp])
        top = logs.max()
        logsum = top + math.log(np.exp(logs - top).sum())
        with np.errstate(divide="ignore"):
            g[supp] = self.scale * np.exp(
                np.log(self.d[supp])
                + (self.rho - 1.0) * np.log(x[supp])
                + (1.0 / self.rho - 1.0) * logsum
            )
        return g

    def indirect(self, p, B):
        if self.rho == 1.0:
            return self._linear_view().indirect(p, B)
        p = _check_chore_prices(p, self.m)
        B = _check_budget(B)
        if np.any((self.d == 0) & (p > 0)):
            return 0.0
        rh = rho_hat(self.rho)
        supp = self.d > 0
        if not np.any(p[supp] > 0):
            return np.inf
        with np.errstate(divide="ignore"):
            logs = (1.0 - rh) * np.log(self.d[supp]) + rh * np.log(p[supp])
        logs = logs[np.isfinite(logs)]
        top = logs.max()
        logw = top + math.log(np.exp(logs - top).sum())
        return self.scale * B * math.exp(-logw / rh)

    def earn(self, p, B):
        if self.rho == 1.0:
            return self._linear_view().earn(p, B)
        p = _check_chore_prices(p, self.m)
        B = _check_budget(B)
        rh = rho_hat(self.rho)
        supp = (self.d > 0) & (p > 0)
        if not np.any(supp):
            raise ValueError("no chore can earn at these prices")
        logs = (1.0 - rh) * np.log(self.d[supp]) + rh * np.log(p[supp])
        e = np.exp(logs - logs.max())
        e *= B / e.sum()
        x = np.zeros(self.m)
        x[supp] = e / p[supp]
        return x

    def dual(self, B):
        B = _check_budget(B)
        if np.any(self.d == 0):
            raise UnsupportedFamily("dual needs strictly positive coefficients")
        if self.rho == 1.0:
            return MaxRatio(1.0 / self.d, scale=1.0 / (self.scale * B))
        rh = rho_hat(self.rho)
        return ConvexCES(self.d ** (1.0 - rh), rh, scale=1.0 / (self.scale * B))

    def to_dict(self):
        return {"kind": "ces", "d": self.d.tolist(), "rho": self.rho, "scale": self.scale}


# ---------------------------------------------------------------------------
# functional interface

def evaluate(u, x):
    return u.value(x)


def gradient(u, x):
    return u.gradient(x)


def marshallian_demand(u, p, B):
    if not isinstance(u, UtilityFamily):
        raise UnsupportedFamily("marshallian demand is defined for utility families")
    return u.demand(p, B)


def indirect_utility(u, p, B):
    return u.indirect_utility(p, B)


def dual_utility(u, B):
    return u.dual(B)


def _path_terms(u, term):
    """Sums of per-node terms along root-to-leaf paths; returns the minimum."""
    if isinstance(u, NestedCES):
        def walk(node, acc):
            acc = acc + term(node.rho)
            out = []
            for child in node.children:
                if isinstance(child, Nest):
                    out.extend(walk(child, acc))
                else:
                    out.append(acc)
            return out

        return min(walk(u.root, 0.0))
    if isinstance(u, CES):
        if u.rho == 1.0:
            return term(1.0)
        return term(u.rho)
    if isinstance(u, Linear):
        return term(1.0)
    if isinstance(u, Leontief):
        return term(-np.inf)
    if isinstance(u, CobbDouglas):
        return term(0.0)
    raise UnsupportedFamily("index is defined for CES-structured kinds")


def substitutes_index(u):
    """min over root-to-leaf paths of sum min{rho/(rho-1), 0}; -inf for linear parts."""

    def term(rho):
        if rho == 1.0:
            return -np.inf
        if rho == -np.inf:
            return 0.0
        return min(rho_hat(rho), 0.0)

    return _path_terms(u, term)


def complements_index(u):
    """min over root-to-leaf paths of sum min{rho, 0}; -inf for Leontief parts."""

    def term(rho):
        return min(rho, 0.0)

    return _path_terms(u, term)


class FalsifierReport:
    """Outcome of a sampling falsifier: a pass is evidence, not proof."""

    def __init__(self, passed, samples, witness=None):
        self.passed = bool(passed)
        self.samples = int(samples)
        self.witness = witness

    def __bool__(self):
        return self.passed

    def __repr__(self):
        status = "pass" if self.passed else "FAIL"
        return "FalsifierReport(%s, samples=%d, witness=%r)" % (status, self.samples, self.witness)


def _log_uniform_prices(rng, m):
    return np.exp(rng.uniform(np.log(1e-2), np.log(1e2), size=m))


def check_gross_substitutes(u, B, sample_count=1000, seed=0):
    """Sample price raises and look for a decrease in an unchanged good's demand."""
    B = _check_budget(B)
    rng = np.random.default_rng(seed)
    m = u.m
    for s in range(sample_count):
        p = _log_uniform_prices(rng, m)
        raised = rng.random(m) < 0.5
        if raised.all() or not raised.any():
            continue
        q = p.copy()
        q[raised] *= rng.uniform(1.0, 10.0, size=int(raised.sum()))
        x = u.demand(p, B)
        xq = u.demand(q, B)
        fixed = ~raised
        tol = 1e-9 * (1.0 + np.abs(x[fixed]))
        if np.any(xq[fixed] < x[fixed] - tol):
            j = int(np.flatnonzero(fixed)[np.argmax(x[fixed] - xq[fixed])])
            witness = {"p": p.tolist(), "p_raised": q.tolist(), "good": j,
                       "demand_before": float(x[j]), "demand_after": float(xq[j])}
            return FalsifierReport(False, s + 1, witness)
    return FalsifierReport(True, sample_count)


def check_total_complements(u, B, sample_count=1000, seed=0):
    """Sample price pairs; the good with the largest proportional demand drop
    must have a non-decreased supporting price."""
    if isinstance(u, Leontief):
        raise UnsupportedFamily(
            "Leontief allocations have non-unique supporting prices; "
            "the total complements check is not defined for them"
        )
    B = _check_budget(B)
    rng = np.random.default_rng(seed)
    m = u.m
    supp = u.support()
    for s in range(sample_count):
        p = _log_uniform_prices(rng, m)
        q = _log_uniform_prices(rng, m)
        x = u.demand(p, B)
        xq = u.demand(q, B)
        if np.any(x[supp] <= 0) or np.any(xq[supp] <= 0):
            witness = {"p": p.tolist(), "demand": x.tolist()}
            return FalsifierReport(False, s + 1, witness)
        ratios = x[supp] / xq[supp]
        top = float(np.max(ratios))
        if top < 1.0:
            continue
        for j in np.flatnonzero(supp)[ratios >= top * (1 - TIE_RTOL)]:
            if p[j] > q[j] * (1 + 1e-9):
                witness = {"p": p.tolist(), "p_prime": q.tolist(), "good": int(j),
                           "ratio": float(x[j] / xq[j])}
                return FalsifierReport(False, s + 1, witness)
    return FalsifierReport(True, sample_count)


# ---------------------------------------------------------------------------
# JSON serialization

def family_to_dict(u):
    return u.to_dict()


def _nest_from_dict(obj):
    if obj.get("kind") == "good":
        return int(obj["j"])
    children = [(c["a"], _nest_from_dict(c["node"])) for c in obj["children"]]
    return Nest(obj["rho"], children)


def family_from_dict(obj, chores=False):
    if not isinstance(obj, dict) or "kind" not in obj:
        raise ValueError("family object must have a 'kind' field")
    kind = obj["kind"]
    scale = obj.get("scale", 1.0)
    if chores:
        if kind == "linear":
            return LinearDisutility(obj["d"], scale=scale)
        if kind == "maxratio":
            return MaxRatio(obj["d"], scale=scale)
        if kind == "ces":
            return ConvexCES(obj["d"], obj["rho"], scale=scale)
        raise ValueError("unknown disutility kind %r" % kind)
    if kind == "linear":
        return Linear(obj["a"], scale=scale)
    if kind == "leontief":
        return Leontief(obj["a"], scale=scale)
    if kind == "ces":
        return CES(obj["a"], obj["rho"], scale=scale)
    if kind == "cobbdouglas":
        return CobbDouglas(obj["a"], scale=scale)
    if kind == "nested":
        return NestedCES(_nest_from_dict(obj), m=obj.get("m"), scale=scale)
    if kind == "loglinear":
        return LogLinear(obj["a"], offset=obj.get("offset", 1.0), scale=scale)
    if kind == "minaffine":
        return MinAffine(obj["w"], obj["c0"], scale=scale)
    raise ValueError("unknown utility kind %r" % kind)


def family_to_json(u):
    return json.dumps(family_to_dict(u))


def family_from_json(text, chores=False):
    return family_from_dict(json.loads(text), chores=chores)
