"""Iterative market dynamics.

Four proportional-response variants (private/public goods crossed with the
substitutes and complements regimes), the closed-form CES mirror update for
public-goods spending, and multiplicative price/allocation adjustment with
slope bounds derived from the agents' substitution structure. Runs record a
trace with potential, KL-to-reference, and equilibrium residual columns.
"""

import warnings

import numpy as np

from . import _backend, market, programs, utilities
from ._util import format_float, generalized_kl

SPENDING_RULES = (
    "prd-fisher-gs",
    "prd-lindahl-tc",
    "prd-lindahl-gs",
    "prd-fisher-tc",
    "prd-ces",
)
POINT_RULES = ("tat-fisher", "tat-lindahl")
RULES = SPENDING_RULES + POINT_RULES


class DynamicsConfig:
    """Iteration budget, stopping thresholds, trace cadence, and step parameters."""

    def __init__(
        self,
        max_iters=1000,
        stop_residual=1e-8,
        move_tol=1e-8,
        record_every=1,
        seed=0,
        gamma=None,
        allow_low_gamma=False,
        kl_reference=None,
        kl_label=None,
    ):
        self.max_iters = int(max_iters)
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")
        self.stop_residual = float(stop_residual)
        self.move_tol = float(move_tol)
        self.record_every = int(record_every)
        if self.record_every < 1:
            raise ValueError("record_every must be positive")
        self.seed = int(seed)
        self.gamma = gamma
        self.allow_low_gamma = bool(allow_low_gamma)
        self.kl_reference = (
            None if kl_reference is None else np.asarray(kl_reference, dtype=float)
        )
        self.kl_label = kl_label


class DynamicsTrace:
    """Recorded iterations of one dynamics run."""

    def __init__(self, rule, kl_label=None):
        self.rule = rule
        self.kl_label = kl_label
        self.iters = []
        self.potentials = []
        self.kls = []
        self.residuals = []
        self.states = []

    def record(self, it, state, potential, kl, residual):
        if self.iters and it <= self.iters[-1]:
            raise ValueError("iteration indices must increase")
        self.iters.append(int(it))
        self.potentials.append(float(potential))
        self.kls.append(float(kl))
        self.residuals.append(float(residual))
        self.states.append(np.array(state))

    def __len__(self):
        return len(self.iters)

    @property
    def final_state(self):
        return self.states[-1]

    @property
    def final_residual(self):
        return self.residuals[-1]

    def to_csv(self, path, include_state=False):
        header = ["iter", "potential", "kl", "residual"]
        if include_state:
            shape = self.states[0].shape
            if len(shape) == 2:
                header += ["b_%d_%d" % (i, j) for i in range(shape[0]) for j in range(shape[1])]
            else:
                header += ["x_%d" % j for j in range(shape[0])]
        lines = [",".join(header)]
        for k in range(len(self.iters)):
            row = [
                "%d" % self.iters[k],
                format_float(self.potentials[k]),
                format_float(self.kls[k]),
                format_float(self.residuals[k]),
            ]
            if include_state:
                row += [format_float(v) for v in self.states[k].ravel()]
            lines.append(",".join(row))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def support_matrix(inst):
    return np.stack([fam.support() for fam in inst.families])


def default_spending(inst):
    """Uniform spending over each agent's support."""
    supp = support_matrix(inst)
    b = np.zeros((inst.n, inst.m))
    for i in range(inst.n):
        b[i, supp[i]] = inst.budgets[i] / supp[i].sum()
    return b


def _check_spending_state(inst, b):
    b = np.array(b, dtype=float)
    if b.shape != (inst.n, inst.m):
        raise ValueError("spending state must be n x m")
    supp = support_matrix(inst)
    if np.any(b[~supp] != 0):
        raise ValueError("spending outside an agent's support")
    if np.any(b[supp] <= 0):
        raise ValueError("spending must be strictly positive on supports")
    return b


def _masked_prices(fam, p):
    # demand only reads supported coordinates; fill the rest with a safe value
    return np.where(fam.support(), p, 1.0)


def _column_totals(inst, b):
    totals = b.sum(axis=0)
    union = support_matrix(inst).any(axis=0)
    dead = union & (totals <= 0)
    if np.any(dead):
        raise ValueError("item %d attracts no spending" % int(np.flatnonzero(dead)[0]))
    return totals


def _require_goods(inst, market_kind, what):
    if inst.market != market_kind or inst.items != market.GOODS:
        raise ValueError("%s needs a %s-goods instance" % (what, market_kind))


def _require_differentiable(inst, what):
    ok = (utilities.Linear, utilities.CES, utilities.CobbDouglas, utilities.NestedCES)
    for fam in inst.families:
        if not isinstance(fam, ok):
            raise ValueError("%s needs differentiable CES-structured agents" % what)


def _nested_rhos(fam):
    out = []

    def walk(node):
        out.append(node.rho)
        for child in node.children:
            if isinstance(child, utilities.Nest):
                walk(child)

    walk(fam.root)
    return out


def _require_complements(inst, what):
    for fam in inst.families:
        if isinstance(fam, (utilities.Leontief, utilities.CobbDouglas)):
            continue
        if isinstance(fam, utilities.CES) and fam.rho < 0:
            continue
        if isinstance(fam, utilities.NestedCES) and all(r < 0 for r in _nested_rhos(fam)):
            continue
        raise ValueError("%s needs complements-regime agents (rho <= 0)" % what)


def prd_fisher_gs_step(inst, b):
    """Spending moves proportionally to the value each good contributes."""
    _require_goods(inst, market.FISHER, "prd_fisher_gs_step")
    _require_differentiable(inst, "prd_fisher_gs_step")
    p = _column_totals(inst, b)
    x = np.divide(b, p, out=np.zeros_like(b), where=p > 0)
    out = np.zeros_like(b)
    for i, fam in enumerate(inst.families):
        w = x[i] * fam.gradient(x[i])
        out[i] = inst.budgets[i] * w / w.sum()
    return out


def prd_lindahl_gs_step(inst, b):
    """Public-goods twin of the private substitutes update; shares one allocation."""
    _require_goods(inst, market.LINDAHL, "prd_lindahl_gs_step")
    _require_differentiable(inst, "prd_lindahl_gs_step")
    x = _column_totals(inst, b)
    out = np.zeros_like(b)
    for i, fam in enumerate(inst.families):
        w = x * fam.gradient(x)
        out[i] = inst.budgets[i] * w / w.sum()
    return out


def prd_lindahl_tc_step(inst, b):
    """Expenditure best response: re-buy the demanded bundle at personalized prices."""
    _require_goods(inst, market.LINDAHL, "prd_lindahl_tc_step")
    _require_complements(inst, "prd_lindahl_tc_step")
    x = _column_totals(inst, b)
    out = np.zeros_like(b)
    for i, fam in enumerate(inst.families):
        prices = np.divide(b[i], x, out=np.zeros(inst.m), where=x > 0)
        demand = fam.demand(np.where(fam.support(), prices, 1.0), inst.budgets[i])
        out[i] = prices * demand
    return out


def prd_fisher_tc_step(inst, b):
    """Re-spend on the demanded private bundle at common prices p_j = sum_i b_ij."""
    _require_goods(inst, market.FISHER, "prd_fisher_tc_step")
    _require_complements(inst, "prd_fisher_tc_step")
    p = _column_totals(inst, b)
    out = np.zeros_like(b)
    for i, fam in enumerate(inst.families):
        demand = fam.demand(_masked_prices(fam, p), inst.budgets[i])
        out[i] = p * demand
    return out


def fisher_excess_demand(inst, p):
    """Total demand minus unit supply at common prices."""
    total = np.zeros(inst.m)
    for fam, budget in zip(inst.families, inst.budgets):
        total += fam.demand(_masked_prices(fam, p), budget)
    return total - 1.0


def _mirror_data(inst):
    rhos = programs.spending_rhos(inst)
    has_pos = np.any((rhos > 0) & np.isfinite(rhos))
    has_neg = np.any(rhos < 0)
    if has_pos and has_neg:
        raise ValueError("mirror update needs all rho >= 0 or all rho <= 0")
    a = np.stack([fam.a for fam in inst.families])
    code = np.zeros(inst.n, dtype=np.int64)
    rho = np.zeros(inst.n)
    for i, r in enumerate(rhos):
        if r == programs.RHO_LEONTIEF:
            code[i] = 2
        elif r == 0.0:
            code[i] = 0
        elif r > 0:
            code[i] = 1
            rho[i] = r
        else:
            code[i] = -1
            rho[i] = r
    return a, code, rho, inst.budgets.astype(float)


def prd_ces_mirror_step(inst, b):
    """Closed-form mirror update for public-goods spending with flat CES agents."""
    _require_goods(inst, market.LINDAHL, "prd_ces_mirror_step")
    a, code, rho, budgets = _mirror_data(inst)
    b = np.ascontiguousarray(b, dtype=float)
    return _backend.ces_mirror_update(b, a, code, rho, budgets)


# ---------------------------------------------------------------------------
# multiplicative price/allocation adjustment

def tat_gamma_bound(inst, rule):
    """Smallest admissible slope divisor for the multiplicative adjustment."""
    if rule == "tat-fisher":
        worst = min(utilities.substitutes_index(fam) for fam in inst.families)
        if worst == -np.inf:
            raise ValueError("tat-fisher excludes agents with a linear component")
    elif rule == "tat-lindahl":
        worst = min(utilities.complements_index(fam) for fam in inst.families)
        if worst == -np.inf:
            raise ValueError("tat-lindahl excludes agents with a Leontief component")
    else:
        raise ValueError("unknown adjustment rule %r" % rule)
    return 8.0 - (252.0 / 25.0) * worst


def _gamma_vector(inst, rule, config):
    bound = tat_gamma_bound(inst, rule)
    if config.gamma is None:
        return np.full(inst.m, bound), bound
    gamma = np.asarray(config.gamma, dtype=float)
    if gamma.ndim == 0:
        gamma = np.full(inst.m, float(gamma))
    if gamma.shape != (inst.m,):
        raise ValueError("gamma must be a scalar or an m-vector")
    if np.any(gamma < bound - 1e-9):
        if not config.allow_low_gamma:
            raise ValueError(
                "gamma below the admissible bound %.6g; pass allow_low_gamma to proceed"
                % bound
            )
        warnings.warn("gamma below the admissible bound %.6g" % bound)
    return gamma, bound


def _value_share_closure(fam):
    """Spending of one agent at allocation x: budget times per-good value shares."""
    if isinstance(fam, utilities.NestedCES):
        flat = fam.dual(1.0).flatten()

        def spend(x, budget):
            return _backend.nested_spend(*flat, x, budget)[0]

        return spend
    if isinstance(fam, utilities.CobbDouglas):
        alpha = fam.alpha.copy()
        return lambda x, budget: budget * alpha
    if isinstance(fam, utilities.Linear):
        coeff, rho = fam.a, 1.0
    elif isinstance(fam, utilities.CES):
        coeff, rho = fam.a, fam.rho
    else:
        raise ValueError("no spending rule for kind %r" % fam.kind)

    def spend(x, budget):
        w = coeff * np.power(x, rho)
        return budget * w / w.sum()

    return spend


def _tat_residual(values, union):
    inside = np.max(np.abs(values[union])) if np.any(union) else 0.0
    outside = np.max(np.maximum(values[~union], 0.0)) if np.any(~union) else 0.0
    return float(max(inside, outside))


# ---------------------------------------------------------------------------
# run loop

def _spending_measure(inst, config):
    if inst.market == market.FISHER:
        def measure(b):
            p = _column_totals(inst, b)
            x = np.divide(b, p, out=np.zeros_like(b), where=p > 0)
            report = market.verify_fisher(
                inst, market.FisherEquilibrium(x, p), config.stop_residual
            )
            return max(
                report.affordability_gap, report.optimality_gap, report.clearing_gap
            ), None
    else:
        def measure(b):
            x = _column_totals(inst, b)
            prices = np.divide(b, x, out=np.zeros_like(b), where=x > 0)
            report = market.verify_lindahl(
                inst, market.LindahlEquilibrium(x, prices), config.stop_residual
            )
            return max(
                report.affordability_gap, report.optimality_gap, report.clearing_gap
            ), None
    return measure


def _spending_potential(inst):
    try:
        programs.spending_rhos(inst)
    except utilities.UnsupportedFamily:
        return lambda b: np.nan
    if inst.market != market.LINDAHL:
        return lambda b: np.nan
    return lambda b: programs.shmyrev_ces_objective(inst, b)


def _kl_closure(inst, config, matrix_state):
    ref = config.kl_reference
    if ref is None:
        return lambda state: np.nan
    if matrix_state:
        if ref.shape == (inst.n, inst.m):
            return lambda state: generalized_kl(ref, state)
        if ref.shape == (inst.m,):
            return lambda state: generalized_kl(ref, state.sum(axis=0))
        raise ValueError("kl_reference shape matches neither spending nor totals")
    if ref.shape != (inst.m,):
        raise ValueError("kl_reference must be an m-vector for point dynamics")
    return lambda state: generalized_kl(ref, state)


def run(inst, rule, init=None, config=None):
    """Iterate one dynamic until the stopping rule fires; returns the trace."""
    if config is None:
        config = DynamicsConfig()
    if rule not in RULES:
        raise ValueError("unknown rule %r" % rule)

    if rule in SPENDING_RULES:
        return _run_spending(inst, rule, init, config)
    return _run_point(inst, rule, init, config)


def _run_spending(inst, rule, init, config):
    step_fn = {
        "prd-fisher-gs": prd_fisher_gs_step,
        "prd-lindahl-tc": prd_lindahl_tc_step,
        "prd-lindahl-gs": prd_lindahl_gs_step,
        "prd-fisher-tc": prd_fisher_tc_step,
        "prd-ces": prd_ces_mirror_step,
    }[rule]
    # validate family compatibility before iterating
    probe = default_spending(inst) if init is None else _check_spending_state(inst, init)
    step_fn(inst, probe)
    state = probe
    measure = _spending_measure(inst, config)
    potential = _spending_potential(inst)
    kl = _kl_closure(inst, config, matrix_state=True)
    trace = DynamicsTrace(rule, config.kl_label)
    movement = np.inf
    last_recorded = -1
    for t in range(config.max_iters + 1):
        residual, _ = measure(state)
        if t % config.record_every == 0 or t == config.max_iters:
            trace.record(t, state, potential(state), kl(state), residual)
            last_recorded = t
        done = residual <= config.stop_residual and movement <= config.move_tol
        if done or t == config.max_iters:
            if last_recorded != t:
                trace.record(t, state, potential(state), kl(state), residual)
            break
        nxt = step_fn(inst, state)
        movement = float(np.max(np.abs(nxt - state)))
        state = nxt
    return trace


def _run_point(inst, rule, init, config):
    fisher = rule == "tat-fisher"
    _require_goods(inst, market.FISHER if fisher else market.LINDAHL, rule)
    gamma, _ = _gamma_vector(inst, rule, config)
    union = support_matrix(inst).any(axis=0)
    supply = float(inst.budgets.sum())
    if init is None:
        state = np.full(inst.m, supply / inst.m)
    else:
        state = np.array(init, dtype=float)
        if state.shape != (inst.m,) or np.any(state <= 0):
            raise ValueError("initial point must be a strictly positive m-vector")
    if not fisher:
        spenders = [_value_share_closure(fam) for fam in inst.families]
        try:
            programs.spending_rhos(inst)
            shmyrev_ok = True
        except utilities.UnsupportedFamily:
            shmyrev_ok = False

    kl = _kl_closure(inst, config, matrix_state=False)
    trace = DynamicsTrace(rule, config.kl_label)
    movement = np.inf
    last_recorded = -1
    for t in range(config.max_iters + 1):
        if fisher:
            signal = fisher_excess_demand(inst, state)
            potential = np.nan
        else:
            b = np.stack(
                [fn(state, budget) for fn, budget in zip(spenders, inst.budgets)]
            )
            signal = b.sum(axis=0) / state - 1.0
            potential = (
                programs.shmyrev_ces_objective(inst, b) if shmyrev_ok else np.nan
            )
        residual = _tat_residual(signal, union)
        if t % config.record_every == 0 or t == config.max_iters:
            trace.record(t, state, potential, kl(state), residual)
            last_recorded = t
        done = residual <= config.stop_residual and movement <= config.move_tol
        if done or t == config.max_iters:
            if last_recorded != t:
                trace.record(t, state, potential, kl(state), residual)
            break
        nxt = state * np.exp(np.minimum(signal, 1.0) / gamma)
        movement = float(np.max(np.abs(nxt - state)))
        state = nxt
    return trace


def tatonnement_fisher(inst, config=None):
    """Multiplicative price adjustment driven by excess demand."""
    return run(inst, "tat-fisher", None, config)


def tatonnement_lindahl(inst, config=None):
    """Multiplicative allocation adjustment driven by overpayment."""
    return run(inst, "tat-lindahl", None, config)
