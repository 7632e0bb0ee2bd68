"""Market equilibria for private and public goods and chores.

Utility and disutility families with closed-form demand and duals, market
instances with residual-based verification, convex-program objectives,
convergent spending/price dynamics, chore-market KKT solvers, and slow
reference oracles. A compiled kernel backs the hot loops when available;
set MARKETEQ_BACKEND=py to force the pure numpy fallback.
"""

from ._backend import BACKEND
from .utilities import (
    CES,
    CobbDouglas,
    ConvexCES,
    Leontief,
    Linear,
    LinearDisutility,
    LogLinear,
    MaxRatio,
    MinAffine,
    Nest,
    NestedCES,
    UnsupportedFamily,
    check_gross_substitutes,
    check_total_complements,
    complements_index,
    dual_utility,
    evaluate,
    family_from_dict,
    family_to_dict,
    gradient,
    indirect_utility,
    marshallian_demand,
    substitutes_index,
)
from .market import (
    CHORES,
    DEFAULT_TOL,
    FISHER,
    GOODS,
    LINDAHL,
    FisherEquilibrium,
    LindahlEquilibrium,
    MarketInstance,
    ResidualReport,
    dualize,
    dualize_equilibrium,
    instance_from_dict,
    instance_to_dict,
    verify_equilibrium,
    verify_fisher,
    verify_fisher_chores,
    verify_lindahl,
    verify_lindahl_chores,
)
from .programs import (
    NswValue,
    eg_objective,
    lindahl_nsw_objective,
    lindahl_prices,
    nsw,
    nsw_ratio,
    pin_cobb_douglas,
    shmyrev_ces_gradient,
    shmyrev_ces_objective,
    spending_rhos,
)
from .dynamics import (
    DynamicsConfig,
    DynamicsTrace,
    RULES,
    default_spending,
    fisher_excess_demand,
    prd_ces_mirror_step,
    prd_fisher_gs_step,
    prd_fisher_tc_step,
    prd_lindahl_gs_step,
    prd_lindahl_tc_step,
    run,
    tat_gamma_bound,
    tatonnement_fisher,
    tatonnement_lindahl,
)
from .chores import (
    ChoresConfig,
    IndirectDisutility,
    KktPoint,
    KktResidualReport,
    LindahlChoresResult,
    fisher_chores_kkt_residual,
    fisher_chores_objective,
    free_chore_reduction,
    indirect_disutility,
    lindahl_chores_objective,
    roy_chores,
    solve_fisher_chores,
    solve_lindahl_chores,
)
from .oracle import (
    OracleResult,
    lambert_w,
    oracle_demand,
    oracle_eg,
    oracle_nsw_lindahl,
)

__version__ = "0.1.0"
