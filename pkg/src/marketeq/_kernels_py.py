"""NumPy implementations of the hot dynamics kernels.

The compiled extension built from _kernels.pyx exports the same three
functions with identical semantics; _backend picks one at import time.
All price arguments must be strictly positive.
"""

import numpy as np

ROW_POS = 1
ROW_NEG = -1
ROW_COBB = 0
ROW_LEONTIEF = 2


def nested_spend(parent, rhohat, cw, leaf, p, B):
    """Per-good spending and root price index for one nested-CES tree.

    Nodes are in breadth-first order, parents before children. cw holds the
    contribution weight w_c^(1 - rhohat(parent)); leaf is the good index for
    leaf nodes and -1 for internal ones.
    """
    count = parent.shape[0]
    index = np.empty(count)
    contrib = np.zeros(count)
    agg = np.zeros(count)
    for i in range(count - 1, -1, -1):
        if leaf[i] >= 0:
            index[i] = p[leaf[i]]
        else:
            index[i] = agg[i] ** (1.0 / rhohat[i])
        par = parent[i]
        if par >= 0:
            contrib[i] = cw[i] * index[i] ** rhohat[par]
            agg[par] += contrib[i]
    budget = np.empty(count)
    budget[0] = B
    spend = np.zeros(p.shape[0])
    for i in range(count):
        par = parent[i]
        if par >= 0:
            budget[i] = budget[par] * contrib[i] / agg[par]
        if leaf[i] >= 0:
            spend[leaf[i]] += budget[i]
    return spend, float(index[0])


def flat_ces_spend(a1mr, rhohat, p, B):
    """Row-wise CES spending: w_ij = a1mr_ij * p_j^rhohat_i, rows scaled to B_i."""
    w = a1mr * np.power(p[None, :], rhohat[:, None])
    return w * (B / w.sum(axis=1))[:, None]


def ces_mirror_update(b, a, code, rho, B):
    """One proportional-response step for public-goods spending, CES agents.

    Row codes: 1 substitutes (0 < rho <= 1), -1 complements (rho < 0),
    0 Cobb-Douglas, 2 Leontief. Each row of b must be positive exactly where
    the matching row of a is.
    """
    x = b.sum(axis=0)
    out = np.zeros_like(b)
    for i in range(b.shape[0]):
        ai = a[i]
        supp = ai > 0
        num = np.zeros(x.shape[0])
        if code[i] == ROW_POS:
            num[supp] = ai[supp] * x[supp] ** rho[i]
        elif code[i] == ROW_NEG:
            num[supp] = (ai[supp] * (x[supp] / b[i, supp]) ** rho[i]) ** (1.0 / (1.0 - rho[i]))
        elif code[i] == ROW_LEONTIEF:
            num[supp] = ai[supp] * b[i, supp] / x[supp]
        else:
            num[supp] = ai[supp]
        out[i, supp] = B[i] * num[supp] / num.sum()
    return out
