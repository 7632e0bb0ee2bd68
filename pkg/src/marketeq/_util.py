"""Shared numeric helpers: simplex projections, KL divergence, worker caps."""

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np


def thread_count():
    """Worker cap: the MD_THREADS environment variable, else the hardware count."""
    env = os.environ.get("MD_THREADS", "").strip()
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def parallel_map(fn, items):
    """Order-preserving map over independent items, threaded up to thread_count()."""
    items = list(items)
    workers = min(thread_count(), len(items))
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def project_simplex(v, total=1.0):
    """Euclidean projection of v onto {x >= 0, sum(x) = total} (sort-based)."""
    if total <= 0:
        raise ValueError("simplex total must be positive")
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    cumulative = np.cumsum(u) - total
    idx = np.arange(1, v.size + 1)
    k = idx[u - cumulative / idx > 0][-1]
    tau = cumulative[k - 1] / k
    return np.maximum(v - tau, 0.0)


def project_capped_simplex(v, cap):
    """Euclidean projection onto {x >= 0, sum(x) <= cap}."""
    w = np.maximum(np.asarray(v, dtype=float), 0.0)
    if w.sum() <= cap:
        return w
    return project_simplex(v, cap)


def kl_divergence(p, q):
    """sum p log(p/q) with the 0 log 0 = 0 convention; q must be positive where p is."""
    p = np.asarray(p, dtype=float).ravel()
    q = np.asarray(q, dtype=float).ravel()
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def generalized_kl(p, q):
    """sum [p log(p/q) - p + q]; nonnegative even for unnormalized inputs."""
    p = np.asarray(p, dtype=float).ravel()
    q = np.asarray(q, dtype=float).ravel()
    mask = p > 0
    val = float(np.sum(p[mask] * np.log(p[mask] / q[mask]))) - p.sum() + q.sum()
    return val


def format_float(x):
    """17 significant digits, enough for a bit-stable float64 round trip."""
    return "%.17g" % x
