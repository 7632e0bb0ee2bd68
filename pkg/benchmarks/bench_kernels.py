"""Time the compiled dynamics kernels against the numpy fallback.

Runs each kernel on matched random inputs, checks that both backends agree
to near machine precision, and prints per-call timings with the speedup.

    python benchmarks/bench_kernels.py [--agents N] [--goods M] [--reps K]
"""

import argparse
import time

import numpy as np

from marketeq import _kernels_py


def _load_compiled():
    try:
        from marketeq import _kernels
    except ImportError:
        return None
    return _kernels


def _time(fn, args, reps):
    best = float("inf")
    for _ in range(reps):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def _nested_inputs(rng, goods):
    # Two-level tree: root over `goods` singleton nests of one leaf each.
    count = 1 + goods
    parent = np.full(count, -1, dtype=np.int64)
    parent[1:] = 0
    rhohat = np.concatenate(([-1.5], np.full(goods, -0.5)))
    cw = np.concatenate(([0.0], rng.uniform(0.5, 2.0, goods)))
    leaf = np.concatenate(([-1], np.arange(goods))).astype(np.int64)
    p = rng.uniform(0.2, 3.0, goods)
    return parent, rhohat, cw, leaf, p, 1.0


def _flat_inputs(rng, agents, goods):
    a1mr = rng.uniform(0.5, 2.0, (agents, goods))
    rhohat = rng.uniform(-3.0, -0.2, agents)
    p = rng.uniform(0.2, 3.0, goods)
    B = rng.uniform(0.5, 2.0, agents)
    return a1mr, rhohat, p, B


def _mirror_inputs(rng, agents, goods):
    a = rng.uniform(0.5, 2.0, (agents, goods))
    b = rng.uniform(0.1, 1.0, (agents, goods))
    code = rng.integers(-1, 3, agents).astype(np.int64)
    rho = np.where(code == 1, 0.5, -1.0)
    B = b.sum(axis=1)
    return b, a, code, rho, B


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--agents", type=int, default=200)
    parser.add_argument("--goods", type=int, default=400)
    parser.add_argument("--reps", type=int, default=50)
    args = parser.parse_args()

    compiled = _load_compiled()
    if compiled is None:
        print("compiled extension not built; run pip install -e . first")
        return 1

    rng = np.random.default_rng(7)
    cases = [
        ("nested_spend", _nested_inputs(rng, args.goods)),
        ("flat_ces_spend", _flat_inputs(rng, args.agents, args.goods)),
        ("ces_mirror_update", _mirror_inputs(rng, args.agents, args.goods)),
    ]

    print(f"{'kernel':<20}{'numpy':>12}{'compiled':>12}{'speedup':>10}")
    for name, inputs in cases:
        ref = getattr(_kernels_py, name)(*inputs)
        out = getattr(compiled, name)(*inputs)
        if isinstance(ref, tuple):
            for r, o in zip(ref, out):
                np.testing.assert_allclose(o, r, rtol=1e-12, atol=1e-300)
        else:
            np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-300)
        t_py = _time(getattr(_kernels_py, name), inputs, args.reps)
        t_c = _time(getattr(compiled, name), inputs, args.reps)
        print(f"{name:<20}{t_py * 1e6:>10.1f}us{t_c * 1e6:>10.1f}us{t_py / t_c:>9.1f}x")
    print("backends agree to 1e-12 relative")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
