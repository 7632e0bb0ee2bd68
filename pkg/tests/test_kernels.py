"""Compiled and pure-python kernels must agree bit-for-bit in semantics."""

import os
import subprocess
import sys

import numpy as np
import pytest

from marketeq import BACKEND, _kernels_py as ref

compiled = pytest.importorskip("marketeq._kernels")


def tree_arrays(rng, m):
    # root over one inner nest plus the remaining singleton leaves
    cut = max(1, m // 2)
    parent = [-1, 0] + [1] * cut + [0] * (m - cut)
    rhohat = np.zeros(len(parent))
    rhohat[0] = rng.uniform(-3.0, -0.2)
    rhohat[1] = rng.uniform(-3.0, -0.2)
    cw = np.concatenate(([0.0], rng.uniform(0.5, 2.0, len(parent) - 1)))
    leaf = np.array([-1, -1] + list(range(cut)) + list(range(cut, m)))
    return np.array(parent), rhohat, cw, leaf


def test_nested_spend_parity():
    rng = np.random.default_rng(0)
    for m in (2, 3, 5, 8):
        parent, rhohat, cw, leaf = tree_arrays(rng, m)
        p = rng.uniform(0.2, 3.0, m)
        B = float(rng.uniform(0.5, 3.0))
        s0, r0 = ref.nested_spend(parent, rhohat, cw, leaf, p, B)
        s1, r1 = compiled.nested_spend(parent, rhohat, cw, leaf, p, B)
        np.testing.assert_allclose(s1, s0, rtol=1e-12)
        assert r1 == pytest.approx(r0, rel=1e-12)
        assert np.sum(s0) == pytest.approx(B, rel=1e-12)


def test_flat_ces_spend_parity():
    rng = np.random.default_rng(1)
    n, m = 4, 6
    a1mr = rng.uniform(0.5, 2.0, (n, m))
    rhohat = rng.uniform(-3.0, -0.2, n)
    p = rng.uniform(0.2, 3.0, m)
    B = rng.uniform(0.5, 3.0, n)
    np.testing.assert_allclose(
        compiled.flat_ces_spend(a1mr, rhohat, p, B),
        ref.flat_ces_spend(a1mr, rhohat, p, B),
        rtol=1e-12,
    )


def test_ces_mirror_update_parity():
    rng = np.random.default_rng(2)
    n, m = 5, 4
    a = rng.uniform(0.5, 2.0, (n, m))
    a[0, 1] = 0.0  # a support hole must stay unspent
    code = np.array([ref.ROW_POS, ref.ROW_NEG, ref.ROW_COBB, ref.ROW_LEONTIEF, ref.ROW_POS])
    rho = np.array([0.5, -1.0, 0.0, 0.0, 0.9])
    B = rng.uniform(0.5, 3.0, n)
    b = np.where(a > 0, rng.uniform(0.1, 1.0, (n, m)), 0.0)
    b *= (B / b.sum(axis=1))[:, None]
    out_ref = ref.ces_mirror_update(b, a, code, rho, B)
    out_ext = compiled.ces_mirror_update(b, a, code, rho, B)
    np.testing.assert_allclose(out_ext, out_ref, rtol=1e-12)
    np.testing.assert_allclose(out_ref.sum(axis=1), B, rtol=1e-12)
    assert np.all(out_ref[a == 0] == 0)


def test_backend_selection():
    assert BACKEND == "compiled"
    env = dict(os.environ, MARKETEQ_BACKEND="py")
    out = subprocess.run(
        [sys.executable, "-c", "import marketeq; print(marketeq.BACKEND)"],
        capture_output=True,
        text=True,
        env=env,
        check=True,
    )
    assert out.stdout.strip() == "numpy"
