"""The compiled kernels and the numpy fallback must agree bit for bit."""
from __future__ import annotations

import importlib
import os
import subprocess
import sys

import numpy as np
import pytest

from ticketprune import _kernels_py as py
from ticketprune import kernels

try:
    from ticketprune import _kernels as cy
except ImportError:  # pragma: no cover - only when the extension is not built
    cy = None

needs_cython = pytest.mark.skipif(cy is None, reason="compiled extension not built")


def _tiny(seed, shapes):
    g = np.random.default_rng(seed)
    shapes = np.array(shapes, dtype=np.int64)
    flat = g.uniform(-1, 1, size=int(np.sum(shapes[:, 0] * shapes[:, 1])))
    pts = g.uniform(-1, 1, size=(40, int(shapes[0, 1])))
    tgt = g.uniform(-1, 1, size=(40, int(shapes[-1, 0])))
    return shapes, flat, pts, tgt


def test_select_candidate_best_match_and_first_tie():
    w = np.array([0.5, 0.52, 0.48, 0.9, 0.52])
    u = np.array([1.0, 0.97, 1.0, 1.0, 0.97])
    for impl in filter(None, (py, cy)):
        assert impl.select_candidate(w, u, 0.5, 0.05, 1.0) == 0
        # entries 0 and 3 of the slice tie on |u w - 0.5|; the first wins
        assert impl.select_candidate(w[1:], u[1:], 0.5, 0.05, 1.0) == 0
        assert impl.select_candidate(w[2:], u[2:], 0.5, 0.05, 1.0) == 2
        assert impl.select_candidate(w, u, 0.5, 0.05, -1.0) == -1


@needs_cython
def test_select_candidate_agrees():
    g = np.random.default_rng(0)
    for _ in range(200):
        w, u = g.uniform(-1, 1, 500), g.uniform(-1, 1, 500)
        a, eps, sign = g.uniform(-0.6, 0.6), g.uniform(0.01, 0.2), g.choice([-1.0, 1.0])
        assert cy.select_candidate(w, u, a, eps, sign) == py.select_candidate(w, u, a, eps, sign)


@needs_cython
def test_coo_matmul_agrees():
    g = np.random.default_rng(1)
    rows = g.integers(0, 7, 30).astype(np.int64)
    cols = g.integers(0, 5, 30).astype(np.int64)
    vals = g.uniform(-1, 1, 30)
    x = g.uniform(-1, 1, (5, 11))
    dense = np.zeros((7, 5))
    np.add.at(dense, (rows, cols), vals)
    np.testing.assert_allclose(cy.coo_matmul(rows, cols, vals, x, 7), dense @ x, atol=1e-14)
    np.testing.assert_allclose(py.coo_matmul(rows, cols, vals, x, 7), dense @ x, atol=1e-14)


@needs_cython
@pytest.mark.parametrize("shapes", [[(3, 1), (1, 3)], [(2, 2), (2, 2), (1, 2)], [(2, 3), (2, 2)]])
def test_masked_sup_error_agrees(shapes):
    s, flat, pts, tgt = _tiny(4, shapes)
    for code in range(0, 1 << flat.size, 7):
        assert cy.masked_sup_error(s, flat, code, pts, tgt) == py.masked_sup_error(s, flat, code, pts, tgt)


@needs_cython
@pytest.mark.parametrize("seed", range(4))
def test_brute_force_agrees(seed):
    s, flat, pts, tgt = _tiny(seed, [(3, 2), (1, 3)])
    assert cy.brute_force_sup(s, flat, pts, tgt) == py.brute_force_sup(s, flat, pts, tgt)


def test_masked_sup_error_matches_direct_evaluation():
    s, flat, pts, tgt = _tiny(9, [(3, 2), (1, 3)])
    code = 0b101101011
    bits = np.array([(code >> i) & 1 for i in range(flat.size)], dtype=float)
    w1 = (flat[:6] * bits[:6]).reshape(3, 2)
    w2 = (flat[6:] * bits[6:]).reshape(1, 3)
    out = np.maximum(pts @ w1.T, 0) @ w2.T
    want = np.max(np.abs(out - tgt))
    assert kernels.masked_sup_error(s, flat, code, pts, tgt) == pytest.approx(want, abs=1e-14)


def test_fallback_selected_by_environment():
    env = dict(os.environ, TICKETPRUNE_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from ticketprune import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@needs_cython
def test_compiled_backend_is_default():
    if os.environ.get("TICKETPRUNE_PURE_PYTHON"):
        pytest.skip("fallback forced by environment")
    assert importlib.reload(kernels).BACKEND == "cython"
