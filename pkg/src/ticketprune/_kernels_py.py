"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``.

Accumulation order matches the compiled loops term by term, so both backends
return the same floats for ``select_candidate`` and the brute-force routines.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

_CHUNK = 1024


def select_candidate(w, u, target, eps, sign):
    w = np.asarray(w, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if u.shape[0] != w.shape[0]:
        raise ValueError("w and u must have the same length")
    ok = (np.abs(w - sign * target) <= eps) & (np.abs(u - sign) <= eps)
    idx = np.flatnonzero(ok)
    if idx.size == 0:
        return -1
    score = np.abs(u[idx] * w[idx] - target)
    return int(idx[np.argmin(score)])


def coo_matmul(rows, cols, vals, x_t, n_rows):
    x_t = np.asarray(x_t, dtype=np.float64)
    m = sp.csr_matrix((vals, (rows, cols)), shape=(n_rows, x_t.shape[0]))
    return np.asarray(m @ x_t)


def _chunk_errors(shapes, flat_w, codes, points, targets):
    """Sup error of every mask code in ``codes`` (shape (C,)) over ``points``."""
    n_bits = flat_w.shape[0]
    bits = ((codes[:, None] >> np.arange(n_bits, dtype=np.uint64)) & np.uint64(1)).astype(bool)
    h = np.broadcast_to(points, (codes.shape[0],) + points.shape)
    offset = 0
    n_layers = shapes.shape[0]
    for li in range(n_layers):
        n_out, n_in = int(shapes[li, 0]), int(shapes[li, 1])
        w = flat_w[offset:offset + n_out * n_in].reshape(n_out, n_in)
        b = bits[:, offset:offset + n_out * n_in].reshape(-1, n_out, n_in)
        out = np.zeros((codes.shape[0], points.shape[0], n_out))
        for o in range(n_out):
            acc = np.zeros((codes.shape[0], points.shape[0]))
            for i in range(n_in):
                term = w[o, i] * h[:, :, i]
                acc = np.where(b[:, o, i][:, None], acc + term, acc)
            if li < n_layers - 1:
                acc = np.where(acc < 0.0, 0.0, acc)
            out[:, :, o] = acc
        h = out
        offset += n_out * n_in
    if h.shape[2] == 1:
        err = np.abs(h[:, :, 0] - targets[None, :, 0])
    else:
        sq = np.zeros(h.shape[:2])
        for o in range(h.shape[2]):
            diff = h[:, :, o] - targets[None, :, o]
            sq = sq + diff * diff
        err = np.sqrt(sq)
    return err.max(axis=1)


def masked_sup_error(shapes, flat_w, code, points, targets):
    codes = np.array([code], dtype=np.uint64)
    return float(_chunk_errors(shapes, flat_w, codes, points, targets)[0])


def brute_force_sup(shapes, flat_w, points, targets):
    n_codes = 1 << flat_w.shape[0]
    best, best_code = np.inf, 0
    for start in range(0, n_codes, _CHUNK):
        codes = np.arange(start, min(start + _CHUNK, n_codes), dtype=np.uint64)
        errs = _chunk_errors(shapes, flat_w, codes, points, targets)
        j = int(np.argmin(errs))
        if errs[j] < best:
            best, best_code = float(errs[j]), int(codes[j])
    return best_code, best
