"""Neuron-subnetworks of wide two-layer nets that match random-features predictors.

A width ``k1 * k2`` random net is read as ``k2`` blocks of ``k1`` neurons.
Each block gets its own random-features fit ``v`` (an interpolant of a finite
dataset, or a Monte Carlo estimate of an RKHS function). A neuron is kept when
its random output weight ``u`` lies within ``tau`` of the normalised fitted
coefficient ``v / M``. For ``u ~ U([-1, 1])`` the kept weights have mean
``tau * v / M``, so the sum over blocks, rescaled by ``c = M / (tau * k2)``,
concentrates on the average of the fitted predictors.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .net import DenseNetwork, RngStream, relu

_BLOCK_CHUNK = 256
_MC_CHUNK = 1 << 16


class SingularGram(ValueError):
    def __init__(self, lam_min: float, tol: float):
        self.lam_min = float(lam_min)
        self.tol = float(tol)
        super().__init__(f"Gram matrix is numerically singular (lambda_min={lam_min:.3e}, tol={tol:.3e})")


class ConstructionDegraded(RuntimeError):
    def __init__(self, sup_error: float, eps: float):
        self.sup_error = float(sup_error)
        self.eps = float(eps)
        super().__init__(f"measured error {sup_error:.4g} exceeds eps={eps:.4g}")


@dataclass(frozen=True)
class Activation:
    name: str = "relu"
    lipschitz: float = 1.0

    def __call__(self, t):
        if self.name == "relu":
            return relu(t)
        raise ValueError(f"unsupported activation {self.name!r}")


RELU = Activation()


def sample_feature_weights(k: int, d: int, gen: np.random.Generator) -> np.ndarray:
    """``k`` rows drawn from U([-1/sqrt(d), 1/sqrt(d)]^d), so every row has norm <= 1."""
    b = 1.0 / math.sqrt(d)
    return gen.uniform(-b, b, size=(k, d))


@dataclass(frozen=True, eq=False)
class FeatureModel:
    weights: np.ndarray
    coefficients: np.ndarray
    activation: Activation = RELU

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        u = np.asarray(self.coefficients, dtype=np.float64).ravel()
        if w.ndim != 2 or w.shape[0] != u.shape[0]:
            raise ValueError("need one coefficient per feature weight")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "coefficients", u)

    def predict(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return self.activation(x @ self.weights.T) @ self.coefficients

    def to_network(self) -> DenseNetwork:
        return DenseNetwork((self.weights, self.coefficients[None, :]))


@dataclass(frozen=True, eq=False)
class NeuronSubnetwork:
    """Two-layer net ``x -> c * sum_i b_i u_i relu(<w_i, x>)``."""

    weights: np.ndarray
    u: np.ndarray
    mask: np.ndarray
    scale: float
    activation: Activation = RELU

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        u = np.asarray(self.u, dtype=np.float64).ravel()
        b = np.asarray(self.mask).ravel()
        if not np.all((b == 0) | (b == 1)):
            raise ValueError("neuron mask must be 0/1")
        if w.ndim != 2 or w.shape[0] != u.size or u.size != b.size:
            raise ValueError("weights, u and mask disagree on the width")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "mask", b.astype(bool))
        object.__setattr__(self, "scale", float(self.scale))

    @property
    def width(self) -> int:
        return self.u.size

    @property
    def kept(self) -> int:
        return int(self.mask.sum())

    def raw(self, x) -> np.ndarray:
        """Unscaled pruned output ``g~(x)``; masked neurons are never evaluated."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        idx = np.flatnonzero(self.mask)
        return self.activation(x @ self.weights[idx].T) @ self.u[idx]

    def predict(self, x) -> np.ndarray:
        return self.scale * self.raw(x)

    def to_feature_model(self) -> FeatureModel:
        return FeatureModel(self.weights, self.scale * self.mask * self.u, self.activation)

    def to_json(self) -> dict:
        from .net import network_to_json

        doc = network_to_json(DenseNetwork((self.weights, self.u[None, :])))
        doc["scale"] = self.scale
        doc["neuron_mask"] = [int(v) for v in self.mask]
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "NeuronSubnetwork":
        from .net import network_from_json

        net = network_from_json(doc)
        return cls(net.layers[0], net.layers[1][0], np.asarray(doc["neuron_mask"]), doc["scale"])


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    H: np.ndarray
    n_samples: int
    std_error: np.ndarray
    lam_min: float = field(init=False)

    def __post_init__(self):
        H = np.asarray(self.H, dtype=np.float64)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise ValueError("kernel matrix must be square")
        if not np.allclose(H, H.T, rtol=0.0, atol=1e-12):
            raise ValueError("kernel matrix must be symmetric")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "lam_min", min_eigenvalue(H))


def min_eigenvalue(H) -> float:
    """Smallest eigenvalue of a symmetric matrix (LAPACK symmetric solver)."""
    if isinstance(H, KernelMatrix):
        H = H.H
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError("expected a square matrix")
    scale = max(float(np.max(np.abs(H))), 1.0) if H.size else 1.0
    if not np.allclose(H, H.T, rtol=0.0, atol=1e-12 * scale):
        raise ValueError("matrix is not symmetric")
    return float(np.linalg.eigvalsh(H)[0])


def kernel_matrix(points, activation: Activation = RELU, n_samples: int = 10**6,
                  rng: RngStream | None = None) -> KernelMatrix:
    """Monte Carlo estimate of ``H_ij = E_w[s(<w, x_i>) s(<w, x_j>)]``.

    Samples are drawn in fixed-size chunks, chunk ``c`` from stream ``rng.child(c)``,
    so the estimate does not depend on how the work is scheduled.
    """
    X = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if n_samples < 1:
        raise ValueError("need at least one Monte Carlo sample")
    rng = rng if rng is not None else RngStream(0)
    m, d = X.shape
    S = np.zeros((m, m))
    Q = np.zeros((m, m))
    for c, start in enumerate(range(0, n_samples, _MC_CHUNK)):
        size = min(_MC_CHUNK, n_samples - start)
        W = sample_feature_weights(size, d, rng.child(c).generator())
        F = activation(W @ X.T)
        S += F.T @ F
        F2 = F * F
        Q += F2.T @ F2
    H = S / n_samples
    var = np.maximum(Q / n_samples - H * H, 0.0)
    H = 0.5 * (H + H.T)
    return KernelMatrix(H, int(n_samples), np.sqrt(var / n_samples))


@dataclass
class DatasetFit:
    u: np.ndarray
    residual: float
    gram_lambda: float
    u_max: float
    bound: float | None = None

    @property
    def within_bound(self) -> bool | None:
        if self.bound is None:
            return None
        return self.u_max <= self.bound * (1 + 1e-6)


def fit_dataset_features(X, y, lam: float | None = None, lipschitz: float = 1.0) -> DatasetFit:
    """Minimum-norm coefficients ``u`` with ``X^T u = y`` for features ``X`` of shape ``(k, m)``.

    ``u = X (X^T X)^{-1} y`` via a Cholesky solve. When ``lam`` is given the
    sup norm of ``u`` is compared with ``4 L m / (3 lam)``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    k, m = X.shape
    if y.size != m:
        raise ValueError(f"{m} feature columns but {y.size} labels")
    G = X.T @ X
    tol = 1e-10 * float(np.trace(G)) / m
    lam_g = float(np.linalg.eigvalsh(G)[0])
    if not lam_g > tol:
        raise SingularGram(lam_g, tol)
    try:
        a = cho_solve(cho_factor(G, lower=True), y)
    except LinAlgError:
        raise SingularGram(lam_g, tol) from None
    u = X @ a
    residual = float(np.max(np.abs(X.T @ u - y))) if m else 0.0
    bound = None if lam is None else 4 * lipschitz * m / (3 * lam)
    return DatasetFit(u, residual, lam_g, float(np.max(np.abs(u))) if k else 0.0, bound)


# -- RKHS targets -----------------------------------------------------------

@dataclass(frozen=True)
class CoefficientFunction:
    """Picklable coefficient function ``h`` on the feature cube.

    ``kind`` is one of ``zero``, ``const`` (``h = C``), ``linear``
    (``h = C sqrt(d) w_axis``) or ``sign`` (``h = C sign(w_axis)``).
    """

    kind: str
    C: float = 1.0
    axis: int = 0

    def __call__(self, w) -> np.ndarray:
        w = np.atleast_2d(np.asarray(w, dtype=np.float64))
        if self.kind == "zero":
            return np.zeros(w.shape[0])
        if self.kind == "const":
            return np.full(w.shape[0], float(self.C))
        if self.kind == "linear":
            return self.C * math.sqrt(w.shape[1]) * w[:, self.axis]
        if self.kind == "sign":
            return self.C * np.sign(w[:, self.axis])
        raise ValueError(f"unknown coefficient function {self.kind!r}")


@lru_cache(maxsize=8)
def _cube_rule(d: int, per_dim: int) -> tuple[np.ndarray, np.ndarray]:
    # tensor Gauss-Legendre with a panel break at 0 on every axis, weights sum to 1
    half = max(per_dim // 2, 1)
    t, wt = np.polynomial.legendre.leggauss(half)
    b = 1.0 / math.sqrt(d)
    nodes_1d = np.concatenate([(t - 1) * b / 2, (t + 1) * b / 2])
    weights_1d = np.concatenate([wt, wt]) / 4.0
    grids = np.meshgrid(*([nodes_1d] * d), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    wgrid = np.meshgrid(*([weights_1d] * d), indexing="ij")
    weights = np.prod(np.stack([g.ravel() for g in wgrid], axis=1), axis=1)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


@dataclass(frozen=True)
class RkhsTarget:
    """``f(x) = c_d * integral of h(w) s(<w, x>) dw`` over ``[-1/sqrt(d), 1/sqrt(d)]^d``.

    With ``c_d = (sqrt(d)/2)^d`` equal to the inverse cube volume this is the
    expectation of ``h(w) s(<w, x>)`` under the uniform feature law.
    """

    h: CoefficientFunction
    d: int
    C: float
    activation: Activation = RELU

    @property
    def c_d(self) -> float:
        return (math.sqrt(self.d) / 2) ** self.d

    def coefficients(self, w) -> np.ndarray:
        vals = self.h(w)
        if np.any(np.abs(vals) > self.C * (1 + 1e-12)):
            raise ValueError("coefficient function exceeds its declared bound C")
        return vals

    def evaluate(self, x, n_nodes: int = 10**6, chunk: int = 1 << 14) -> np.ndarray:
        """Quadrature value of ``f`` at each row of ``x`` using about ``n_nodes`` nodes."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        per_dim = max(2, int(round(n_nodes ** (1.0 / self.d))))
        nodes, weights = _cube_rule(self.d, per_dim)
        hw = self.coefficients(nodes) * weights
        out = np.zeros(x.shape[0])
        for start in range(0, nodes.shape[0], chunk):
            sl = slice(start, start + chunk)
            out += self.activation(x @ nodes[sl].T) @ hw[sl]
        return out


def rkhs_feature_coefficients(target: RkhsTarget, weights) -> np.ndarray:
    """``u_i = h(w_i) / k``: the Monte Carlo estimator of the target, ``|u_i| <= C/k``."""
    w = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    if np.any(np.abs(w) > 1.0 / math.sqrt(target.d) + 1e-12):
        raise ValueError("feature weights must lie in the cube of half-width 1/sqrt(d)")
    return target.coefficients(w) / w.shape[0]


# -- mask, scale and assembly ----------------------------------------------

def closeness_mask(u_random, v_target, M: float, eps_prime: float) -> np.ndarray:
    """Keep neuron ``i`` iff ``|u_i - v_i / M| <= eps_prime``."""
    if not M > 0:
        raise ValueError("normalisation M must be positive")
    if eps_prime > 2:
        warnings.warn("eps_prime > 2 keeps every neuron", RuntimeWarning, stacklevel=2)
    u = np.asarray(u_random, dtype=np.float64)
    v = np.asarray(v_target, dtype=np.float64)
    return np.abs(u - v / M) <= eps_prime


def keep_probability(v_bar: float, threshold: float) -> float:
    """``P(|u - v_bar| <= threshold)`` for ``u ~ U([-1, 1])``."""
    lo, hi = max(-1.0, v_bar - threshold), min(1.0, v_bar + threshold)
    return max(hi - lo, 0.0) / 2.0


def subnetwork_scale(threshold: float, k2: int, M: float = 1.0) -> float:
    """Scale making ``c * g~`` an unbiased estimate of the block average.

    A kept weight has mean ``threshold * v / M``, so ``c = M / (threshold * k2)``.
    """
    return M / (threshold * k2)


def assemble_neuron_subnetwork(blocks: Sequence[tuple], threshold: float, M: float = 1.0,
                               activation: Activation = RELU) -> NeuronSubnetwork:
    """Concatenate ``(weights, u, mask)`` blocks and attach the averaging scale."""
    if len(blocks) == 0:
        raise ValueError("need at least one block")
    d = np.asarray(blocks[0][0]).shape[1]
    for j, (w, u, b) in enumerate(blocks):
        w = np.asarray(w)
        if w.ndim != 2 or w.shape[1] != d or w.shape[0] != np.size(u) or np.size(u) != np.size(b):
            raise ValueError(f"block {j} has inconsistent shapes")
    W = np.concatenate([np.asarray(b[0], dtype=np.float64) for b in blocks])
    u = np.concatenate([np.ravel(b[1]) for b in blocks])
    mask = np.concatenate([np.ravel(b[2]) for b in blocks])
    return NeuronSubnetwork(W, u, mask, subnetwork_scale(threshold, len(blocks), M), activation)


def _block_chunks(k2: int):
    for c, start in enumerate(range(0, k2, _BLOCK_CHUNK)):
        yield c, start, min(_BLOCK_CHUNK, k2 - start)


def finite_dataset_width(m: int, k1: int, lam: float, eps: float, delta: float, lipschitz: float = 1.0) -> float:
    """The k2 demanded by the finite-dataset theorem (reported, never enforced)."""
    L = lipschitz
    return 810 * L**8 * m**4 * k1**4 * math.log(2 * k1 / delta) / (lam**4 * eps**4)


def prune_finite_dataset(points, labels, k1: int, k2: int, eps: float, delta: float,
                         rng: RngStream, activation: Activation = RELU, lam: float | None = None,
                         kernel_samples: int = 10**6, strict: bool = False,
                         threshold: float | None = None):
    """Neuron-subnetwork with ``c g~(x_i) ~ y_i`` on a finite dataset.

    Returns ``(subnetwork, diagnostics)``. ``lam`` defaults to a Monte Carlo
    estimate of the kernel matrix's smallest eigenvalue. With ``strict`` a
    missed ``eps`` contract raises ConstructionDegraded instead of being
    reported in the diagnostics. ``threshold`` overrides the mask threshold
    ``eps / (4 k1 L M)``.
    """
    X = np.atleast_2d(np.asarray(points, dtype=np.float64))
    y = np.asarray(labels, dtype=np.float64).ravel()
    m, d = X.shape
    if y.size != m:
        raise ValueError("one label per point is required")
    if np.any(np.abs(y) > 1):
        raise ValueError("labels must lie in [-1, 1]")
    L = activation.lipschitz
    if lam is None:
        lam = kernel_matrix(X, activation, kernel_samples, rng.child("kernel")).lam_min
    if not lam > 0:
        raise SingularGram(lam, 0.0)
    M = 4 * L * m / (3 * lam)
    eps_prime = eps / M
    if threshold is None:
        threshold = eps_prime / (4 * k1 * L)
    W_all = np.empty((k1 * k2, d))
    u_all = np.empty(k1 * k2)
    b_all = np.empty(k1 * k2, dtype=bool)
    residuals = np.empty(k2)
    gram = np.empty(k2)
    vmax = np.empty(k2)
    for c, start, size in _block_chunks(k2):
        gen = rng.child("blocks").child(c).generator()
        W = sample_feature_weights(size * k1, d, gen).reshape(size, k1, d)
        U = gen.uniform(-1.0, 1.0, size=(size, k1))
        for t in range(size):
            fit = fit_dataset_features(activation(W[t] @ X.T), y, lam, L)
            j = start + t
            residuals[j], gram[j], vmax[j] = fit.residual, fit.gram_lambda, fit.u_max
            sl = slice(j * k1, (j + 1) * k1)
            W_all[sl] = W[t]
            u_all[sl] = U[t]
            b_all[sl] = closeness_mask(U[t], fit.u, M, threshold)
    net = NeuronSubnetwork(W_all, u_all, b_all, subnetwork_scale(threshold, k2, M), activation)
    pred = net.predict(X)
    sup = float(np.max(np.abs(pred - y)))
    raw = net.raw(X)
    diag = {
        "m": m,
        "lambda": float(lam),
        "M": M,
        "eps_prime": eps_prime,
        "threshold": threshold,
        "scale": net.scale,
        "scale_formula": "M / (threshold * k2)",
        "formula_scale": 32 * k1 * L * m / (3 * lam * eps * k2),
        "formula_k2": finite_dataset_width(m, k1, lam, eps, delta, L),
        "kept": net.kept,
        "keep_fraction": net.kept / net.width,
        "expected_keep_fraction": threshold,
        "max_block_residual": float(residuals.max()),
        "min_block_gram_lambda": float(gram.min()),
        "median_block_gram_lambda": float(np.median(gram)),
        "gram_normalisation": "unnormalised X^T X per block",
        "max_block_coefficient": float(vmax.max()),
        "predictions": [float(p) for p in pred],
        "sup_error": sup,
        "contract_met": sup <= eps,
        "sign_match": bool(np.all(np.sign(raw) == np.sign(y))),
    }
    if strict and sup > eps:
        raise ConstructionDegraded(sup, eps)
    return net, diag


def prune_rkhs(target: RkhsTarget, k1: int, k2: int, eps: float, delta: float, rng: RngStream,
               eval_points=None, n_nodes: int = 10**6, threshold: float | None = None):
    """Neuron-subnetwork approximating an RKHS target; returns ``(subnetwork, diagnostics)``.

    Each block's coefficients are ``h(w)/k1``, compared with ``u`` at threshold
    ``eps / (8 k1 L)`` unless ``threshold`` is given; the scale is
    ``1 / (threshold k2)``, that is ``8 k1 L / (eps k2)`` by default. When ``eval_points``
    are supplied the diagnostics include the sup error against the quadrature
    value of the target.
    """
    L = target.activation.lipschitz
    if target.C > k1:
        raise ValueError("C/k1 must not exceed 1 for the normalised coefficients")
    d = target.d
    if threshold is None:
        threshold = eps / (8 * k1 * L)
    W_all = np.empty((k1 * k2, d))
    u_all = np.empty(k1 * k2)
    b_all = np.empty(k1 * k2, dtype=bool)
    for c, start, size in _block_chunks(k2):
        gen = rng.child("blocks").child(c).generator()
        W = sample_feature_weights(size * k1, d, gen)
        U = gen.uniform(-1.0, 1.0, size=size * k1)
        v = target.coefficients(W) / k1
        sl = slice(start * k1, (start + size) * k1)
        W_all[sl], u_all[sl] = W, U
        b_all[sl] = closeness_mask(U, v, 1.0, threshold)
    net = NeuronSubnetwork(W_all, u_all, b_all, subnetwork_scale(threshold, k2), target.activation)
    diag = {
        "threshold": threshold,
        "scale": net.scale,
        "kept": net.kept,
        "keep_fraction": net.kept / net.width,
        "expected_keep_fraction": threshold,
    }
    if eval_points is not None:
        x = np.atleast_2d(np.asarray(eval_points, dtype=np.float64))
        err = np.abs(net.predict(x) - target.evaluate(x, n_nodes))
        diag["sup_error"] = float(err.max())
        diag["contract_met"] = bool(err.max() <= eps)
    return net, diag


__all__ = [
    "Activation",
    "RELU",
    "SingularGram",
    "ConstructionDegraded",
    "FeatureModel",
    "NeuronSubnetwork",
    "KernelMatrix",
    "DatasetFit",
    "CoefficientFunction",
    "RkhsTarget",
    "sample_feature_weights",
    "kernel_matrix",
    "min_eigenvalue",
    "fit_dataset_features",
    "rkhs_feature_coefficients",
    "closeness_mask",
    "keep_probability",
    "subnetwork_scale",
    "assemble_neuron_subnetwork",
    "finite_dataset_width",
    "prune_finite_dataset",
    "prune_rkhs",
]
