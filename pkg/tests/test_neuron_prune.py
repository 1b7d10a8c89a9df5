from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ticketprune.net import RngStream
from ticketprune.neuron_prune import (
    CoefficientFunction,
    ConstructionDegraded,
    FeatureModel,
    KernelMatrix,
    NeuronSubnetwork,
    RkhsTarget,
    SingularGram,
    assemble_neuron_subnetwork,
    closeness_mask,
    fit_dataset_features,
    keep_probability,
    kernel_matrix,
    min_eigenvalue,
    prune_finite_dataset,
    prune_rkhs,
    rkhs_feature_coefficients,
    sample_feature_weights,
    subnetwork_scale,
)

from conftest import ball_points


def sphere(m, d, seed):
    z = np.random.default_rng(seed).standard_normal((m, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def relu_features(W, X):
    return np.maximum(W @ X.T, 0.0)


# -- kernel matrix --------------------------------------------------------------

def test_kernel_at_origin_is_zero():
    km = kernel_matrix(np.zeros((1, 3)), n_samples=1000)
    assert km.H.shape == (1, 1) and km.H[0, 0] == 0.0


def test_kernel_duplicate_points_are_rank_deficient():
    x = sphere(1, 3, 0)
    km = kernel_matrix(np.vstack([x, x]), n_samples=10**5, rng=RngStream(1))
    assert np.array_equal(km.H[0], km.H[1][::-1]) or np.allclose(km.H[0], km.H[1], atol=0)
    assert abs(km.lam_min) <= 1e-12


def test_kernel_matches_independent_reference():
    X = np.array([[1.0, 0.0, 0.0], [0.6, 0.8, 0.0], [-0.3, 0.4, 0.5]])
    km = kernel_matrix(X, n_samples=10**6, rng=RngStream(3))
    g = np.random.default_rng(12345)
    b = 1 / math.sqrt(3)
    S = np.zeros((3, 3))
    n_ref = 10**7
    for _ in range(n_ref // 10**6):
        F = np.maximum(g.uniform(-b, b, (10**6, 3)) @ X.T, 0.0)
        S += F.T @ F
    ref = S / n_ref
    assert np.all(np.abs(km.H - ref) <= 3 * km.std_error)


def test_kernel_matrix_is_symmetric_with_consistent_lambda():
    km = kernel_matrix(sphere(4, 3, 1), n_samples=10**5)
    assert np.array_equal(km.H, km.H.T)
    assert km.lam_min == pytest.approx(np.linalg.eigvalsh(km.H)[0], abs=1e-15)


def test_kernel_matrix_rejects_asymmetric():
    with pytest.raises(ValueError):
        KernelMatrix(np.array([[1.0, 0.5], [0.4, 1.0]]), 1, np.zeros((2, 2)))


# -- eigenvalues ---------------------------------------------------------------

def test_min_eigenvalue_simple():
    assert min_eigenvalue(np.eye(3)) == pytest.approx(1.0, rel=1e-12)
    assert min_eigenvalue(np.diag([1.0, 2.0, 3.0])) == pytest.approx(1.0, rel=1e-12)


def cubic_min_root(A):
    # trigonometric solution of the characteristic cubic of a symmetric 3x3 matrix
    q = np.trace(A) / 3
    B = A - q * np.eye(3)
    p = math.sqrt(np.sum(B * B) / 6)
    r = np.linalg.det(B / p) / 2
    phi = math.acos(min(1.0, max(-1.0, r))) / 3
    return q + 2 * p * math.cos(phi + 2 * math.pi / 3)


@pytest.mark.parametrize("seed", range(10))
def test_min_eigenvalue_matches_cubic(seed):
    A = np.random.default_rng(seed).uniform(-1, 1, (3, 3))
    H = A.T @ A
    want = cubic_min_root(H)
    assert min_eigenvalue(H) == pytest.approx(want, rel=1e-8, abs=1e-14)


def test_min_eigenvalue_rejects_asymmetric():
    with pytest.raises(ValueError):
        min_eigenvalue(np.array([[1.0, 2.0], [0.0, 1.0]]))


# -- dataset fit ------------------------------------------------------------------

def test_fit_scalar():
    fit = fit_dataset_features(np.array([[2.0]]), np.array([1.0]))
    assert fit.u[0] == pytest.approx(0.5) and fit.residual == 0.0


def test_fit_zero_labels():
    X = relu_features(sample_feature_weights(20, 3, np.random.default_rng(0)), sphere(4, 3, 0))
    assert np.all(fit_dataset_features(X, np.zeros(4)).u == 0)


def test_fit_matches_pseudoinverse():
    W = sample_feature_weights(50, 3, RngStream(2).generator())
    X = relu_features(W, sphere(8, 3, 5))
    y = np.random.default_rng(5).uniform(-1, 1, 8)
    fit = fit_dataset_features(X, y)
    assert fit.residual <= 1e-8
    np.testing.assert_allclose(fit.u, np.linalg.pinv(X.T) @ y, atol=1e-8)


def test_fit_duplicate_points_singular():
    x = sphere(1, 3, 0)
    X = relu_features(sample_feature_weights(30, 3, np.random.default_rng(0)), np.vstack([x, x]))
    with pytest.raises(SingularGram):
        fit_dataset_features(X, np.array([1.0, -1.0]))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(2, 5), st.integers(0, 2**32 - 1))
def test_fit_interpolates_and_respects_coefficient_bound(m, d, seed):
    W = sample_feature_weights(200, d, np.random.default_rng(seed))
    X = relu_features(W, sphere(m, d, seed % 1000))
    y = np.random.default_rng(seed).uniform(-1, 1, m)
    try:
        fit = fit_dataset_features(X, y)
    except SingularGram:
        return
    if fit.gram_lambda >= 1e-6:
        assert fit.residual <= 1e-8
        assert fit.u_max <= 4 * m / (3 * fit.gram_lambda) * (1 + 1e-6)


# -- rkhs -------------------------------------------------------------------------

def test_rkhs_zero_and_constant_coefficients():
    W = sample_feature_weights(100, 2, np.random.default_rng(0))
    zero = RkhsTarget(CoefficientFunction("zero"), 2, 1.0)
    assert np.all(rkhs_feature_coefficients(zero, W) == 0)
    const = RkhsTarget(CoefficientFunction("const", 0.7), 2, 0.7)
    assert np.all(rkhs_feature_coefficients(const, W) == 0.7 / 100)


def midpoint_target(h, x, per_dim=1000):
    b = 1 / math.sqrt(2)
    t = (np.arange(per_dim) + 0.5) / per_dim * 2 * b - b
    g1, g2 = np.meshgrid(t, t, indexing="ij")
    nodes = np.stack([g1.ravel(), g2.ravel()], axis=1)
    hw = h(nodes) / nodes.shape[0]
    out = np.zeros(x.shape[0])
    for s in range(0, nodes.shape[0], 1 << 14):
        out += np.maximum(x @ nodes[s:s + (1 << 14)].T, 0) @ hw[s:s + (1 << 14)]
    return out


def test_rkhs_random_features_bound_against_quadrature():
    C, k = 1.0, 10**4
    target = RkhsTarget(CoefficientFunction("sign", C), 2, C)
    x = ball_points(1000, 2, 3)
    f = midpoint_target(target.h, x)
    np.testing.assert_allclose(target.evaluate(x), f, atol=1e-4)
    W = sample_feature_weights(k, 2, RngStream(4).generator())
    u = rkhs_feature_coefficients(target, W)
    assert np.all(np.abs(u) <= C / k)
    f_hat = np.maximum(x @ W.T, 0) @ u
    assert np.abs(f_hat - f).max() <= C / math.sqrt(k) * (4 + math.sqrt(2 * math.log(1 / 0.1)))


def test_rkhs_target_rejects_unbounded_coefficients():
    with pytest.raises(ValueError):
        RkhsTarget(CoefficientFunction("const", 2.0), 2, 1.0).coefficients(np.zeros((1, 2)))


# -- mask and assembly ------------------------------------------------------------------

def test_closeness_mask_extremes():
    u = np.linspace(-1, 1, 101)
    v = np.linspace(1, -1, 101) * 0.3
    assert closeness_mask(u, v, 1.0, 2.0).all()
    with pytest.warns(RuntimeWarning):
        assert closeness_mask(u, v, 1.0, 2.5).all()
    v_off = u + 0.5
    assert not closeness_mask(u, v_off, 1.0, 0.0).any()
    with pytest.raises(ValueError):
        closeness_mask(u, v, 0.0, 0.1)


def test_closeness_mask_normalises_by_M():
    b = closeness_mask(np.array([0.5, 0.5]), np.array([2.0, 4.0]), 4.0, 0.01)
    assert b.tolist() == [True, False]


@pytest.mark.parametrize("eps_prime", [0.05, 0.1, 0.2])
def test_keep_fraction_follows_interval_length(eps_prime):
    g = RngStream(8).generator()
    v_bar = g.uniform(-0.7, 0.7, 10**5)
    u = g.uniform(-1, 1, 10**5)
    frac = closeness_mask(u, v_bar, 1.0, eps_prime).mean()
    assert abs(frac - eps_prime) <= 0.005
    assert keep_probability(0.3, eps_prime) == pytest.approx(eps_prime)


@settings(max_examples=40, deadline=None)
@given(st.floats(-0.95, 0.95), st.floats(0.001, 1.0), st.integers(0, 2**32 - 1))
def test_keep_probability_law(v_bar, eps_prime, seed):
    n = 20000
    u = np.random.default_rng(seed).uniform(-1, 1, n)
    p = keep_probability(v_bar, eps_prime)
    if eps_prime <= 1 - abs(v_bar):
        assert p == pytest.approx(eps_prime)
    frac = closeness_mask(u, np.full(n, v_bar), 1.0, eps_prime).mean()
    assert abs(frac - p) <= 3 * math.sqrt(p * (1 - p) / n) + 1e-12


def test_assemble_scale_bookkeeping():
    g = np.random.default_rng(0)
    W, u = g.uniform(-0.5, 0.5, (10, 2)), g.uniform(-1, 1, 10)
    net = assemble_neuron_subnetwork([(W, u, np.ones(10))], threshold=1.0, M=1.0)
    assert net.scale == 1.0
    x = ball_points(50, 2, 1)
    np.testing.assert_allclose(net.predict(x), np.maximum(x @ W.T, 0) @ u, atol=1e-14)
    pruned = assemble_neuron_subnetwork([(W, u, np.zeros(10))] * 3, threshold=0.1)
    assert np.all(pruned.predict(x) == 0)
    with pytest.raises(ValueError):
        assemble_neuron_subnetwork([(W, u, np.ones(10)), (W[:, :1], u, np.ones(10))], threshold=0.1)


def test_scale_constant():
    assert subnetwork_scale(0.01, 100, M=2.0) == pytest.approx(2.0)


def random_subnetwork(seed, k=300, d=3):
    g = RngStream(seed).generator()
    return NeuronSubnetwork(sample_feature_weights(k, d, g), g.uniform(-1, 1, k),
                            g.uniform(size=k) < 0.3, g.uniform(0.5, 50))


@pytest.mark.parametrize("seed", range(5))
def test_subnetwork_equals_feature_model(seed):
    net = random_subnetwork(seed)
    x = ball_points(1000, 3, seed)
    np.testing.assert_allclose(net.to_feature_model().predict(x), net.predict(x), rtol=0, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_sign_is_scale_invariant(seed):
    net = random_subnetwork(seed)
    x = ball_points(200, 3, seed)
    assert np.array_equal(np.sign(net.predict(x)), np.sign(net.raw(x)))


def test_subnetwork_json_roundtrip():
    net = random_subnetwork(1, k=20)
    doc = json.loads(json.dumps(net.to_json()))
    assert doc["scale"] == net.scale and len(doc["neuron_mask"]) == 20
    back = NeuronSubnetwork.from_json(doc)
    x = ball_points(10, 3, 0)
    np.testing.assert_array_equal(back.predict(x), net.predict(x))


# -- pipelines -------------------------------------------------------------------------

def test_finite_dataset_single_point():
    X, y = np.array([[1.0, 0.0]]), np.array([1.0])
    lam = kernel_matrix(X, n_samples=10**6, rng=RngStream(0)).lam_min
    ok = 0
    for seed in range(50):
        net, diag = prune_finite_dataset(X, y, 64, 10**4, 0.5, 0.1, RngStream(seed), lam=lam)
        ok += diag["contract_met"]
        assert diag["max_block_residual"] <= 1e-8
        if diag["contract_met"]:
            assert diag["sign_match"]
    assert ok / 50 >= 0.9


def test_finite_dataset_duplicate_points():
    X = np.array([[1.0, 0.0], [1.0, 0.0]])
    with pytest.raises(SingularGram):
        prune_finite_dataset(X, np.array([1.0, -1.0]), 16, 10, 0.5, 0.1, RngStream(0), kernel_samples=10**4)


def test_finite_dataset_strict_raises_when_contract_missed():
    X = np.array([[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ConstructionDegraded):
        prune_finite_dataset(X, np.array([1.0, -1.0]), 16, 20, 0.05, 0.1, RngStream(0),
                             kernel_samples=10**5, strict=True)


def test_finite_dataset_scale_and_diagnostics():
    X, y = np.array([[1.0, 0.0]]), np.array([-1.0])
    net, diag = prune_finite_dataset(X, y, 32, 2000, 0.5, 0.1, RngStream(2), lam=0.1)
    M = 4 / (3 * 0.1)
    assert diag["M"] == pytest.approx(M)
    assert diag["threshold"] == pytest.approx(0.5 / M / (4 * 32))
    assert net.scale == pytest.approx(M / (diag["threshold"] * 2000))
    assert net.width == 32 * 2000 and diag["kept"] == net.kept


def test_rkhs_zero_target():
    target = RkhsTarget(CoefficientFunction("zero"), 2, 1.0)
    x = ball_points(200, 2, 0)
    _, diag = prune_rkhs(target, 50, 2000, 0.3, 0.1, RngStream(0), eval_points=x, n_nodes=10**4)
    assert diag["sup_error"] <= 0.3


def test_rkhs_linear_coefficient_example():
    target = RkhsTarget(CoefficientFunction("linear", 1.0), 2, 1.0)
    x = ball_points(1000, 2, 9)
    f = target.evaluate(x)
    ok = 0
    for seed in range(25):
        net, diag = prune_rkhs(target, 200, 5 * 10**4, 0.3, 0.1, RngStream(seed))
        ok += np.abs(net.predict(x) - f).max() <= 0.3
        assert abs(diag["keep_fraction"] - diag["threshold"]) <= 5 * math.sqrt(diag["threshold"] / net.width)
    assert ok / 25 >= 0.8
