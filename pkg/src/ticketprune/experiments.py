"""Experiment definitions: config validation, width resolution and seeded trials.

Every experiment is a picklable trial function of an :class:`RngStream`, run
through :func:`verify.success_rate`. Reports carry the resolved config, so a
run can be replayed from its report alone. They never contain timings.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields
from functools import partial
from pathlib import Path

import numpy as np

from . import neuron_prune as npr
from . import weight_prune as wp
from .net import (
    BinaryMask,
    DenseNetwork,
    RngStream,
    TargetSpec,
    forward,
    forward_trace,
    relu,
    sample_random_net,
    sample_target_net,
)
from .verify import (
    DomainSampler,
    TrialOutcome,
    binomial_slack,
    brute_force_mask,
    masked_error,
    success_rate,
)

EXPERIMENTS = (
    "lemma-one-coord",
    "lemma-linear",
    "lemma-neuron",
    "thm2-shallow",
    "thm1-deep",
    "finite-dataset",
    "rkhs",
    "kernel-eigen",
    "brute-force-oracle",
)

_WIDTH_KEYS = {
    "lemma-one-coord": ("k",),
    "lemma-linear": ("k",),
    "lemma-neuron": ("k1", "k2"),
    "thm2-shallow": ("k1", "k2"),
    "thm1-deep": ("k",),
    "finite-dataset": ("k1", "k2"),
    "rkhs": ("k1", "k2"),
    "kernel-eigen": ("k",),
    "brute-force-oracle": (),
}

_SAMPLER_MODE = {
    "lemma-one-coord": "linf-cube",
    "lemma-linear": "linf-cube",
    "lemma-neuron": "l2-ball",
    "thm2-shallow": "l2-ball",
    "thm1-deep": "l2-ball",
    "rkhs": "l2-ball",
    "brute-force-oracle": "linf-cube",
}

# candidate points for the eigenvalue experiment, dropped from the end while
# the required feature count is too large
_EIGEN_POINTS = [
    [1.0, 0.0],
    [-1.0, 0.0],
    [0.0, 1.0],
    [0.0, -1.0],
    [math.sqrt(0.5), math.sqrt(0.5)],
]


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int = 0
    trials: int = 20
    d: int = 3
    n: int = 1
    l: int = 1
    s: int | None = None
    eps: float = 0.5
    delta: float = 0.1
    eps_prime: float | None = None
    widths: str | dict = "paper-formula"
    sampler: dict = field(default_factory=dict)
    m: int | None = None
    points: str | list = "axes"
    labels: list | None = None
    dataset: str | None = None
    h: str = "linear"
    C: float = 1.0
    kernel_samples: int = 10**6
    reference_samples: int = 10**7
    quadrature_nodes: int = 10**6
    max_features: int = 10**6

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if "experiment" not in doc:
            raise ConfigError("config must name an experiment")
        cfg = cls(**doc)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; expected one of {', '.join(EXPERIMENTS)}")
        for name in ("seed", "trials", "d", "n", "l"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool):
                raise ConfigError(f"{name} must be an integer")
        if self.trials < 1 or self.d < 1 or self.n < 1 or self.l < 1:
            raise ConfigError("trials, d, n and l must be positive")
        if self.s is not None and not (1 <= self.s <= max(self.d, self.n)):
            raise ConfigError("s must lie between 1 and max(d, n)")
        if not (0 < self.eps) or not (0 < self.delta < 1):
            raise ConfigError("eps must be positive and delta in (0, 1)")
        if self.experiment in ("lemma-one-coord", "lemma-linear", "lemma-neuron",
                               "thm2-shallow", "thm1-deep") and not self.eps < 1:
            raise ConfigError("width formulas need eps in (0, 1)")
        if self.experiment == "thm1-deep" and self.l < 1:
            raise ConfigError("deep experiment needs l >= 1")
        if self.experiment in ("lemma-one-coord", "lemma-linear", "lemma-neuron") and self.n != 1:
            raise ConfigError(f"{self.experiment} targets a single neuron; n must be 1")
        keys = _WIDTH_KEYS[self.experiment]
        if isinstance(self.widths, str):
            if self.widths != "paper-formula":
                raise ConfigError("widths must be 'paper-formula' or a mapping")
            if self.experiment in ("finite-dataset", "rkhs"):
                raise ConfigError(f"{self.experiment} widths from the theorem are not instantiable; give k1 and k2")
        elif isinstance(self.widths, dict):
            missing = [k for k in keys if k not in self.widths]
            extra = [k for k in self.widths if k not in keys]
            if missing or extra:
                raise ConfigError(f"{self.experiment} expects widths {list(keys)}")
            if any(not isinstance(v, int) or v < 1 for v in self.widths.values()):
                raise ConfigError("widths must be positive integers")
        else:
            raise ConfigError("widths must be 'paper-formula' or a mapping")
        mode = self.sampler.get("mode")
        if mode is not None and mode not in ("l2-ball", "linf-cube"):
            raise ConfigError(f"unknown sampler mode {mode!r}")
        if set(self.sampler) - {"mode", "n"}:
            raise ConfigError("sampler accepts only 'mode' and 'n'")
        if self.experiment == "rkhs" and self.h not in ("zero", "const", "linear", "sign"):
            raise ConfigError(f"unknown coefficient function {self.h!r}")
        if self.experiment == "finite-dataset" and self.dataset is None and self.labels is None:
            raise ConfigError("finite-dataset needs labels or a dataset file")

    def m_or(self, default: int) -> int:
        return self.m if self.m is not None else default

    @property
    def sparsity(self) -> int:
        if self.s is not None:
            return self.s
        if self.experiment == "thm1-deep":
            return max(self.d, self.n)
        return self.d


def load_dataset(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """CSV rows ``x_1, ..., x_d, y`` (an optional header is skipped) or JSON ``{"x": ..., "y": ...}``."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        doc = json.loads(path.read_text())
        X, y = np.asarray(doc["x"], dtype=np.float64), np.asarray(doc["y"], dtype=np.float64)
    else:
        rows = []
        with path.open(newline="") as fh:
            for rec in csv.reader(fh):
                if not rec or rec[0].strip().startswith("#"):
                    continue
                try:
                    rows.append([float(v) for v in rec])
                except ValueError:
                    if rows:
                        raise
        arr = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        X, y = arr[:, :-1], arr[:, -1]
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.size:
        raise ValueError(f"malformed dataset {path}")
    return X, y


def resolve_widths(cfg: ExperimentConfig, lam: float | None = None) -> dict:
    if isinstance(cfg.widths, dict):
        return dict(cfg.widths)
    s = cfg.sparsity
    e = cfg.experiment
    if e == "lemma-one-coord":
        return wp.required_width("one_coord", eps=cfg.eps, delta=cfg.delta)
    if e == "lemma-linear":
        return wp.required_width("linear_func", eps=cfg.eps, delta=cfg.delta, s=s)
    if e == "lemma-neuron":
        return wp.required_width("one_neuron", eps=cfg.eps, delta=cfg.delta, s=s)
    if e == "thm2-shallow":
        return wp.required_width("relu_network", eps=cfg.eps, delta=cfg.delta, s=s, n=cfg.n)
    if e == "thm1-deep":
        return wp.required_width("deep", eps=cfg.eps, delta=cfg.delta, s=s, n=cfg.n, l=cfg.l)
    if e == "kernel-eigen":
        return {"k": eigen_feature_count(cfg.m_or(len(_EIGEN_POINTS)), lam, cfg.delta)}
    return {}


def eigen_feature_count(m: int, lam: float, delta: float) -> int:
    """Features needed for the empirical kernel to keep 3/4 of ``lam``."""
    return math.ceil(64 * m**2 * math.log(m / delta) ** 2 / lam**2)


def _sampler(cfg: ExperimentConfig, rng: RngStream, d: int | None = None, n: int | None = None) -> DomainSampler:
    mode = cfg.sampler.get("mode", _SAMPLER_MODE.get(cfg.experiment, "l2-ball"))
    count = cfg.sampler.get("n", 10**4 if n is None else n)
    return DomainSampler(mode, d or cfg.d, count, rng.child("sampler"))


def _failed(exc: wp.ConstructionFailed) -> TrialOutcome:
    return TrialOutcome(0, False, failure=exc.to_dict())


# -- weight-subnetwork trials -------------------------------------------------

def _trial_one_coord(cfg: ExperimentConfig, widths: dict, rng: RngStream) -> TrialOutcome:
    d, s = cfg.d, cfg.sparsity
    G = sample_random_net([d, widths["k"], 1], rng.child("G"))
    gen = rng.child("target").generator()
    i = int(gen.integers(d))
    alpha = float(gen.uniform(-1.0, 1.0) / math.sqrt(s))
    try:
        pick = wp.prune_scalar(i, alpha, G.layers[0], G.layers[1][0], cfg.eps)
    except wp.ConstructionFailed as exc:
        return _failed(exc)
    mask = wp.two_layer_mask(pick.mask(*G.layers[0].shape))
    x = _sampler(cfg, rng).points()
    err = float(np.max(np.abs(forward(G, x, mask)[:, 0] - alpha * x[:, i])))
    return TrialOutcome(0, True, err, extra={
        "coordinate": i, "alpha": alpha, "selection": pick.indices,
        "active": int(mask.layers[0].sum()), "active_bound": 2, "active_total": mask.active_count(),
    })


def _trial_linear(cfg: ExperimentConfig, widths: dict, rng: RngStream) -> TrialOutcome:
    d, s = cfg.d, cfg.sparsity
    F = sample_target_net(TargetSpec(d, 1, 1, s), rng.child("F"))
    G = sample_random_net([d, widths["k"], 1], rng.child("G"))
    w_star = F.layers[0][0]
    try:
        first, cert = wp.prune_linear(w_star, G.layers[0], G.layers[1][0], cfg.eps, s)
    except wp.ConstructionFailed as exc:
        return _failed(exc)
    mask = wp.two_layer_mask(first)
    x = _sampler(cfg, rng).points()
    err = float(np.max(np.abs(forward(G, x, mask)[:, 0] - x @ w_star)))
    return TrialOutcome(0, True, err, extra={
        "active": int(first.sum()), "active_total": mask.active_count(),
        "active_bound": 2 * s, "max_row_active": int(first.sum(axis=1).max()),
        "certificate": cert.to_dict(),
    })


def _trial_neuron(cfg: ExperimentConfig, widths: dict, rng: RngStream) -> TrialOutcome:
    d, s = cfg.d, cfg.sparsity
    F = sample_target_net(TargetSpec(d, 1, 2, s), rng.child("F"))
    G = sample_random_net([d, widths["k1"], widths["k2"], 1], rng.child("G"))
    try:
        mask, cert = wp.prune_neuron(F.layers[0][0], float(F.layers[1][0, 0]), G.layers[0],
                                     G.layers[1], G.layers[2][0], cfg.eps, s)
    except wp.ConstructionFailed as exc:
        return _failed(exc)
    x = _sampler(cfg, rng).points()
    err = float(np.max(np.abs(forward(G, x, mask) - forward(F, x))))
    return TrialOutcome(0, True, err, extra={
        "active": mask.active_count(), "active_per_layer": mask.per_layer_counts(),
        "active_bound": 4 * s + 1, "certificate": cert.to_dict(),
    })


def _trial_shallow(cfg: ExperimentConfig, widths: dict, rng: RngStream) -> TrialOutcome:
    d, n, s = cfg.d, cfg.n, cfg.sparsity
    F = sample_target_net(TargetSpec(d, n, 2, s), rng.child("F"))
    G = sample_random_net([d, widths["k1"], widths["k2"], 1], rng.child("G"))
    try:
        mask, cert = wp.prune_two_layer_target(F, G, cfg.eps, s)
    except wp.ConstructionFailed as exc:
        return _failed(exc)
    x = _sampler(cfg, rng).points()
    err = float(np.max(np.abs(forward(G, x, mask) - forward(F, x))))
    return TrialOutcome(0, True, err, extra={
        "active": mask.active_count(), "active_per_layer": mask.per_layer_counts(),
        "active_bound": 4 * s * n + n, "certificate": cert.to_dict(),
    })


def deep_random_dims(d: int, n: int, l: int, k: int) -> list[int]:
    return [d] + [k, n] * (l - 1) + [k, 1]


def layer_drift(F: DenseNetwork, G: DenseNetwork, mask: BinaryMask, x) -> np.ndarray:
    """``|x^(i) - x_hat^(i)|_2`` per target layer ``i`` (columns) and point (rows)."""
    tf = forward_trace(F, x)
    tg = forward_trace(G, x, mask)
    return np.stack(
        [np.linalg.norm(tf[i] - tg[2 * i + 1], axis=1) for i in range(F.depth)], axis=1
    )


def _trial_deep(cfg: ExperimentConfig, widths: dict, rng: RngStream) -> TrialOutcome:
    d, n, l, s = cfg.d, cfg.n, cfg.l, cfg.sparsity
    F = sample_target_net(TargetSpec(d, n, l, s), rng.child("F"))
    G = sample_random_net(deep_random_dims(d, n, l, widths["k"]), rng.child("G"))
    try:
        mask, cert = wp.prune_deep(F, G, cfg.eps, s)
    except wp.ConstructionFailed as exc:
        return _failed(exc)
    x = _sampler(cfg, rng).points()
    drift = layer_drift(F, G, mask, x)
    limits = cfg.eps * np.arange(1, l + 1) / l
    err = float(drift[:, -1].max())
    return TrialOutcome(0, True, err, extra={
        "active": mask.active_count(), "active_per_layer": mask.per_layer_counts(),
        "active_bound": 4 * s * n * l + 2 * s,
        "max_drift": [float(v) for v in drift.max(axis=0)],
        "drift_limits": [float(v) for v in limits],
        "drift_ok": bool(np.all(drift <= limits)),
        "certificate": cert.to_dict(),
    })


# -- neuron-subnetwork trials -------------------------------------------------

def dataset_points(cfg: ExperimentConfig, rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
    if cfg.dataset is not None:
        return load_dataset(cfg.dataset)
    y = np.asarray(cfg.labels, dtype=np.float64)
    m, d = y.size, cfg.d
    if isinstance(cfg.points, list):
        X = np.asarray(cfg.points, dtype=np.float64)
    elif cfg.points == "axes":
        axes = [sign * np.eye(d)[i] for i in range(d) for sign in (1.0, -1.0)]
        if m > len(axes):
            raise ConfigError(f"only {len(axes)} signed axis points in dimension {d}")
        X = np.asarray(axes[:m])
    elif cfg.points == "sphere":
        z = rng.child("points").generator().standard_normal((m, d))
        X = z / np.linalg.norm(z, axis=1, keepdims=True)
    else:
        raise ConfigError(f"unknown point set {cfg.points!r}")
    if X.shape != (m, d):
        raise ConfigError("points and labels disagree")
    return X, y


def _trial_finite(cfg: ExperimentConfig, widths: dict, X, y, lam: float, rng: RngStream) -> TrialOutcome:
    try:
        net, diag = npr.prune_finite_dataset(X, y, widths["k1"], widths["k2"], cfg.eps, cfg.delta,
                                             rng, lam=lam, threshold=cfg.eps_prime)
    except npr.SingularGram as exc:
        return TrialOutcome(0, False, failure={"stage": "singular-gram", "lambda": exc.lam_min})
    keep = ("sign_match", "kept", "keep_fraction", "scale", "max_block_residual",
            "min_block_gram_lambda", "predictions", "contract_met")
    return TrialOutcome(0, True, diag["sup_error"], extra={k: diag[k] for k in keep})


def _coefficient(cfg: ExperimentConfig) -> npr.CoefficientFunction:
    return npr.CoefficientFunction(cfg.h, cfg.C)


def _trial_rkhs(cfg: ExperimentConfig, widths: dict, rng: RngStream) -> TrialOutcome:
    target = npr.RkhsTarget(_coefficient(cfg), cfg.d, cfg.C)
    x = _sampler(cfg, rng, n=1000).points()
    net, diag = npr.prune_rkhs(target, widths["k1"], widths["k2"], cfg.eps, cfg.delta, rng,
                               eval_points=x, n_nodes=cfg.quadrature_nodes,
                               threshold=cfg.eps_prime)
    return TrialOutcome(0, True, diag["sup_error"], extra={
        k: diag[k] for k in ("kept", "keep_fraction", "expected_keep_fraction", "scale")
    })


def eigen_points(cfg: ExperimentConfig) -> np.ndarray:
    if isinstance(cfg.points, list):
        return np.asarray(cfg.points, dtype=np.float64)
    pts = np.asarray(_EIGEN_POINTS)
    return pts[: cfg.m_or(len(_EIGEN_POINTS))]


def empirical_kernel(X, k: int, rng: RngStream) -> np.ndarray:
    """``(1/k) sum_i s(<w_i, x_a>) s(<w_i, x_b>)`` over ``k`` fresh features."""
    m, d = X.shape
    S = np.zeros((m, m))
    chunk = 1 << 16
    for c, start in enumerate(range(0, k, chunk)):
        W = npr.sample_feature_weights(min(chunk, k - start), d, rng.child(c).generator())
        F = relu(W @ X.T)
        S += F.T @ F
    H = S / k
    return 0.5 * (H + H.T)


def _trial_eigen(cfg: ExperimentConfig, widths: dict, X, lam: float, rng: RngStream) -> TrialOutcome:
    H = empirical_kernel(X, widths["k"], rng.child("features"))
    lam_k = npr.min_eigenvalue(H)
    floor = 0.75 * lam
    return TrialOutcome(0, True, floor - lam_k, ok=lam_k >= floor,
                        extra={"lambda_empirical": lam_k, "lambda_floor": floor})


def reference_eigen_setup(cfg: ExperimentConfig, rng: RngStream) -> tuple[np.ndarray, float, int, list]:
    """Shrink the point set until the feature count fits, using a reference kernel."""
    X = eigen_points(cfg)
    history = []
    while True:
        km = npr.kernel_matrix(X, n_samples=cfg.reference_samples, rng=rng.child("reference").child(len(X)))
        lam = km.lam_min
        if not lam > 0:
            raise ConfigError("reference kernel matrix is singular")
        if isinstance(cfg.widths, dict):
            k = cfg.widths["k"]
        else:
            k = eigen_feature_count(len(X), lam, cfg.delta)
        history.append({"m": len(X), "lambda": lam, "k": k})
        if k <= cfg.max_features or isinstance(cfg.widths, dict):
            return X, lam, k, history
        if len(X) <= 1:
            raise ConfigError("no point subset keeps the feature count within max_features")
        X = X[:-1]


# -- brute-force oracle -------------------------------------------------------

_PLANTED_SHAPES = [
    ("one_coord", 1, 4),
    ("one_coord", 2, 4),
    ("linear", 2, 4),
    ("one_coord", 3, 4),
    ("linear", 2, 6),
    ("one_coord", 2, 5),
    ("linear", 2, 4),
    ("one_coord", 1, 6),
    ("linear", 2, 5),
    ("one_coord", 4, 4),
]


def planted_instance(index: int, eps: float, rng: RngStream):
    """A tiny two-layer net in which the construction is guaranteed to succeed.

    Returns ``(kind, G, w_star, per-coordinate budget, bound)``. Each block
    holds one candidate close to ``(alpha, +1)`` and one close to ``(-alpha, -1)``
    at random positions; everything else is plain U([-1, 1]).
    """
    kind, d, k = _PLANTED_SHAPES[index % len(_PLANTED_SHAPES)]
    gen = rng.generator()
    W = gen.uniform(-1.0, 1.0, size=(k, d))
    u = gen.uniform(-1.0, 1.0, size=k)
    if kind == "one_coord":
        w_star = np.zeros(d)
        w_star[int(gen.integers(d))] = gen.choice([-1.0, 1.0]) * gen.uniform(0.2, 0.5)
        budget, bound, s = eps, 2 * eps, 1
        coords = np.flatnonzero(w_star)
        block = k
    else:
        s = d
        w_star = gen.choice([-1.0, 1.0], size=d) * gen.uniform(0.2, 0.5, size=d) / math.sqrt(s)
        budget, bound = eps / (2 * s), eps
        coords = np.arange(d)
        block = k // s
    for r, i in enumerate(coords):
        lo = 0 if kind == "one_coord" else r * block
        j1, j2 = lo + gen.choice(block, size=2, replace=False)
        a = w_star[i]
        W[j1, i] = a + 0.9 * budget * gen.uniform(-1, 1)
        u[j1] = 1.0 - 0.9 * budget * gen.uniform(0, 1)
        W[j2, i] = -a + 0.9 * budget * gen.uniform(-1, 1)
        u[j2] = -1.0 + 0.9 * budget * gen.uniform(0, 1)
    G = DenseNetwork((W, u[None, :]))
    return kind, G, w_star, bound, s


def _trial_brute(cfg: ExperimentConfig, widths: dict, rng: RngStream) -> TrialOutcome:
    index = rng.stream[-1] if rng.stream else 0
    kind, G, w_star, bound, s = planted_instance(index, cfg.eps, rng.child("instance"))
    W, u = G.layers[0], G.layers[1][0]
    try:
        if kind == "one_coord":
            i = int(np.flatnonzero(w_star)[0])
            first = wp.prune_scalar(i, w_star[i], W, u, cfg.eps).mask(*W.shape)
        else:
            first, _ = wp.prune_linear(w_star, W, u, cfg.eps, s)
    except wp.ConstructionFailed as exc:
        return _failed(exc)
    mask = wp.two_layer_mask(first)
    x = _sampler(cfg, rng, d=G.input_dim, n=cfg.sampler.get("n", 200)).points()
    target = x @ w_star
    constructive = masked_error(G, mask, target, x)
    best_mask, best = brute_force_mask(G, target, x)
    return TrialOutcome(0, True, constructive, ok=(best <= constructive and constructive <= bound), extra={
        "kind": kind, "n_weights": G.n_weights, "bound": bound,
        "constructive_error": constructive, "brute_force_error": best,
        "brute_force_active": best_mask.active_count(), "constructive_active": mask.active_count(),
    })


# -- runner -------------------------------------------------------------------

def _contract(cfg: ExperimentConfig) -> float:
    if cfg.experiment == "lemma-one-coord":
        return 2 * cfg.eps
    if cfg.experiment == "kernel-eigen":
        return 0.0
    return cfg.eps


def build_trial(cfg: ExperimentConfig):
    """Resolve widths and shared setup; return ``(trial function, widths, setup info)``."""
    master = RngStream(cfg.seed, ())
    setup: dict = {}
    e = cfg.experiment
    if e == "finite-dataset":
        X, y = dataset_points(cfg, master)
        if np.any(np.abs(y) > 1):
            raise ConfigError("labels must lie in [-1, 1]")
        km = npr.kernel_matrix(X, n_samples=cfg.kernel_samples, rng=master.child("kernel"))
        lam = km.lam_min
        widths = resolve_widths(cfg)
        setup = {"m": int(X.shape[0]), "lambda": lam, "M": 4 * X.shape[0] / (3 * lam) if lam > 0 else None,
                 "formula_k2": npr.finite_dataset_width(X.shape[0], widths["k1"], lam, cfg.eps, cfg.delta)
                 if lam > 0 else None}
        return partial(_trial_finite, cfg, widths, X, y, lam), widths, setup
    if e == "kernel-eigen":
        X, lam, k, history = reference_eigen_setup(cfg, master)
        widths = {"k": k}
        setup = {"m": int(X.shape[0]), "lambda_reference": lam, "reductions": history,
                 "points": X.tolist()}
        return partial(_trial_eigen, cfg, widths, X, lam), widths, setup
    widths = resolve_widths(cfg)
    fn = {
        "lemma-one-coord": _trial_one_coord,
        "lemma-linear": _trial_linear,
        "lemma-neuron": _trial_neuron,
        "thm2-shallow": _trial_shallow,
        "thm1-deep": _trial_deep,
        "rkhs": _trial_rkhs,
        "brute-force-oracle": _trial_brute,
    }[e]
    return partial(fn, cfg, widths), widths, setup


def _aggregate(cfg: ExperimentConfig, outcomes) -> dict:
    built = [o for o in outcomes if o.constructed]
    agg: dict = {}
    actives = [o.extra["active"] for o in built if "active" in o.extra]
    if actives:
        agg["max_active"] = int(max(actives))
        if "active_bound" in built[0].extra:
            agg["active_bound"] = built[0].extra["active_bound"]
            agg["active_within_bound"] = all(o.extra["active"] <= o.extra["active_bound"] for o in built)
    if cfg.experiment == "thm1-deep":
        agg["drift_ok_on_successes"] = all(o.extra["drift_ok"] for o in built if o.succeeded(cfg.eps))
    if cfg.experiment == "finite-dataset":
        agg["sign_rate"] = sum(o.extra["sign_match"] for o in outcomes if o.constructed) / len(outcomes)
        agg["contract_rate"] = sum(o.succeeded(cfg.eps) for o in outcomes) / len(outcomes)
    if cfg.experiment == "brute-force-oracle":
        agg["oracle_ok"] = all(o.extra["brute_force_error"] <= o.extra["constructive_error"] for o in built)
        agg["max_weights"] = max(o.extra["n_weights"] for o in built) if built else 0
    if cfg.experiment in ("lemma-one-coord", "lemma-linear", "lemma-neuron", "thm2-shallow", "thm1-deep"):
        agg["delta_floor"] = 1 - cfg.delta - binomial_slack(cfg.delta, len(outcomes))
    return agg


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> dict:
    """Run ``cfg`` and return the JSON-ready report (no timings, worker-count independent)."""
    cfg.validate()
    trial, widths, setup = build_trial(cfg)
    report = success_rate(trial, cfg.trials, _contract(cfg), cfg.seed, workers)
    return _jsonable({
        "experiment": cfg.experiment,
        "config": cfg.to_dict(),
        "widths": widths,
        "width_source": "explicit" if isinstance(cfg.widths, dict) else "paper-formula",
        "setup": setup,
        "summary": report.to_dict(with_outcomes=False),
        "aggregates": _aggregate(cfg, report.outcomes),
        "trials": [asdict(o) for o in report.outcomes],
    })


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if not math.isfinite(v):
            return None
        return v
    return obj


def report_row(report: dict) -> dict:
    s = report["summary"]
    agg = report.get("aggregates", {})
    q = s.get("error_quantiles", {})
    return {
        "experiment": report["experiment"],
        "seed": report["config"]["seed"],
        "trials": s["trials"],
        "successes": s["successes"],
        "rate": s["rate"],
        "wilson_lo": s["wilson95"][0],
        "wilson_hi": s["wilson95"][1],
        "median_error": q.get("median"),
        "max_error": q.get("max"),
        "max_active": agg.get("max_active"),
        "active_bound": agg.get("active_bound"),
    }


__all__ = [
    "EXPERIMENTS",
    "ConfigError",
    "ExperimentConfig",
    "load_dataset",
    "resolve_widths",
    "eigen_feature_count",
    "deep_random_dims",
    "layer_drift",
    "planted_instance",
    "empirical_kernel",
    "build_trial",
    "run_experiment",
    "report_row",
]
