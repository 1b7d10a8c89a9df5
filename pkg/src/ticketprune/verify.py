"""Measurement layer: sampled sup norms, seeded success-rate trials, brute-force masks."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from statistics import NormalDist
from typing import Callable

import numpy as np

from . import kernels
from .net import BinaryMask, DenseNetwork, RngStream

MAX_CORNERS = 1024
BRUTE_FORCE_BUDGET = 1 << 24


@dataclass(frozen=True)
class DomainSampler:
    """Deterministic extreme points followed by ``n`` random points.

    ``l2-ball`` draws uniformly from the unit ball; ``linf-cube`` from
    ``[-1, 1]^d``. The extreme points are the ``2d`` signed axis vectors and
    up to 1024 sign corners, scaled onto the sphere in ``l2-ball`` mode.
    """

    mode: str
    d: int
    n: int
    rng: RngStream = RngStream(0)

    def __post_init__(self):
        if self.mode not in ("l2-ball", "linf-cube"):
            raise ValueError(f"unknown sampler mode {self.mode!r}")
        if self.d < 1 or self.n < 0:
            raise ValueError("dimension must be positive and count nonnegative")

    def fixed_points(self) -> np.ndarray:
        d = self.d
        axis = np.concatenate([np.eye(d), -np.eye(d)])
        n_corners = min(1 << d, MAX_CORNERS)
        corners = np.array(
            [[1.0 if (c >> i) & 1 else -1.0 for i in range(d)] for c in range(n_corners)]
        )
        if self.mode == "l2-ball":
            corners /= math.sqrt(d)
        return np.concatenate([axis, corners])

    def random_points(self) -> np.ndarray:
        gen = self.rng.generator()
        if self.mode == "linf-cube":
            return gen.uniform(-1.0, 1.0, size=(self.n, self.d))
        z = gen.standard_normal(size=(self.n, self.d))
        z /= np.maximum(np.linalg.norm(z, axis=1, keepdims=True), 1e-300)
        r = gen.uniform(0.0, 1.0, size=(self.n, 1)) ** (1.0 / self.d)
        return z * r

    def points(self) -> np.ndarray:
        return np.concatenate([self.fixed_points(), self.random_points()])


def _error_vector(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim <= 1 and b.ndim <= 1:
        return np.abs(a - b)
    a = a.reshape(a.shape[0], -1)
    b = b.reshape(b.shape[0], -1)
    if a.shape[1] == 1 and b.shape[1] == 1:
        return np.abs(a[:, 0] - b[:, 0])
    return np.linalg.norm(a - b, axis=1)


def sup_error(f: Callable, g: Callable, sampler: DomainSampler | np.ndarray):
    """``(max |f - g|, argmax point)`` over the sampler's points; l2 norm for vector outputs."""
    x = sampler.points() if isinstance(sampler, DomainSampler) else np.atleast_2d(sampler)
    err = _error_vector(f(x), g(x))
    i = int(np.argmax(err))
    return float(err[i]), x[i]


def wilson_interval(successes: int, trials: int, level: float = 0.95) -> tuple[float, float]:
    if trials <= 0:
        return 0.0, 1.0
    z = NormalDist().inv_cdf(0.5 + level / 2)
    p = successes / trials
    denom = 1 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    # the clamp to p guards against rounding at 0 and T successes
    return max(0.0, min(p, centre - half)), min(1.0, max(p, centre + half))


def binomial_slack(delta: float, trials: int) -> float:
    """Three binomial standard deviations, as a fraction of the trial count."""
    return 3.0 * math.sqrt(delta * (1 - delta) / trials)


@dataclass
class TrialOutcome:
    index: int
    constructed: bool
    error: float | None = None
    failure: dict | None = None
    extra: dict = field(default_factory=dict)
    ok: bool | None = None

    def succeeded(self, eps: float) -> bool:
        """Construction succeeded and the contract held; ``ok`` overrides ``error <= eps``."""
        if not self.constructed:
            return False
        if self.ok is not None:
            return bool(self.ok)
        return self.error is not None and self.error <= eps


@dataclass
class TrialReport:
    trials: int
    construction_failures: int
    contract_misses: int
    eps: float
    error_quantiles: dict
    interval: tuple[float, float]
    outcomes: list[TrialOutcome] = field(default_factory=list)

    @property
    def successes(self) -> int:
        return self.trials - self.construction_failures - self.contract_misses

    @property
    def rate(self) -> float:
        return self.successes / self.trials if self.trials else 0.0

    def to_dict(self, with_outcomes: bool = True) -> dict:
        doc = {
            "trials": self.trials,
            "successes": self.successes,
            "construction_failures": self.construction_failures,
            "contract_misses": self.contract_misses,
            "rate": self.rate,
            "eps": self.eps,
            "wilson95": list(self.interval),
            "error_quantiles": self.error_quantiles,
        }
        if with_outcomes:
            doc["outcomes"] = [asdict(o) for o in self.outcomes]
        return doc

    def csv_row(self) -> dict:
        q = self.error_quantiles
        return {
            "trials": self.trials,
            "successes": self.successes,
            "construction_failures": self.construction_failures,
            "contract_misses": self.contract_misses,
            "rate": self.rate,
            "wilson_lo": self.interval[0],
            "wilson_hi": self.interval[1],
            "median_error": q.get("median"),
            "max_error": q.get("max"),
        }


def summarise(outcomes: list[TrialOutcome], eps: float) -> TrialReport:
    failures = sum(not o.constructed for o in outcomes)
    misses = sum(o.constructed and not o.succeeded(eps) for o in outcomes)
    errs = np.array([o.error for o in outcomes if o.constructed and o.error is not None], dtype=float)
    if errs.size:
        quant = {
            "min": float(errs.min()),
            "median": float(np.median(errs)),
            "p90": float(np.quantile(errs, 0.9)),
            "max": float(errs.max()),
        }
    else:
        quant = {}
    succ = len(outcomes) - failures - misses
    return TrialReport(len(outcomes), failures, misses, float(eps), quant,
                       wilson_interval(succ, len(outcomes)), list(outcomes))


def _run_one(args):
    trial, seed, i = args
    out = trial(RngStream(seed, (i,)))
    out.index = i
    return out


def success_rate(trial: Callable[[RngStream], TrialOutcome], trials: int, eps: float,
                 seed: int = 0, workers: int = 1) -> TrialReport:
    """Run ``trials`` seeded trials; trial ``i`` always receives stream ``(seed, (i,))``.

    A trial succeeds when its construction succeeds and its error is at most
    ``eps``. ``trial`` must be picklable when ``workers > 1``.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    jobs = [(trial, seed, i) for i in range(trials)]
    if workers <= 1:
        outcomes = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_one, jobs, chunksize=max(1, trials // (4 * workers))))
    return summarise(outcomes, eps)


# -- brute force -------------------------------------------------------------

def _flatten(net: DenseNetwork):
    shapes = np.array([w.shape for w in net.layers], dtype=np.int64)
    flat = np.ascontiguousarray(np.concatenate([w.ravel() for w in net.layers]))
    return shapes, flat


def mask_code(mask: BinaryMask) -> int:
    bits = np.concatenate([b.ravel() for b in mask.layers])
    return int(sum(1 << int(p) for p in np.flatnonzero(bits)))


def mask_from_code(net: DenseNetwork, code: int) -> BinaryMask:
    layers, p = [], 0
    for w in net.layers:
        n = w.size
        bits = np.array([(code >> (p + q)) & 1 for q in range(n)], dtype=bool)
        layers.append(bits.reshape(w.shape))
        p += n
    return BinaryMask(tuple(layers))


def _targets(target, x) -> np.ndarray:
    t = np.asarray(target(x) if callable(target) else target, dtype=np.float64)
    return np.ascontiguousarray(t.reshape(x.shape[0], -1))


def masked_error(net: DenseNetwork, mask: BinaryMask, target, points) -> float:
    """Sup error of one mask, computed by the same kernel the brute force uses."""
    x = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
    shapes, flat = _flatten(net)
    return float(kernels.masked_sup_error(shapes, flat, mask_code(mask), x, _targets(target, x)))


def brute_force_mask(net: DenseNetwork, target, sampler: DomainSampler | np.ndarray,
                     budget: int = BRUTE_FORCE_BUDGET):
    """Enumerate every mask of a tiny network; return ``(best mask, best sampled sup error)``.

    ``target`` is a callable on a batch of points or an array of values at
    the sampler's points. Ties go to the smallest mask code.
    """
    if (1 << net.n_weights) > budget:
        raise ValueError(f"2^{net.n_weights} masks exceed the brute-force budget of {budget}")
    x = sampler.points() if isinstance(sampler, DomainSampler) else np.atleast_2d(sampler)
    x = np.ascontiguousarray(x, dtype=np.float64)
    shapes, flat = _flatten(net)
    code, err = kernels.brute_force_sup(shapes, flat, x, _targets(target, x))
    return mask_from_code(net, code), float(err)


__all__ = [
    "DomainSampler",
    "TrialOutcome",
    "TrialReport",
    "sup_error",
    "wilson_interval",
    "binomial_slack",
    "summarise",
    "success_rate",
    "mask_code",
    "mask_from_code",
    "masked_error",
    "brute_force_mask",
]
