"""Constructive weight-subnetworks of random U([-1, 1]) ReLU networks.

Every builder follows the same recipe: split the candidate neurons into
disjoint blocks, one per target coordinate, and in each block keep the two
neurons whose (input weight, output weight) pairs approximate ``(alpha, +1)``
and ``(-alpha, -1)``. Because ``a = relu(a) - relu(-a)``, the two kept paths
together reproduce ``x -> alpha * x_i``. Stacking these pieces gives linear
maps, single neurons, layers and finally whole deep networks.

Selection is deterministic: among all qualifying candidates the one whose
product ``u * w`` is closest to the target wins, first index on ties.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import kernels
from .net import BinaryMask, DenseNetwork

LEMMAS = ("one_coord", "linear_func", "one_neuron", "relu_network", "one_layer", "deep")


class ConstructionFailed(Exception):
    """No candidate satisfied a matching condition.

    This is the low-probability event excluded by the width requirements, so
    callers are expected to catch and count it.
    """

    def __init__(self, stage: str, **where: Any):
        self.stage = stage
        self.where = {k: v for k, v in where.items() if v is not None}
        detail = ", ".join(f"{k}={v}" for k, v in self.where.items())
        super().__init__(f"construction failed at {stage}" + (f" ({detail})" if detail else ""))

    def located(self, **more: Any) -> "ConstructionFailed":
        where = dict(self.where)
        where.update({k: v for k, v in more.items() if v is not None})
        return ConstructionFailed(self.stage, **where)

    def to_dict(self) -> dict:
        return {"stage": self.stage, **self.where}


def required_width(lemma: str, *, eps: float, delta: float, s: int = 1, n: int = 1,
                   l: int = 1) -> dict[str, int]:
    """Width demanded by each construction, natural log, ceilings as written."""
    if not (0 < eps < 1 and 0 < delta < 1):
        raise ValueError("eps and delta must lie in (0, 1)")
    if min(s, n, l) < 1:
        raise ValueError("s, n and l must be positive")
    log = math.log
    if lemma == "one_coord":
        return {"k": math.ceil(4 / eps**2 * log(2 / delta))}
    if lemma == "linear_func":
        return {"k": s * math.ceil(16 * s**2 / eps**2 * log(2 * s / delta))}
    if lemma == "one_neuron":
        return {
            "k1": s * math.ceil(64 * s**2 / eps**2 * log(4 * s / delta)),
            "k2": math.ceil(2 / eps * log(2 / delta)),
        }
    if lemma == "relu_network":
        return {
            "k1": n * s * math.ceil(64 * s**2 * n**2 / eps**2 * log(4 * n * s / delta)),
            "k2": math.ceil(2 * n / eps * log(2 * n / delta)),
        }
    if lemma == "one_layer":
        return {"k": n * s * math.ceil(16 * s**2 * n / eps**2 * log(2 * n * s / delta))}
    if lemma == "deep":
        return {"k": n * s * math.ceil(64 * s**2 * l**2 * n / eps**2 * log(2 * n * s * l / delta))}
    raise ValueError(f"unknown lemma {lemma!r}; expected one of {LEMMAS}")


@dataclass
class EpsilonBudget:
    total: float
    share: float
    rule: str
    delta: float | None = None

    def to_dict(self) -> dict:
        out = {"total": self.total, "share": self.share, "rule": self.rule}
        if self.delta is not None:
            out["delta"] = self.delta
        return out


@dataclass
class ScalarPick:
    """Selected candidates for ``x -> alpha * x_coord``; ``None`` means unused."""

    coord: int
    alpha: float
    plus: int | None = None
    minus: int | None = None

    @property
    def indices(self) -> list[int]:
        return [j for j in (self.plus, self.minus) if j is not None]

    def shifted(self, offset: int) -> "ScalarPick":
        return ScalarPick(
            self.coord,
            self.alpha,
            None if self.plus is None else self.plus + offset,
            None if self.minus is None else self.minus + offset,
        )

    def mask(self, k: int, d: int) -> np.ndarray:
        b = np.zeros((k, d), dtype=bool)
        for j in self.indices:
            b[j, self.coord] = True
        return b


@dataclass
class PruneCertificate:
    construction: str
    budget: list[dict] = field(default_factory=list)
    picks: list[dict] = field(default_factory=list)
    output_picks: list[dict] = field(default_factory=list)
    blocks: list[dict] = field(default_factory=list)
    active_counts: list[int] = field(default_factory=list)

    @property
    def total_active(self) -> int:
        return int(sum(self.active_counts))

    def to_dict(self) -> dict:
        return {
            "construction": self.construction,
            "budget": self.budget,
            "picks": self.picks,
            "output_picks": self.output_picks,
            "blocks": self.blocks,
            "active_counts": [int(c) for c in self.active_counts],
            "total_active": self.total_active,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PruneCertificate":
        return cls(
            construction=doc["construction"],
            budget=list(doc.get("budget", [])),
            picks=list(doc.get("picks", [])),
            output_picks=list(doc.get("output_picks", [])),
            blocks=list(doc.get("blocks", [])),
            active_counts=list(doc.get("active_counts", [])),
        )


def prune_scalar(i: int, alpha: float, w, u, eps: float) -> ScalarPick:
    """Pick at most two candidates realising ``x -> alpha * x_i`` within ``2 eps``.

    ``w`` is ``(k, d)``, ``u`` is ``(k,)``. Raises ConstructionFailed naming the
    side (``+`` or ``-``) that had no qualifying candidate.
    """
    alpha = float(alpha)
    if abs(alpha) <= eps:
        return ScalarPick(int(i), alpha)
    w = np.asarray(w, dtype=np.float64)
    col = np.ascontiguousarray(w[:, i])
    u = np.ascontiguousarray(u, dtype=np.float64)
    plus = kernels.select_candidate(col, u, alpha, eps, 1.0)
    if plus < 0:
        raise ConstructionFailed("one-coordinate", coordinate=int(i), side="+")
    minus = kernels.select_candidate(col, u, alpha, eps, -1.0)
    if minus < 0:
        raise ConstructionFailed("one-coordinate", coordinate=int(i), side="-")
    return ScalarPick(int(i), alpha, int(plus), int(minus))


def _linear_picks(w_star, w, u, eps: float, s: int) -> tuple[list[ScalarPick], list[dict]]:
    w_star = np.asarray(w_star, dtype=np.float64)
    nz = np.flatnonzero(w_star)
    if nz.size > s:
        raise ValueError(f"target has {nz.size} nonzeros but s={s}")
    k = w.shape[0]
    k_block = k // s
    if k_block == 0:
        raise ValueError(f"{k} candidates cannot be split into {s} blocks")
    eps_c = eps / (2 * s)
    picks, blocks = [], []
    for r, i in enumerate(nz):
        lo, hi = r * k_block, (r + 1) * k_block
        try:
            pick = prune_scalar(int(i), w_star[i], w[lo:hi], u[lo:hi], eps_c)
        except ConstructionFailed as exc:
            raise exc.located(block=r) from None
        picks.append(pick.shifted(lo))
        blocks.append({"coord": int(i), "start": lo, "stop": hi})
    return picks, blocks


def _pick_records(picks: list[ScalarPick], **extra) -> list[dict]:
    return [
        {**extra, "coord": p.coord, "plus": p.plus, "minus": p.minus}
        for p in picks
    ]


def _linear_s(w_star, s):
    return int(s) if s is not None else int(np.asarray(w_star).shape[0])


def prune_linear(w_star, w, u, eps: float, s: int | None = None):
    """Mask the first layer of a width-k two-layer net to approximate ``<w_star, x>``.

    Returns the ``(k, d)`` first-layer mask and a certificate. The kept
    subnetwork ``x -> sum_j u_j relu(<w_j * b_j, x>)`` is within ``eps`` of the
    target on the cube ``|x|_inf <= 1``.
    """
    w = np.asarray(w, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    s = _linear_s(w_star, s)
    picks, blocks = _linear_picks(w_star, w, u, eps, s)
    mask = np.zeros(w.shape, dtype=bool)
    for p in picks:
        for j in p.indices:
            mask[j, p.coord] = True
    cert = PruneCertificate(
        "linear_func",
        budget=[EpsilonBudget(eps, eps / (2 * s), "eps/(2s) per coordinate").to_dict()],
        picks=_pick_records(picks),
        blocks=blocks,
        active_counts=[int(mask.sum())],
    )
    return mask, cert


def selected_rows(first_mask: np.ndarray) -> np.ndarray:
    return np.flatnonzero(np.asarray(first_mask).any(axis=1))


def two_layer_mask(first_mask: np.ndarray) -> BinaryMask:
    """Mask for the net ``(w, u[None, :])``: first layer as given, kept neurons' outputs."""
    second = np.zeros((1, first_mask.shape[0]), dtype=bool)
    second[0, selected_rows(first_mask)] = True
    return BinaryMask((first_mask, second))


def _neuron_picks(w_star, v_star, W, U, v, eps, s):
    half = eps / 2
    cand = np.flatnonzero(np.abs(v - v_star) <= half)
    if cand.size == 0:
        raise ConstructionFailed("output-coefficient")
    out = int(cand[np.argmin(np.abs(v[cand] - v_star))])
    try:
        picks, blocks = _linear_picks(w_star, W, U[out], half, s)
    except ConstructionFailed as exc:
        raise ConstructionFailed("inner-linear", **exc.where) from None
    return out, picks, blocks


def prune_neuron(w_star, v_star: float, W, U, v, eps: float, s: int | None = None):
    """Three-layer mask approximating ``x -> v_star * relu(<w_star, x>)`` on the unit ball.

    ``W`` is ``(k1, d)``, ``U`` is ``(k2, k1)``, ``v`` is ``(k2,)``; the mask is
    congruent with ``DenseNetwork((W, U, v[None, :]))``.
    """
    W = np.asarray(W, dtype=np.float64)
    U = np.asarray(U, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64).ravel()
    s = _linear_s(w_star, s)
    out, picks, blocks = _neuron_picks(w_star, float(v_star), W, U, v, eps, s)
    b1 = np.zeros(W.shape, dtype=bool)
    b2 = np.zeros(U.shape, dtype=bool)
    b3 = np.zeros((1, v.size), dtype=bool)
    for p in picks:
        for j in p.indices:
            b1[j, p.coord] = True
            b2[out, j] = True
    b3[0, out] = True
    mask = BinaryMask((b1, b2, b3))
    cert = PruneCertificate(
        "one_neuron",
        budget=[
            EpsilonBudget(eps, eps / 2, "eps/2 output coefficient").to_dict(),
            EpsilonBudget(eps / 2, eps / (4 * s), "eps/(2s) per coordinate of inner linear map").to_dict(),
        ],
        picks=_pick_records(picks),
        output_picks=[{"neuron": 0, "output": out}],
        blocks=blocks,
        active_counts=mask.per_layer_counts(),
    )
    return mask, cert


def prune_two_layer_target(F: DenseNetwork, G: DenseNetwork, eps: float, s: int | None = None):
    """Prune a depth-3 random net to approximate the depth-2 target ``F`` on the unit ball.

    The random net is cut into one disjoint block of hidden units per target
    neuron, each block handled as a single neuron with budget ``eps / n``.
    """
    if F.depth != 2 or G.depth != 3:
        raise ValueError("expected a depth-2 target and a depth-3 random network")
    if F.output_dim != 1 or G.output_dim != 1 or F.input_dim != G.input_dim:
        raise ValueError("target and random network must map R^d to R")
    W_star, v_star = F.layers[0], F.layers[1][0]
    W, U, v = G.layers[0], G.layers[1], G.layers[2][0]
    n = W_star.shape[0]
    s = int(s) if s is not None else F.input_dim
    k1b, k2b = W.shape[0] // n, U.shape[0] // n
    if k1b == 0 or k2b == 0:
        raise ValueError("random network is narrower than the number of target neurons")
    b1 = np.zeros(W.shape, dtype=bool)
    b2 = np.zeros(U.shape, dtype=bool)
    b3 = np.zeros((1, v.size), dtype=bool)
    picks, outs, blocks = [], [], []
    for t in range(n):
        r0, c0 = t * k1b, t * k2b
        try:
            out, tpicks, tblocks = _neuron_picks(
                W_star[t], float(v_star[t]), W[r0:r0 + k1b], U[c0:c0 + k2b, r0:r0 + k1b],
                v[c0:c0 + k2b], eps / n, s,
            )
        except ConstructionFailed as exc:
            raise exc.located(neuron=t) from None
        out += c0
        b3[0, out] = True
        for p in tpicks:
            p = p.shifted(r0)
            for j in p.indices:
                b1[j, p.coord] = True
                b2[out, j] = True
            picks.append(p)
            outs_rec = {"neuron": t, **{k: v for k, v in _pick_records([p])[0].items()}}
            outs.append(outs_rec)
        blocks.append({
            "neuron": t, "hidden": [r0, r0 + k1b], "output": [c0, c0 + k2b],
            "coords": [{"coord": b["coord"], "start": b["start"] + r0, "stop": b["stop"] + r0} for b in tblocks],
        })
        outs.append({"neuron": t, "output": out})
    mask = BinaryMask((b1, b2, b3))
    cert = PruneCertificate(
        "relu_network",
        budget=[
            EpsilonBudget(eps, eps / n, "eps/n per target neuron").to_dict(),
            EpsilonBudget(eps / n, eps / (2 * n), "half of the neuron budget per stage").to_dict(),
            EpsilonBudget(eps / (2 * n), eps / (4 * n * s), "eps/(2s) per coordinate").to_dict(),
        ],
        picks=[r for r in outs if "coord" in r],
        output_picks=[r for r in outs if "output" in r],
        blocks=blocks,
        active_counts=mask.per_layer_counts(),
    )
    return mask, cert


def prune_layer(W_star, W, U, eps: float, s: int | None = None):
    """Masks ``(B, B_tilde)`` so that ``relu(B~ * U relu(B * W x))`` tracks ``relu(W_star x)``.

    The l2 error of the vector map is at most ``eps`` on ``|x|_inf <= 1``;
    each output neuron gets its own block of ``k // n`` hidden units and a
    budget of ``eps / sqrt(n)``.
    """
    W_star = np.asarray(W_star, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    U = np.asarray(U, dtype=np.float64)
    n = W_star.shape[0]
    if U.shape != (n, W.shape[0]) or W.shape[1] != W_star.shape[1]:
        raise ValueError("layer shapes do not match the target layer")
    s = int(s) if s is not None else W_star.shape[1]
    kb = W.shape[0] // n
    if kb == 0:
        raise ValueError("random layer is narrower than the target layer")
    share = eps / math.sqrt(n)
    B = np.zeros(W.shape, dtype=bool)
    Bt = np.zeros(U.shape, dtype=bool)
    picks, blocks = [], []
    for t in range(n):
        r0 = t * kb
        try:
            tpicks, tblocks = _linear_picks(W_star[t], W[r0:r0 + kb], U[t, r0:r0 + kb], share, s)
        except ConstructionFailed as exc:
            raise exc.located(neuron=t) from None
        for p in tpicks:
            p = p.shifted(r0)
            for j in p.indices:
                B[j, p.coord] = True
                Bt[t, j] = True
            picks.extend(_pick_records([p], neuron=t))
        blocks.append({
            "neuron": t, "hidden": [r0, r0 + kb],
            "coords": [{"coord": b["coord"], "start": b["start"] + r0, "stop": b["stop"] + r0} for b in tblocks],
        })
    cert = PruneCertificate(
        "one_layer",
        budget=[
            EpsilonBudget(eps, share, "eps/sqrt(n) per output neuron").to_dict(),
            EpsilonBudget(share, share / (2 * s), "eps/(2s) per coordinate").to_dict(),
        ],
        picks=picks,
        blocks=blocks,
        active_counts=[int(B.sum()), int(Bt.sum())],
    )
    return B, Bt, cert


def prune_deep(F: DenseNetwork, G: DenseNetwork, eps: float, s: int | None = None):
    """Prune a depth-``2l`` random net to within ``eps`` of a depth-``l`` target on the unit ball.

    Each target layer is matched by a pair of random layers built for budget
    ``eps / (2l)`` on the unit cube; by positive homogeneity that is ``eps / l``
    on the cube of radius 2, which contains every intermediate activation of
    the pruned network.
    """
    l = F.depth
    if G.depth != 2 * l:
        raise ValueError(f"a depth-{l} target needs a depth-{2 * l} random network")
    if F.output_dim != 1 or G.output_dim != 1 or F.input_dim != G.input_dim:
        raise ValueError("target and random network must map R^d to R")
    for i in range(l):
        if G.layers[2 * i].shape[1] != F.layers[i].shape[1]:
            raise ValueError(f"random layer {2 * i} does not take target layer {i}'s input width")
        if G.layers[2 * i + 1].shape[0] != F.layers[i].shape[0]:
            raise ValueError(f"random layer {2 * i + 1} does not produce target layer {i}'s width")
    if s is None:
        s = max(w.shape[1] for w in F.layers)
    share = eps / (2 * l)
    masks: list[np.ndarray] = []
    cert = PruneCertificate(
        "deep",
        budget=[EpsilonBudget(eps, share, "eps/(2l) per layer at unit scale").to_dict()],
    )
    for i in range(l - 1):
        try:
            B, Bt, c = prune_layer(F.layers[i], G.layers[2 * i], G.layers[2 * i + 1], share, s)
        except ConstructionFailed as exc:
            raise exc.located(layer=i) from None
        masks.extend([B, Bt])
        cert.picks.extend({"layer": i, **p} for p in c.picks)
        cert.blocks.extend({"layer": i, **b} for b in c.blocks)
    try:
        first, c = prune_linear(F.layers[-1][0], G.layers[2 * l - 2], G.layers[2 * l - 1][0], share, s)
    except ConstructionFailed as exc:
        raise exc.located(layer=l - 1) from None
    last = two_layer_mask(first)
    masks.extend(last.layers)
    cert.picks.extend({"layer": l - 1, **p} for p in c.picks)
    cert.blocks.extend({"layer": l - 1, **b} for b in c.blocks)
    mask = BinaryMask(tuple(masks))
    cert.active_counts = mask.per_layer_counts()
    return mask, cert


__all__ = [
    "LEMMAS",
    "ConstructionFailed",
    "EpsilonBudget",
    "ScalarPick",
    "PruneCertificate",
    "required_width",
    "prune_scalar",
    "prune_linear",
    "prune_neuron",
    "prune_two_layer_target",
    "prune_layer",
    "prune_deep",
    "selected_rows",
    "two_layer_mask",
]
