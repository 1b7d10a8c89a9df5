"""Dense feed-forward ReLU networks, binary masks and seeded initialisation.

A network is an ordered tuple of weight matrices ``(n_out, n_in)``. Every
layer but the last is followed by a ReLU; the last layer is linear. Networks
and masks are immutable: their arrays are flagged read-only.
"""
from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import kernels


def relu(t):
    return np.maximum(t, 0.0)


def _frozen(a, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream keyed by ``(seed, stream)``.

    The stream id is mixed into the seed by numpy's ``SeedSequence`` hash and
    drives a counter-based Philox generator, so distinct ids give independent
    draws and the same id always gives the same draws.
    """

    seed: int
    stream: tuple[int, ...] = ()

    def child(self, key: int | str) -> "RngStream":
        if isinstance(key, str):
            key = zlib.crc32(key.encode())
        return RngStream(self.seed, self.stream + (int(key),))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed & 0xFFFFFFFFFFFFFFFF, spawn_key=self.stream)
        return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True, eq=False)
class DenseNetwork:
    layers: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.layers) == 0:
            raise ValueError("a network needs at least one layer")
        layers = tuple(_frozen(w, np.float64) for w in self.layers)
        for i, w in enumerate(layers):
            if w.ndim != 2:
                raise ValueError(f"layer {i} is not a matrix")
            if i > 0 and w.shape[1] != layers[i - 1].shape[0]:
                raise ValueError(
                    f"layer {i} expects {w.shape[1]} inputs but layer {i - 1} "
                    f"has {layers[i - 1].shape[0]} outputs"
                )
        object.__setattr__(self, "layers", layers)

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].shape[0]

    @property
    def widths(self) -> list[int]:
        return [self.input_dim] + [w.shape[0] for w in self.layers]

    @property
    def n_weights(self) -> int:
        return sum(w.size for w in self.layers)

    def __eq__(self, other):
        if not isinstance(other, DenseNetwork):
            return NotImplemented
        return self.depth == other.depth and all(
            np.array_equal(a, b) for a, b in zip(self.layers, other.layers)
        )


@dataclass(frozen=True, eq=False)
class BinaryMask:
    layers: tuple[np.ndarray, ...]

    def __post_init__(self):
        out = []
        for i, b in enumerate(self.layers):
            b = np.asarray(b)
            if b.ndim != 2:
                raise ValueError(f"mask layer {i} is not a matrix")
            if b.dtype != bool:
                if not np.isin(b, (0, 1)).all():
                    raise ValueError(f"mask layer {i} has entries other than 0/1")
            out.append(_frozen(b, bool))
        object.__setattr__(self, "layers", tuple(out))

    @classmethod
    def ones_like(cls, net: DenseNetwork) -> "BinaryMask":
        return cls(tuple(np.ones(w.shape, dtype=bool) for w in net.layers))

    @classmethod
    def zeros_like(cls, net: DenseNetwork) -> "BinaryMask":
        return cls(tuple(np.zeros(w.shape, dtype=bool) for w in net.layers))

    def per_layer_counts(self) -> list[int]:
        return [int(np.count_nonzero(b)) for b in self.layers]

    def active_count(self) -> int:
        return sum(self.per_layer_counts())

    def __le__(self, other: "BinaryMask") -> bool:
        return all(np.all(a <= b) for a, b in zip(self.layers, other.layers))

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return len(self.layers) == len(other.layers) and all(
            np.array_equal(a, b) for a, b in zip(self.layers, other.layers)
        )


@dataclass(frozen=True)
class TargetSpec:
    """Shape and hypotheses of an admissible target network.

    ``depth`` layers mapping ``d -> n -> ... -> n -> 1``; every row has at most
    ``s`` nonzeros (capped at the layer's fan-in), every entry is bounded by
    ``1/sqrt(fan_in)`` and every layer has spectral norm at most 1.
    """

    d: int
    n: int
    depth: int
    s: int

    def dims(self) -> list[int]:
        return [self.d] + [self.n] * (self.depth - 1) + [1]


def active_count(mask: BinaryMask) -> int:
    return mask.active_count()


def _check_congruent(net: DenseNetwork, mask: BinaryMask):
    if len(mask.layers) != net.depth:
        raise ValueError(f"mask has {len(mask.layers)} layers, network has {net.depth}")
    for i, (w, b) in enumerate(zip(net.layers, mask.layers)):
        if w.shape != b.shape:
            raise ValueError(f"mask layer {i} has shape {b.shape}, weights {w.shape}")


def apply_mask(net: DenseNetwork, mask: BinaryMask) -> DenseNetwork:
    _check_congruent(net, mask)
    return DenseNetwork(tuple(w * b for w, b in zip(net.layers, mask.layers)))


def _as_batch(net: DenseNetwork, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ValueError(f"input has shape {x.shape}, network expects dimension {net.input_dim}")
    return x, single


def forward(net: DenseNetwork, x, mask: BinaryMask | None = None) -> np.ndarray:
    """Evaluate ``net`` (optionally restricted to ``mask``) at one point or a batch.

    With a mask only the active weights are visited, which keeps very wide but
    heavily pruned networks cheap to evaluate.
    """
    trace = forward_trace(net, x, mask)
    return trace[-1]


def forward_trace(net: DenseNetwork, x, mask: BinaryMask | None = None) -> list[np.ndarray]:
    """Post-activation outputs of every layer, for a point or a batch.

    Hidden layers wider than 4096 units are returned as ``None`` under a mask;
    materialising them densely defeats the sparse evaluation.
    """
    xb, single = _as_batch(net, x)
    if mask is None:
        outs = []
        h = xb
        for i, w in enumerate(net.layers):
            h = h @ w.T
            if i < net.depth - 1:
                h = relu(h)
            outs.append(h)
    else:
        _check_congruent(net, mask)
        outs = _sparse_trace(net, mask, xb)
    if single:
        outs = [o[0] if o is not None else None for o in outs]
    return outs


def _sparse_trace(net: DenseNetwork, mask: BinaryMask, xb: np.ndarray) -> list[np.ndarray]:
    # activations are kept transposed and compressed to the units that can be nonzero
    units = np.arange(net.input_dim)
    h_t = np.ascontiguousarray(xb.T)
    outs = []
    for i, (w, b) in enumerate(zip(net.layers, mask.layers)):
        rows, cols = np.nonzero(b)
        pos = np.full(w.shape[1], -1, dtype=np.int64)
        pos[units] = np.arange(units.size)
        local_cols = pos[cols]
        keep = local_cols >= 0
        rows, cols, local_cols = rows[keep], cols[keep], local_cols[keep]
        vals = np.ascontiguousarray(w[rows, cols])
        new_units, local_rows = np.unique(rows, return_inverse=True)
        z_t = kernels.coo_matmul(
            local_rows.astype(np.int64), local_cols.astype(np.int64), vals, h_t, new_units.size
        )
        last = i == net.depth - 1
        if not last:
            z_t = relu(z_t)
        n_out = w.shape[0]
        if last or n_out <= 4096:
            dense = np.zeros((xb.shape[0], n_out))
            dense[:, new_units] = z_t.T
            outs.append(dense)
        else:
            outs.append(None)
        units, h_t = new_units, np.ascontiguousarray(z_t)
    return outs


def spectral_norm(w, max_iter: int = 100, tol: float = 1e-10) -> float:
    """Largest singular value by power iteration on the smaller Gram matrix.

    The start vector comes from a few normalised squarings of the Gram matrix,
    which removes the slow convergence of plain power iteration when the top
    two singular values are close.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.size == 0 or not np.any(w):
        return 0.0
    g = w.T @ w if w.shape[1] <= w.shape[0] else w @ w.T
    p = g / np.linalg.norm(g)
    for _ in range(60):
        q = p @ p
        nq = np.linalg.norm(q)
        if nq == 0.0:
            break
        q /= nq
        if np.allclose(q, p, rtol=0.0, atol=1e-15):
            p = q
            break
        p = q
    v = p[:, np.argmax(np.linalg.norm(p, axis=0))]
    v = v / np.linalg.norm(v)
    lam = float(v @ g @ v)
    for _ in range(max_iter):
        z = g @ v
        nz = np.linalg.norm(z)
        if nz == 0.0:
            return 0.0
        v = z / nz
        new = float(v @ g @ v)
        if abs(new - lam) <= tol * abs(new):
            lam = new
            break
        lam = new
    return float(np.sqrt(max(lam, 0.0)))


def random_net_dims(dims: Sequence[int]) -> list[tuple[int, int]]:
    dims = list(dims)
    if len(dims) < 2 or any(int(x) < 1 for x in dims):
        raise ValueError(f"invalid layer widths {dims}")
    return [(dims[i + 1], dims[i]) for i in range(len(dims) - 1)]


def sample_random_net(dims: Sequence[int], rng: RngStream) -> DenseNetwork:
    """Network with widths ``dims`` (input first), entries i.i.d. U([-1, 1])."""
    shapes = random_net_dims(dims)
    layers = []
    for i, shape in enumerate(shapes):
        gen = rng.child(i).generator()
        layers.append(gen.uniform(-1.0, 1.0, size=shape))
    return DenseNetwork(tuple(layers))


def sample_target_net(spec: TargetSpec, rng: RngStream) -> DenseNetwork:
    if spec.s < 1:
        raise ValueError("infeasible target: sparsity must be at least 1")
    if spec.depth < 1 or spec.d < 1 or spec.n < 1:
        raise ValueError(f"invalid target dimensions {spec}")
    layers = []
    for i, (n_out, n_in) in enumerate(random_net_dims(spec.dims())):
        gen = rng.child(i).generator()
        s = min(spec.s, n_in)
        bound = 1.0 / np.sqrt(n_in)
        w = np.zeros((n_out, n_in))
        for r in range(n_out):
            cols = np.sort(gen.choice(n_in, size=s, replace=False))
            w[r, cols] = gen.uniform(-bound, bound, size=s)
        w *= min(1.0, 1.0 / max(spectral_norm(w), 1e-300))
        layers.append(w)
    return DenseNetwork(tuple(layers))


# -- JSON interchange -------------------------------------------------------

def _layers_to_json(layers: Iterable[np.ndarray], cast) -> list[dict]:
    return [
        {"rows": int(w.shape[0]), "cols": int(w.shape[1]), "data": [cast(v) for v in w.ravel()]}
        for w in layers
    ]


def _layers_from_json(doc: dict, dtype) -> tuple[np.ndarray, ...]:
    if not doc.get("last_layer_linear", True):
        raise ValueError("only networks with a linear last layer are supported")
    out = []
    for i, layer in enumerate(doc["layers"]):
        data = np.asarray(layer["data"], dtype=dtype)
        if data.size != layer["rows"] * layer["cols"]:
            raise ValueError(f"layer {i}: data length does not match rows*cols")
        out.append(data.reshape(layer["rows"], layer["cols"]))
    return tuple(out)


def network_to_json(net: DenseNetwork) -> dict:
    return {"layers": _layers_to_json(net.layers, float), "last_layer_linear": True}


def network_from_json(doc: dict) -> DenseNetwork:
    return DenseNetwork(_layers_from_json(doc, np.float64))


def mask_to_json(mask: BinaryMask) -> dict:
    return {"layers": _layers_to_json(mask.layers, int), "last_layer_linear": True}


def mask_from_json(doc: dict) -> BinaryMask:
    return BinaryMask(_layers_from_json(doc, np.int64))


def save_json(doc: dict, path: str | Path):
    Path(path).write_text(json.dumps(doc))


def load_json(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


__all__ = [
    "RngStream",
    "DenseNetwork",
    "BinaryMask",
    "TargetSpec",
    "relu",
    "forward",
    "forward_trace",
    "apply_mask",
    "active_count",
    "spectral_norm",
    "sample_random_net",
    "sample_target_net",
    "network_to_json",
    "network_from_json",
    "mask_to_json",
    "mask_from_json",
]
