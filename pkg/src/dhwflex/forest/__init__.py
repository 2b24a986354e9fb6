"""Extremely randomized regression trees.

Each tree is grown on the full training set (no bootstrap). At every node
``k_candidates`` of the non-constant input dimensions are drawn, one uniform
threshold is drawn inside the node's range for each, and the split with the
largest variance reduction wins. Nodes with fewer than ``n_min`` samples or
constant targets become leaves predicting their mean target.

The growing and traversal kernels come from the compiled ``_xtrees``
extension when it is importable and from ``_fallback`` otherwise; set
``DHWFLEX_BACKEND=python`` to force the fallback. Both produce identical trees.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from . import _fallback

try:
    from . import _xtrees as _compiled
except ImportError:  # extension not built
    _compiled = None

_BACKENDS = {"python": _fallback}
if _compiled is not None:
    _BACKENDS["cython"] = _compiled


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def default_backend() -> str:
    forced = os.environ.get("DHWFLEX_BACKEND")
    if forced:
        if forced not in _BACKENDS:
            raise RuntimeError(f"DHWFLEX_BACKEND={forced!r} unavailable; have {available_backends()}")
        return forced
    return "cython" if "cython" in _BACKENDS else "python"


BACKEND = default_backend()

_MASK64 = (1 << 64) - 1
MAGIC = b"XTRF"
FORMAT_VERSION = 1


def tree_seed(seed: int, tree_index: int) -> int:
    return (int(seed) * 0x9E3779B97F4A7C15 + (tree_index + 1) * 0xD1B54A32D192ED03) & _MASK64


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 50
    k_candidates: int | None = None  # None: every input dimension
    n_min: int = 5
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.n_min < 2:
            raise ValueError("n_min must be >= 2")
        if self.k_candidates is not None and self.k_candidates < 1:
            raise ValueError("k_candidates must be >= 1")


@dataclass
class Forest:
    n_features: int
    roots: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_trees(self) -> int:
        return len(self.roots)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def predict(self, X, backend: str | None = None) -> np.ndarray:
        X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=np.float64)))
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} input columns, got {X.shape[1]}")
        kern = _BACKENDS[backend or BACKEND]
        return kern.predict(X, self.feature, self.threshold, self.left, self.right, self.value,
                            self.roots)

    def to_bytes(self) -> bytes:
        meta = json.dumps(self.meta, sort_keys=True).encode()
        head = MAGIC + struct.pack("<IIIII", FORMAT_VERSION, self.n_features, self.n_trees,
                                   self.n_nodes, len(meta))
        parts = [head, meta, self.roots.astype("<i4").tobytes(), self.feature.astype("<i4").tobytes(),
                 self.threshold.astype("<f8").tobytes(), self.left.astype("<i4").tobytes(),
                 self.right.astype("<i4").tobytes(), self.value.astype("<f8").tobytes()]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Forest":
        if buf[:4] != MAGIC:
            raise ValueError("not a forest file (bad magic)")
        version, n_features, n_trees, n_nodes, meta_len = struct.unpack_from("<IIIII", buf, 4)
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported forest format version {version}")
        off = 24
        meta = json.loads(buf[off:off + meta_len].decode()) if meta_len else {}
        off += meta_len

        def take(dtype, count):
            nonlocal off
            arr = np.frombuffer(buf, dtype=dtype, count=count, offset=off)
            off += arr.nbytes
            return arr.astype(dtype[1:])  # native-endian, writable copy

        roots = take("<i4", n_trees)
        feature = take("<i4", n_nodes)
        threshold = take("<f8", n_nodes)
        left = take("<i4", n_nodes)
        right = take("<i4", n_nodes)
        value = take("<f8", n_nodes)
        if off != len(buf):
            raise ValueError("trailing bytes in forest file")
        return cls(n_features, roots, feature, threshold, left, right, value, meta)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Forest":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def fit(X, y, params: ForestParams = ForestParams(), backend: str | None = None) -> Forest:
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=np.float64)))
    y = np.ascontiguousarray(np.asarray(y, dtype=np.float64).reshape(-1))
    if X.shape[0] == 0:
        raise ValueError("empty training set")
    if X.shape[0] != len(y):
        raise ValueError("X and y row counts differ")
    if not np.all(np.isfinite(y)):
        raise ValueError("training targets must be finite")
    d = X.shape[1]
    k = d if params.k_candidates is None else params.k_candidates
    if k > d:
        raise ValueError(f"k_candidates={k} exceeds input dimension {d}")
    kern = _BACKENDS[backend or BACKEND]
    parts = [kern.build_tree(X, y, k, params.n_min, tree_seed(params.rng_seed, t))
             for t in range(params.n_trees)]
    offsets = np.cumsum([0] + [len(p[0]) for p in parts[:-1]]).astype(np.int32)
    feature = np.concatenate([p[0] for p in parts]).astype(np.int32)
    threshold = np.concatenate([p[1] for p in parts])
    left = np.concatenate([np.where(p[2] >= 0, p[2] + o, -1) for p, o in zip(parts, offsets)]).astype(np.int32)
    right = np.concatenate([np.where(p[3] >= 0, p[3] + o, -1) for p, o in zip(parts, offsets)]).astype(np.int32)
    value = np.concatenate([p[4] for p in parts])
    return Forest(d, offsets, feature, threshold, left, right, value,
                  meta={"n_min": params.n_min, "k_candidates": k, "rng_seed": params.rng_seed})
