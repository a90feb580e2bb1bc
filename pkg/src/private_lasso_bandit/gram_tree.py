"""Tree-based aggregation of the joint (d+1)x(d+1) Gram stream.

Each round contributes the rank-1 update b b^T with b = (x, r).  A
complete binary "counter" tree over [1, T] (T padded to a power of two)
lets any prefix sum be assembled from at most ceil(log2 T) + 1 dyadic
node sums, each perturbed once by PSD Wishart noise.

Node noise is a deterministic function of the tree seed and the node
index: it is materialized lazily on first use, cached, and never
resampled, so repeated queries are deterministic and post-processing of
already-noised nodes is free.  Exact node partial sums are reconstructed
from the stored per-round update vectors; the frontier prefix is also
maintained incrementally so zero-noise queries reproduce a running
accumulator bit for bit.
"""

from __future__ import annotations

import struct

import numpy as np

from .dp_core import WishartParams, wishart_noise
from .sparse_regression import RestrictedGram

_DUMP_MAGIC = b"GRAMPFX1"


class HorizonExceeded(RuntimeError):
    pass


def _next_pow2(n: int) -> int:
    p = 1
    while p < n:
        p *= 2
    return p


class NoisyGramTree:
    def __init__(
        self,
        horizon: int,
        dim: int,
        params: WishartParams,
        seed=0,
    ):
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        if params.dim != dim:
            raise ValueError("params.dim must match dim")
        self.horizon = int(horizon)
        self.dim = int(dim)
        self.params = params
        self.t_pad = _next_pow2(self.horizon)
        self.depth = self.t_pad.bit_length() - 1
        self._rows = np.zeros((self.horizon, dim))
        self._count = 0
        self._prefix = np.zeros((dim, dim))
        self._noise_cache: dict[int, np.ndarray] = {}
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        self._noise_entropy = tuple(int(s) for s in ss.generate_state(4))
        zero = np.zeros((dim, dim))
        zero.setflags(write=False)
        self._zero = zero

    @property
    def count(self) -> int:
        return self._count

    @property
    def noise_nodes_sampled(self) -> int:
        """Distinct node-noise matrices materialized so far (<= 2T - 1)."""
        return len(self._noise_cache)

    # -- structure -------------------------------------------------------

    def node_interval(self, v: int) -> tuple[int, int]:
        """1-based closed round interval covered by heap node v."""
        if not 1 <= v < 2 * self.t_pad:
            raise ValueError(f"node index {v} out of range")
        level = v.bit_length() - 1
        size = self.t_pad >> level
        start = (v - (1 << level)) * size + 1
        return start, start + size - 1

    def covering_nodes(self, position: int) -> list[int]:
        """Nodes whose dyadic interval contains the given round (leaf to
        root); always depth + 1 of them."""
        if not 1 <= position <= self.t_pad:
            raise ValueError(f"position {position} out of range")
        v = self.t_pad + position - 1
        path = []
        while v >= 1:
            path.append(v)
            v //= 2
        return path

    def prefix_nodes(self, t: int) -> list[int]:
        """Canonical dyadic decomposition of [1, t]; at most
        ceil(log2 T) + 1 nodes."""
        if not 1 <= t <= self.t_pad:
            raise ValueError(f"t={t} out of range")
        nodes = []
        start, rem = 1, t
        while rem > 0:
            size = 1 << (rem.bit_length() - 1)
            nodes.append(self.t_pad // size + (start - 1) // size)
            start += size
            rem -= size
        return nodes

    # -- updates and queries ---------------------------------------------

    def insert(self, x: np.ndarray, r: float) -> None:
        """Append round count+1: add b b^T, b = (x, r), to the stream."""
        if self._count >= self.horizon:
            raise HorizonExceeded(
                f"horizon {self.horizon} exceeded at insert {self._count + 1}"
            )
        b = np.empty(self.dim)
        b[:-1] = x
        b[-1] = r
        self._rows[self._count] = b
        self._prefix += np.outer(b, b)
        self._count += 1

    def exact_prefix(self, t: int) -> np.ndarray:
        """Exact (noiseless) Gram prefix over rounds [1, t].

        The frontier (t == count) returns the incrementally maintained
        accumulator; historical prefixes are re-accumulated in insertion
        order so the float operation sequence matches a running oracle.
        """
        if not 1 <= t <= self._count:
            raise ValueError(f"t={t} outside inserted range [1, {self._count}]")
        if t == self._count:
            return self._prefix.copy()
        acc = np.zeros((self.dim, self.dim))
        for i in range(t):
            acc += np.outer(self._rows[i], self._rows[i])
        return acc

    def node_partial_sum(self, v: int) -> np.ndarray:
        """Exact partial sum of the (already inserted) rounds in node v."""
        start, end = self.node_interval(v)
        end = min(end, self._count)
        acc = np.zeros((self.dim, self.dim))
        for i in range(start - 1, end):
            acc += np.outer(self._rows[i], self._rows[i])
        return acc

    def node_finalized(self, v: int) -> bool:
        return self.node_interval(v)[1] <= self._count

    def node_noise(self, v: int) -> np.ndarray:
        """Cached PSD noise for node v; a pure function of (seed, v)."""
        cached = self._noise_cache.get(v)
        if cached is not None:
            return cached
        if self.params.scale == 0.0:
            noise = self._zero
        else:
            rng = np.random.default_rng(
                np.random.SeedSequence(
                    entropy=self._noise_entropy, spawn_key=(v,)
                )
            )
            noise = wishart_noise(self.params, rng)
            noise.setflags(write=False)
        self._noise_cache[v] = noise
        return noise

    def query_prefix(self, t: int) -> np.ndarray:
        """Noisy prefix sum over [1, t]: exact prefix plus the cached
        noise of each canonical node.  Deterministic across repeated
        identical queries."""
        out = self.exact_prefix(t)
        for v in self.prefix_nodes(t):
            out += self.node_noise(v)
        return out

    def query_noise(self, t: int) -> np.ndarray:
        """Noise component of query_prefix(t) (post-processing only)."""
        if not 1 <= t <= self._count:
            raise ValueError(f"t={t} outside inserted range [1, {self._count}]")
        out = np.zeros((self.dim, self.dim))
        for v in self.prefix_nodes(t):
            out += self.node_noise(v)
        return out

    def dump_prefix(self, path, t: int) -> None:
        """Binary debug dump of exact vs noisy prefix at checkpoint t.

        Layout (little endian): 8-byte magic "GRAMPFX1", then three
        uint64 (dim, t, count), then the exact prefix followed by the
        noisy prefix, each dim*dim float64 in row-major order.
        """
        exact = self.exact_prefix(t)
        noisy = self.query_prefix(t)
        with open(path, "wb") as fh:
            fh.write(_DUMP_MAGIC)
            fh.write(struct.pack("<QQQ", self.dim, t, self._count))
            fh.write(exact.astype("<f8").tobytes(order="C"))
            fh.write(noisy.astype("<f8").tobytes(order="C"))


def read_prefix_dump(path) -> tuple[np.ndarray, np.ndarray, int, int]:
    """Inverse of NoisyGramTree.dump_prefix: (exact, noisy, t, count)."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _DUMP_MAGIC:
            raise ValueError("not a gram prefix dump")
        dim, t, count = struct.unpack("<QQQ", fh.read(24))
        n = dim * dim * 8
        exact = np.frombuffer(fh.read(n), dtype="<f8").reshape(dim, dim)
        noisy = np.frombuffer(fh.read(n), dtype="<f8").reshape(dim, dim)
    return exact.copy(), noisy.copy(), int(t), int(count)


def extract_regression(gram_prefix: np.ndarray, support, count: int = -1) -> RestrictedGram:
    """Slice the joint Gram into support-restricted regression data.

    V is the support block of the context Gram, u the last column
    (context-reward moments) restricted to the support.  The joint
    matrix has dimension d+1; support indices must lie in [0, d).
    """
    G = np.asarray(gram_prefix)
    d = G.shape[0] - 1
    S = sorted(int(i) for i in support)
    if len(S) == 0:
        raise ValueError("empty support")
    if min(S) < 0 or max(S) >= d:
        raise ValueError("support indices must lie in [0, d)")
    V = G[np.ix_(S, S)].copy()
    u = G[S, d].copy()
    return RestrictedGram(V=V, u=u, count=count, support=tuple(S), dim=d)
