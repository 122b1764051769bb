"""Graph, community partition and permutation primitives.

Vertices are dense 0-based indices. Adjacency is kept as a CSR pair
(``indptr``, ``indices``) with every neighbor list sorted and duplicate-free.
"""
from __future__ import annotations

from collections.abc import Iterable, Sequence

import numpy as np
import scipy.sparse as sp


class Graph:
    """Immutable undirected simple graph."""

    __slots__ = ("n", "indptr", "indices", "_csr")

    def __init__(self, n: int, indptr: np.ndarray, indices: np.ndarray):
        self.n = int(n)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.indptr.setflags(write=False)
        self.indices.setflags(write=False)
        self._csr = None

    @classmethod
    def from_edges(cls, n: int, edges) -> Graph:
        """Build from an iterable / (m, 2) array of vertex pairs.

        Self-loops are dropped and duplicates (in either orientation) collapse.
        """
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= n):
            raise ValueError("edge endpoint out of range")
        e = e[e[:, 0] != e[:, 1]]
        both = np.concatenate([e, e[:, ::-1]])
        if both.size:
            key = np.unique(both[:, 0] * n + both[:, 1])
            rows, cols = np.divmod(key, n)
        else:
            rows = cols = np.empty(0, dtype=np.int64)
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
        # key order is row-major, so cols are already sorted within each row
        return cls(n, indptr, cols)

    @classmethod
    def empty(cls, n: int) -> Graph:
        return cls(n, np.zeros(n + 1, dtype=np.int64), np.empty(0, dtype=np.int64))

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def degree(self, v: int | None = None):
        deg = np.diff(self.indptr)
        return deg if v is None else int(deg[v])

    def has_edge(self, u: int, v: int) -> bool:
        nb = self.neighbors(u)
        pos = np.searchsorted(nb, v)
        return bool(pos < nb.size and nb[pos] == v)

    @property
    def num_edges(self) -> int:
        return int(self.indices.size // 2)

    def edges(self) -> np.ndarray:
        """(m, 2) array of edges with u < v, lexicographically sorted."""
        rows = np.repeat(np.arange(self.n, dtype=np.int64), np.diff(self.indptr))
        mask = rows < self.indices
        return np.column_stack([rows[mask], self.indices[mask]])

    def to_csr(self) -> sp.csr_matrix:
        if self._csr is None:
            data = np.ones(self.indices.size, dtype=np.int64)
            self._csr = sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))
        return self._csr

    def subgraph(self, vertices: Sequence[int]) -> Graph:
        """Induced subgraph relabelled to ``0..len(vertices)-1`` in the given order."""
        vs = np.asarray(vertices, dtype=np.int64)
        sub = self.to_csr()[vs][:, vs].tocoo()
        return Graph.from_edges(vs.size, np.column_stack([sub.row, sub.col]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return (self.n == other.n and np.array_equal(self.indptr, other.indptr)
                and np.array_equal(self.indices, other.indices))

    def __hash__(self):
        return hash((self.n, self.indices.tobytes()))

    def __repr__(self) -> str:
        return f"Graph(n={self.n}, m={self.num_edges})"


class CommunityPartition:
    """Vertex -> community map, indexed so that sizes are non-increasing.

    The smallest community therefore has index ``k - 1``. Equal-size communities
    keep the order of their original labels. ``original`` maps each internal index
    back to the label it was loaded with.
    """

    __slots__ = ("labels", "sizes", "members", "original")

    def __init__(self, labels: np.ndarray, original: Sequence | None = None):
        labels = np.asarray(labels, dtype=np.int64)
        k = int(labels.max()) + 1 if labels.size else 0
        if labels.size and labels.min() < 0:
            raise ValueError("negative community label")
        sizes = np.bincount(labels, minlength=k)
        if np.any(sizes[:-1] < sizes[1:]):
            raise ValueError("community sizes must be non-increasing; use from_labels")
        if np.any(sizes == 0):
            raise ValueError("empty community")
        self.labels = labels
        self.labels.setflags(write=False)
        self.sizes = sizes
        self.members = [np.flatnonzero(labels == a) for a in range(k)]
        self.original = tuple(original) if original is not None else tuple(range(k))

    @classmethod
    def from_labels(cls, raw: Sequence, order: Sequence | None = None) -> CommunityPartition:
        """Re-index arbitrary hashable labels so that the smallest community is last.

        ``order`` forces a given original-label -> index assignment (used to align
        the partition of a second graph with the first one).
        """
        raw = list(raw)
        if order is None:
            counts: dict = {}
            first: dict = {}
            for pos, lab in enumerate(raw):
                counts[lab] = counts.get(lab, 0) + 1
                first.setdefault(lab, pos)
            try:
                uniq = sorted(counts)
            except TypeError:
                uniq = sorted(counts, key=lambda x: first[x])
            order = sorted(uniq, key=lambda lab: -counts[lab])
        index = {lab: a for a, lab in enumerate(order)}
        try:
            labels = np.array([index[lab] for lab in raw], dtype=np.int64)
        except KeyError as exc:
            raise ValueError(f"label {exc.args[0]!r} not in the given order") from None
        return cls(labels, original=order)

    @property
    def n(self) -> int:
        return int(self.labels.size)

    @property
    def k(self) -> int:
        return int(self.sizes.size)

    @property
    def smallest(self) -> int:
        return self.k - 1

    def original_labels(self) -> list:
        return [self.original[a] for a in self.labels]

    def __eq__(self, other) -> bool:
        if not isinstance(other, CommunityPartition):
            return NotImplemented
        return np.array_equal(self.labels, other.labels) and self.original == other.original

    def __repr__(self) -> str:
        return f"CommunityPartition(n={self.n}, sizes={self.sizes.tolist()})"


class Permutation:
    """Bijection on ``range(n)`` with O(1) forward and inverse lookup."""

    __slots__ = ("forward", "inverse")

    def __init__(self, forward):
        fwd = np.asarray(forward, dtype=np.int64).ravel()
        n = fwd.size
        if n and (fwd.min() < 0 or fwd.max() >= n):
            raise ValueError("permutation entry out of range")
        inv = np.full(n, -1, dtype=np.int64)
        inv[fwd] = np.arange(n, dtype=np.int64)
        if np.any(inv < 0):
            raise ValueError("not a bijection")
        fwd.setflags(write=False)
        inv.setflags(write=False)
        self.forward = fwd
        self.inverse = inv

    @classmethod
    def identity(cls, n: int) -> Permutation:
        return cls(np.arange(n))

    @classmethod
    def random(cls, n: int, rng: np.random.Generator) -> Permutation:
        return cls(rng.permutation(n))

    @property
    def n(self) -> int:
        return int(self.forward.size)

    def __call__(self, v):
        return self.forward[v]

    def inv(self) -> Permutation:
        return Permutation(self.inverse)

    def compose(self, other: Permutation) -> Permutation:
        """Return ``self ∘ other`` (apply ``other`` first)."""
        if other.n != self.n:
            raise ValueError("size mismatch")
        return Permutation(self.forward[other.forward])

    def is_bijection(self) -> bool:
        n = self.n
        return (np.array_equal(self.forward[self.inverse], np.arange(n))
                and np.array_equal(self.inverse[self.forward], np.arange(n)))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Permutation):
            return NotImplemented
        return np.array_equal(self.forward, other.forward)

    def __hash__(self):
        return hash(self.forward.tobytes())

    def __repr__(self) -> str:
        return f"Permutation(n={self.n})"


def community_degrees(g: Graph, part: CommunityPartition) -> np.ndarray:
    """(n, k) matrix whose (v, a) entry is |N(v) ∩ C_a|."""
    if part.n != g.n:
        raise ValueError("partition and graph sizes differ")
    rows = np.repeat(np.arange(g.n, dtype=np.int64), np.diff(g.indptr))
    k = part.k
    flat = np.bincount(rows * k + part.labels[g.indices], minlength=g.n * k)
    return flat.reshape(g.n, k)


def degree_in_community(g: Graph, v: int, part: CommunityPartition, a: int) -> int:
    if not 0 <= v < g.n:
        raise ValueError(f"vertex {v} out of range")
    if not 0 <= a < part.k:
        raise ValueError(f"community {a} out of range")
    return int(np.count_nonzero(part.labels[g.neighbors(v)] == a))


def sphere(g: Graph, restrict: Iterable[int], i: int, r: int) -> set[int]:
    """Vertices of ``restrict`` at BFS distance exactly ``r`` from ``i`` in g(restrict)."""
    allowed = set(int(x) for x in restrict)
    if i not in allowed:
        raise ValueError(f"vertex {i} not in the restricting set")
    if r < 0:
        raise ValueError("negative radius")
    seen = {i}
    frontier = {i}
    for _ in range(r):
        nxt = set()
        for u in frontier:
            for w in g.neighbors(u).tolist():
                if w in allowed and w not in seen:
                    nxt.add(w)
        seen |= nxt
        frontier = nxt
        if not frontier:
            break
    return frontier


def apply_permutation(g: Graph, p: Permutation) -> Graph:
    """Relabel vertex x as p(x)."""
    if p.n != g.n:
        raise ValueError("permutation size does not match graph")
    e = g.edges()
    return Graph.from_edges(g.n, p.forward[e])
