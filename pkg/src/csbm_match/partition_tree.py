"""Community-aware partition trees and per-vertex signature vectors.

For a root i in the target community C_k the tree is grown by BFS inside
g(C_k). A vertex j discovered at depth r+1 goes to the child of its parent's node
selected by the sign pattern of ``deg^a(j) - n_a q_a`` over the selected
communities a. Leaves (depth ``ell``) are indexed by an integer whose bit
``r * kprime + slot`` holds the sign of slot ``slot`` at depth ``r + 1``.

When the neighbourhood is not a tree, a vertex with predecessors in several
nodes hangs under the one with the smallest code. Nodes at every depth stay
disjoint and, unlike any rule based on vertex ids, the tree does not depend on
how the graph is labelled.
"""
from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .graph import CommunityPartition, Graph, community_degrees

MAX_INDEX_BITS = 62


def encode_leaf_index(signs: Sequence[int], kprime: int, ell: int) -> int:
    if len(signs) != kprime * ell:
        raise ValueError(f"expected {kprime * ell} signs, got {len(signs)}")
    code = 0
    for b, s in enumerate(signs):
        if s == 1:
            code |= 1 << b
        elif s != -1:
            raise ValueError("signs must be -1 or +1")
    return code


def decode_leaf_index(code: int, kprime: int, ell: int) -> list[int]:
    nbits = kprime * ell
    if not 0 <= code < (1 << nbits):
        raise ValueError("code out of range")
    return [1 if (code >> b) & 1 else -1 for b in range(nbits)]


class DefaultSize(NamedTuple):
    kprime: int
    ell: int
    w: int


def default_hyperparams(n_k: int, p_hat: float, k_available: int) -> DefaultSize:
    """Tree fan-out, depth and sparsification size from the asymptotic recipe.

    All logarithms are natural. ``kprime`` is clamped to ``k_available - 2`` (one
    community is the target, one is reserved for seeding) and so that the leaf
    count ``2**(kprime*ell)`` does not exceed ``n_k**2``.
    """
    if n_k < 16:
        raise ValueError("n_k must be at least 16")
    mean_deg = n_k * p_hat
    if mean_deg <= 1.0:
        raise ValueError("n_k * p_hat must exceed 1")
    ln_n = math.log(n_k)
    lnln = math.log(ln_n)
    ell = min(math.ceil(ln_n / (40.0 * math.log(mean_deg))), math.ceil(42.0 * lnln))
    ell = max(ell, 1)
    kprime = math.ceil(1680.0 * lnln * math.log(mean_deg) / ln_n)
    cap = k_available - 2
    if cap < 1:
        raise ValueError("need at least 3 communities")
    max_bits = int(math.floor(math.log2(float(n_k) ** 2)))
    kprime = max(1, min(kprime, cap, max_bits // ell))
    w = int(math.floor(ln_n ** 5))
    return DefaultSize(kprime, ell, w)


@dataclass(frozen=True)
class SignatureHyper:
    """Everything the signature computation needs besides the graph itself.

    ``p_hat`` is the within-community density of the target community and
    ``q_hat[a]`` the density between the target and community ``a``; the sign
    threshold for slot a is ``sizes[a] * q_hat[a]``. ``center`` and ``variance``
    override ``n_k p_hat`` and ``n_k p_hat (1 - p_hat)`` (harness estimates, or the
    log-degree statistics when ``log_degree`` is set).
    """

    kprime: int
    ell: int
    selected: tuple[int, ...]
    target: int
    reserved: int
    p_hat: float
    q_hat: tuple[float, ...]
    sizes: tuple[int, ...]
    log_degree: bool = False
    center: float | None = None
    variance: float | None = None

    def __post_init__(self):
        k = len(self.sizes)
        if self.kprime < 1 or self.ell < 1:
            raise ValueError("kprime and ell must be >= 1")
        if self.kprime * self.ell > MAX_INDEX_BITS:
            raise ValueError("2**(kprime*ell) leaves do not fit the index type")
        if len(self.selected) != self.kprime or len(set(self.selected)) != self.kprime:
            raise ValueError("selected must list kprime distinct communities")
        if not 0 <= self.target < k or not 0 <= self.reserved < k:
            raise ValueError("target/reserved community out of range")
        if self.reserved == self.target:
            raise ValueError("reserved community equals the target")
        for a in self.selected:
            if not 0 <= a < k or a in (self.target, self.reserved):
                raise ValueError(f"invalid selected community {a}")
        if len(self.q_hat) != k:
            raise ValueError("q_hat needs one entry per community")
        if self.log_degree and (self.center is None or self.variance is None):
            raise ValueError("log_degree mode needs explicit center and variance")

    @classmethod
    def build(cls, part: CommunityPartition, kprime: int, ell: int, p_hat: float,
              q_hat, *, log_degree: bool = False, center: float | None = None,
              variance: float | None = None, rng: np.random.Generator | None = None,
              target: int | None = None) -> SignatureHyper:
        """Pick the selected / reserved communities for ``part``.

        Default: the ``kprime`` largest communities other than the target are
        selected and the next one is reserved for seeding. With ``rng`` the
        ``kprime + 1`` communities are drawn at random instead.
        """
        target = part.smallest if target is None else target
        others = [a for a in range(part.k) if a != target]
        if kprime > len(others) - 1:
            raise ValueError(f"kprime={kprime} needs at least {kprime + 2} communities")
        if rng is not None:
            chosen = [others[x] for x in rng.choice(len(others), size=kprime + 1, replace=False)]
        else:
            chosen = others[:kprime + 1]
        if np.ndim(q_hat) == 0:
            q_hat = [float(q_hat)] * part.k
        return cls(kprime=kprime, ell=ell, selected=tuple(int(a) for a in chosen[:kprime]),
                   target=int(target), reserved=int(chosen[kprime]), p_hat=float(p_hat),
                   q_hat=tuple(float(x) for x in q_hat), sizes=tuple(int(s) for s in part.sizes),
                   log_degree=log_degree, center=center, variance=variance)

    @property
    def num_leaves(self) -> int:
        return 1 << (self.kprime * self.ell)

    @property
    def n_target(self) -> int:
        return self.sizes[self.target]

    def thresholds(self) -> np.ndarray:
        return np.array([self.sizes[a] * self.q_hat[a] for a in self.selected])

    def centre(self) -> float:
        if self.center is not None:
            return float(self.center)
        return self.n_target * self.p_hat

    def unit_variance(self) -> float:
        if self.variance is not None:
            return float(self.variance)
        return self.n_target * self.p_hat * (1.0 - self.p_hat)


@dataclass
class PartitionTree:
    """``nodes[d]`` maps the depth-d code to the sorted vertices of that node."""

    root: int
    kprime: int
    ell: int
    nodes: list[dict[int, tuple[int, ...]]] = field(default_factory=list)

    def leaves(self) -> dict[int, tuple[int, ...]]:
        return self.nodes[self.ell]


@dataclass
class SignatureSet:
    f: np.ndarray
    v: np.ndarray
    leaf_sizes: np.ndarray


class _TreeContext:
    """Per-graph quantities shared by every root: the target community's
    internal adjacency, sign bits and degree term of each of its vertices."""

    def __init__(self, g: Graph, part: CommunityPartition, hyper: SignatureHyper):
        if tuple(int(s) for s in part.sizes) != hyper.sizes:
            raise ValueError("partition does not match the hyper-parameters")
        self.hyper = hyper
        target = hyper.target
        deg = community_degrees(g, part)
        thr = hyper.thresholds()
        bits = np.zeros(g.n, dtype=np.int64)
        for slot, a in enumerate(hyper.selected):
            bits |= (deg[:, a] >= thr[slot]).astype(np.int64) << slot
        self.bits = bits
        dk = deg[:, target].astype(float)
        if hyper.log_degree:
            self.term = np.log1p(dk) - hyper.centre()
        else:
            self.term = dk - 1.0 - hyper.centre()
        in_target = part.labels == target
        self.in_target = in_target
        self.adj: dict[int, list[int]] = {}
        for u in part.members[target].tolist():
            nb = g.neighbors(u)
            self.adj[u] = nb[in_target[nb]].tolist()

    def bfs(self, root: int):
        """Yield (depth, vertices, codes) for depths 1..ell, vertices ascending."""
        kp = self.hyper.kprime
        seen = {root}
        code = {root: 0}
        frontier = [root]
        for r in range(self.hyper.ell):
            nxt: dict[int, int] = {}
            for u in frontier:
                cu = code[u]
                for w in self.adj[u]:
                    if w in seen:
                        continue
                    prev = nxt.get(w)
                    if prev is None or cu < prev:
                        nxt[w] = cu
            frontier = sorted(nxt)
            seen.update(frontier)
            shift = r * kp
            bits = self.bits
            for w in frontier:
                code[w] = nxt[w] | (int(bits[w]) << shift)
            yield r + 1, frontier, [code[w] for w in frontier]

    def leaves(self, root: int):
        depth_vertices: list[int] = []
        depth_codes: list[int] = []
        for _, vs, cs in self.bfs(root):
            depth_vertices, depth_codes = vs, cs
        return depth_vertices, depth_codes


def build_partition_tree(g: Graph, part: CommunityPartition, hyper: SignatureHyper, i: int,
                         _ctx: _TreeContext | None = None) -> PartitionTree:
    if part.labels[i] != hyper.target:
        raise ValueError(f"root {i} is not in the target community")
    ctx = _ctx or _TreeContext(g, part, hyper)
    tree = PartitionTree(root=int(i), kprime=hyper.kprime, ell=hyper.ell, nodes=[{0: (int(i),)}])
    for _, vs, cs in ctx.bfs(int(i)):
        level: dict[int, list[int]] = {}
        for v, c in zip(vs, cs):
            level.setdefault(c, []).append(v)
        tree.nodes.append({c: tuple(sorted(m)) for c, m in sorted(level.items())})
    while len(tree.nodes) <= hyper.ell:
        tree.nodes.append({})
    return tree


def compute_signature(tree: PartitionTree, g: Graph, part: CommunityPartition,
                      hyper: SignatureHyper, _ctx: _TreeContext | None = None) -> SignatureSet:
    ctx = _ctx or _TreeContext(g, part, hyper)
    L = hyper.num_leaves
    f = np.zeros(L)
    sizes = np.zeros(L, dtype=np.int64)
    for c, vs in tree.leaves().items():
        sizes[c] = len(vs)
        f[c] = float(np.sum(ctx.term[list(vs)]))
    return SignatureSet(f=f, v=hyper.unit_variance() * sizes, leaf_sizes=sizes)


def signature_matrices(g: Graph, part: CommunityPartition, hyper: SignatureHyper,
                       roots: Sequence[int] | None = None):
    """Signatures of every root (default: the whole target community).

    Returns ``(F, V, sizes)`` with one row per root, in the order of ``roots``.
    """
    ctx = _TreeContext(g, part, hyper)
    if roots is None:
        roots = part.members[hyper.target]
    roots = [int(r) for r in roots]
    L = hyper.num_leaves
    F = np.zeros((len(roots), L))
    S = np.zeros((len(roots), L), dtype=np.int64)
    for row, root in enumerate(roots):
        if not ctx.in_target[root]:
            raise ValueError(f"root {root} is not in the target community")
        vs, cs = ctx.leaves(root)
        if not vs:
            continue
        cs = np.asarray(cs, dtype=np.int64)
        F[row] = np.bincount(cs, weights=ctx.term[vs], minlength=L)
        S[row] = np.bincount(cs, minlength=L)
    return F, hyper.unit_variance() * S, S
