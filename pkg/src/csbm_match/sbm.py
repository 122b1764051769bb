"""Correlated stochastic block model sampling.

A parent graph G0 is drawn from an SBM with densities p/(1-alpha) (inside a
community) and q/(1-alpha) (across communities). Two children keep every parent
edge independently with probability 1-alpha; the first child is then relabelled
by a hidden permutation.

Every sampling stage reads its own Philox stream derived from the master seed,
so results do not depend on the order stages are evaluated in.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import CommunityPartition, Graph, Permutation, apply_permutation

STREAM_PARENT = 0
STREAM_CHILD_1 = 1
STREAM_CHILD_2 = 2
STREAM_PERMUTATION = 3

PERMUTE_MODES = ("community", "uniform", "identity")


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for the sub-stream ``key`` of ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(x) for x in key))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *key: int) -> int:
    """Deterministic 63-bit child seed (kept non-negative for CSV round trips)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(x) for x in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True)
class SbmParams:
    sizes: tuple[int, ...]
    p: float
    q: float
    alpha: float

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if not self.sizes or min(self.sizes) <= 0:
            raise ValueError("community sizes must be positive")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha must lie in [0, 1)")
        if not (0.0 <= self.q <= 1.0 and 0.0 <= self.p <= 1.0):
            raise ValueError("p and q must lie in [0, 1]")
        if self.q > self.p:
            raise ValueError("require p >= q")
        if self.p / (1 - self.alpha) > 1.0 or self.q / (1 - self.alpha) > 1.0:
            raise ValueError("parent edge probability p/(1-alpha) or q/(1-alpha) exceeds 1")

    @classmethod
    def balanced(cls, n: int, k: int, p: float, q: float, alpha: float) -> SbmParams:
        base, extra = divmod(n, k)
        return cls(tuple(base + (a < extra) for a in range(k)), p, q, alpha)

    @property
    def n(self) -> int:
        return sum(self.sizes)

    @property
    def k(self) -> int:
        return len(self.sizes)

    def labels(self) -> np.ndarray:
        """Contiguous raw labels: vertices of sizes[0] first, then sizes[1], ..."""
        return np.repeat(np.arange(self.k), self.sizes)

    def partition(self) -> CommunityPartition:
        return CommunityPartition.from_labels(self.labels().tolist())


@dataclass
class CorrelatedPair:
    """Observed pair plus ground truth.

    ``truth`` maps a vertex of ``g_prime`` to its copy in ``g_pi``.
    """

    g_pi: Graph
    g_prime: Graph
    truth: Permutation
    part_pi: CommunityPartition
    part_prime: CommunityPartition
    params: SbmParams
    parent: Graph | None = field(default=None, repr=False)


def sample_parent(params: SbmParams, seed: int) -> Graph:
    rng = stream(seed, STREAM_PARENT)
    scale = 1.0 / (1.0 - params.alpha)
    p0, q0 = params.p * scale, params.q * scale
    starts = np.concatenate([[0], np.cumsum(params.sizes)])
    chunks = []
    for a in range(params.k):
        for b in range(a, params.k):
            prob = p0 if a == b else q0
            na, nb = params.sizes[a], params.sizes[b]
            if prob <= 0.0:
                continue
            hit = rng.random((na, nb)) < prob
            if a == b:
                hit = np.triu(hit, 1)
            r, c = np.nonzero(hit)
            chunks.append(np.column_stack([r + starts[a], c + starts[b]]))
    edges = np.concatenate(chunks) if chunks else np.empty((0, 2), dtype=np.int64)
    return Graph.from_edges(params.n, edges)


def subsample_child(parent: Graph, alpha: float, seed: int, stream_id: int = STREAM_CHILD_1) -> Graph:
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    rng = stream(seed, stream_id)
    e = parent.edges()
    keep = rng.random(len(e)) >= alpha
    return Graph.from_edges(parent.n, e[keep])


def community_permutation(part: CommunityPartition, rng: np.random.Generator) -> Permutation:
    """Uniform permutation that maps every community onto itself."""
    fwd = np.arange(part.n, dtype=np.int64)
    for mem in part.members:
        fwd[mem] = mem[rng.permutation(mem.size)]
    return Permutation(fwd)


def correlate(parent: Graph, part: CommunityPartition, alpha: float, seed: int,
              permute: str = "community"):
    """Subsample ``parent`` twice and hide the first child behind a permutation.

    Returns ``(g_pi, g_prime, truth, part_pi)``. With ``permute="uniform"`` the
    community labels travel with their vertices, so ``part_pi`` differs from
    ``part``.
    """
    if permute not in PERMUTE_MODES:
        raise ValueError(f"permute must be one of {PERMUTE_MODES}")
    g1 = subsample_child(parent, alpha, seed, STREAM_CHILD_1)
    g2 = subsample_child(parent, alpha, seed, STREAM_CHILD_2)
    rng = stream(seed, STREAM_PERMUTATION)
    if permute == "community":
        truth = community_permutation(part, rng)
    elif permute == "uniform":
        truth = Permutation.random(parent.n, rng)
    else:
        truth = Permutation.identity(parent.n)
    g_pi = apply_permutation(g1, truth)
    if permute == "uniform":
        labels_pi = np.empty(parent.n, dtype=np.int64)
        labels_pi[truth.forward] = part.labels
        part_pi = CommunityPartition(labels_pi, original=part.original)
    else:
        part_pi = part
    return g_pi, g2, truth, part_pi


def generate_correlated_pair(params: SbmParams, seed: int, permute: str = "community",
                             keep_parent: bool = True) -> CorrelatedPair:
    part = params.partition()
    parent = sample_parent(params, seed)
    g_pi, g_prime, truth, part_pi = correlate(parent, part, params.alpha, seed, permute)
    return CorrelatedPair(g_pi=g_pi, g_prime=g_prime, truth=truth, part_pi=part_pi,
                          part_prime=part, params=params,
                          parent=parent if keep_parent else None)
