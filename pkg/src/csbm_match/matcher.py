"""Matching stages: signature comparison, refinement, seeded propagation.

Conventions: ``g`` / ``g_pi`` is the relabelled graph, ``g2`` / ``g_prime`` the
reference one. Every permutation returned here maps a vertex of the reference
side to its estimated partner on the relabelled side, i.e. it estimates the
hidden ``truth``. Per-community permutations act on local indices: position
``x`` in ``part_prime.members[a]`` -> position in ``part_pi.members[a]``.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .assignment import solve_lap_max, solve_lap_min
from .graph import CommunityPartition, Graph, Permutation
from .partition_tree import SignatureHyper, signature_matrices
from .sbm import stream

log = logging.getLogger(__name__)

STREAM_INDEX_SET = 10
STREAM_CLEANUP = 11

INITIAL_MODES = ("threshold", "similarity")
REFINE_MODES = ("lap", "threshold", "none")
SEEDED_MODES = ("theory", "greedy")

STAGES = ("initial", "refine", "seeded_reserved", "seeded_rest", "overall")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MatchHyper:
    """Knobs of the matching stages.

    ``w`` and ``threshold_slack`` default to ``floor(ln(n_k)**5)`` and
    ``1/sqrt(ln n_k)``; ``refine_rounds`` defaults to ``ceil(log2 n_k)``.
    ``p_hat`` / ``q_hat`` feed the refinement and seeded thresholds and fall back
    to the signature hyper-parameters.

    ``initial="threshold"`` selects the sparsified threshold test with random
    cleanup; the default compares full signatures and solves an assignment.
    """

    w: int | None = None
    threshold_slack: float | None = None
    epsilon_refine: float = 0.3
    refine_rounds: int | None = None
    initial: str = "similarity"
    refine: str = "lap"
    seed_threshold_mode: str = "theory"
    refine_seeded: bool = False
    seed: int = 0
    p_hat: float | None = None
    q_hat: float | None = None

    def __post_init__(self):
        if self.w is not None and self.w < 1:
            raise ConfigError("w must be >= 1")
        if self.threshold_slack is not None and not 0.0 < self.threshold_slack < 1.0:
            raise ConfigError("threshold_slack must lie in (0, 1)")
        if not self.epsilon_refine > 0.0:
            raise ConfigError("epsilon_refine must be positive")
        if self.refine_rounds is not None and self.refine_rounds < 0:
            raise ConfigError("refine_rounds must be >= 0")
        if self.initial not in INITIAL_MODES:
            raise ConfigError(f"initial must be one of {INITIAL_MODES}")
        if self.refine not in REFINE_MODES:
            raise ConfigError(f"refine must be one of {REFINE_MODES}")
        if self.seed_threshold_mode not in SEEDED_MODES:
            raise ConfigError(f"seed_threshold_mode must be one of {SEEDED_MODES}")

    @classmethod
    def experiment(cls, **overrides) -> MatchHyper:
        """Empirical route: similarity matrix + assignment, assignment-based
        refinement, greedy one-hop seeding."""
        base = dict(initial="similarity", refine="lap", seed_threshold_mode="greedy")
        base.update(overrides)
        return cls(**base)

    def resolved_w(self, n_k: int) -> int:
        if self.w is not None:
            return self.w
        return max(1, int(math.floor(math.log(n_k) ** 5))) if n_k > 1 else 1

    def resolved_slack(self, n_k: int) -> float:
        if self.threshold_slack is not None:
            return self.threshold_slack
        ln = math.log(n_k) if n_k > 1 else 0.0
        # 1/sqrt(ln n_k) is only < 1 once n_k > e
        return 1.0 / math.sqrt(ln) if ln > 1.0 else 0.5


# ---------------------------------------------------------------- distances

def sample_index_set(kprime: int, ell: int, w: int, seed: int) -> np.ndarray:
    if kprime * ell < 1:
        raise ValueError("kprime * ell must be >= 1")
    L = 1 << (kprime * ell)
    if 2 * w >= L:
        return np.arange(L, dtype=np.int64)
    rng = stream(seed, STREAM_INDEX_SET)
    return np.sort(rng.choice(L, size=2 * w, replace=False)).astype(np.int64)


def normalized_distance(f, v, f2, v2, J=None) -> float:
    f, v, f2, v2 = (np.asarray(x, dtype=float) for x in (f, v, f2, v2))
    if not (f.shape == v.shape == f2.shape == v2.shape):
        raise ValueError("signature vectors must share one length")
    if J is not None:
        J = np.asarray(J, dtype=np.int64)
        f, v, f2, v2 = f[J], v[J], f2[J], v2[J]
    den = v + v2
    num = (f - f2) ** 2
    terms = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return float(terms.sum())


def distance_matrix(F, V, F2, V2, J=None) -> np.ndarray:
    """``D[i, j] = normalized_distance(F[i], V[i], F2[j], V2[j], J)``."""
    F, V, F2, V2 = (np.asarray(x, dtype=float) for x in (F, V, F2, V2))
    if F.shape[1] != F2.shape[1] or F.shape != V.shape or F2.shape != V2.shape:
        raise ValueError("signature matrices have inconsistent shapes")
    cols = np.arange(F.shape[1]) if J is None else np.asarray(J, dtype=np.int64)
    occupied = (V[:, cols] > 0).any(axis=0) | (V2[:, cols] > 0).any(axis=0)
    D = np.zeros((F.shape[0], F2.shape[0]))
    num = np.empty_like(D)
    den = np.empty_like(D)
    for s in cols[occupied]:
        np.subtract.outer(F[:, s], F2[:, s], out=num)
        np.square(num, out=num)
        np.add.outer(V[:, s], V2[:, s], out=den)
        np.divide(num, den, out=num, where=den > 0)
        num[den <= 0] = 0.0
        D += num
    return D


def build_similarity_matrix(F, V, F2, V2) -> np.ndarray:
    """Distances over the full leaf index space (rows: g side, cols: g2 side)."""
    return distance_matrix(F, V, F2, V2, None)


# ---------------------------------------------------------------- helpers

def _fallback_pairing(fwd: np.ndarray, taken_rows: np.ndarray) -> np.ndarray:
    """Pair the unassigned columns (fwd == -1) with unused rows, smallest ids first."""
    free_cols = np.flatnonzero(fwd < 0)
    free_rows = np.flatnonzero(~taken_rows)
    fwd[free_cols] = free_rows
    return fwd


def _greedy_pairs(score: np.ndarray, candidates: np.ndarray | None = None) -> np.ndarray:
    """Repeatedly take the largest remaining ``score[i, j]`` (ties: smaller i, then
    smaller j), drop row i and column j. Returns fwd with fwd[j] = i, -1 if unset.

    Only cells where ``candidates`` is true are eligible (all by default).
    """
    n_rows, n_cols = score.shape
    if candidates is None:
        ii, jj = np.indices(score.shape)
        ii, jj = ii.ravel(), jj.ravel()
    else:
        ii, jj = np.nonzero(candidates)
    vals = score[ii, jj]
    order = np.lexsort((jj, ii, -vals))
    fwd = np.full(n_cols, -1, dtype=np.int64)
    row_used = np.zeros(n_rows, dtype=bool)
    remaining = min(n_rows, n_cols)
    for t in order.tolist():
        i, j = ii[t], jj[t]
        if row_used[i] or fwd[j] >= 0:
            continue
        fwd[j] = i
        row_used[i] = True
        remaining -= 1
        if remaining == 0:
            break
    return fwd


def _complete(fwd: np.ndarray, n_rows: int) -> Permutation:
    taken = np.zeros(n_rows, dtype=bool)
    taken[fwd[fwd >= 0]] = True
    return Permutation(_fallback_pairing(fwd, taken))


# ---------------------------------------------------------------- stage 1

def cleanup_matching(B: np.ndarray, seed: int) -> Permutation:
    """Turn a 0/1 candidate matrix (rows g side, cols g2 side) into a bijection.

    Edges are visited in a uniformly random order and kept whenever both endpoints
    are still free, which is the same as repeatedly picking a uniform random edge
    of what remains. Leftovers are paired by increasing id.
    """
    B = np.asarray(B, dtype=bool)
    ii, jj = np.nonzero(B)
    rng = stream(seed, STREAM_CLEANUP)
    fwd = np.full(B.shape[1], -1, dtype=np.int64)
    row_used = np.zeros(B.shape[0], dtype=bool)
    for t in rng.permutation(ii.size).tolist():
        i, j = ii[t], jj[t]
        if row_used[i] or fwd[j] >= 0:
            continue
        fwd[j] = i
        row_used[i] = True
    return Permutation(_fallback_pairing(fwd, row_used))


def _check_sizes(part: CommunityPartition, part2: CommunityPartition):
    if part.n != part2.n or not np.array_equal(part.sizes, part2.sizes):
        raise ValueError("community sizes differ between the two graphs")


def target_signatures(g, g2, part, sig_hyper, part2=None):
    part2 = part if part2 is None else part2
    _check_sizes(part, part2)
    F, V, _ = signature_matrices(g, part, sig_hyper)
    F2, V2, _ = signature_matrices(g2, part2, sig_hyper)
    return F, V, F2, V2


def almost_exact_match(g: Graph, g2: Graph, part: CommunityPartition, sig_hyper: SignatureHyper,
                       match_hyper: MatchHyper, part2: CommunityPartition | None = None,
                       signatures=None) -> Permutation:
    """Sparsified threshold test on target-community signatures plus cleanup.

    Returns the local permutation over the target community.
    """
    F, V, F2, V2 = signatures if signatures is not None else target_signatures(
        g, g2, part, sig_hyper, part2)
    n_k = F.shape[0]
    w = match_hyper.resolved_w(n_k)
    J = sample_index_set(sig_hyper.kprime, sig_hyper.ell, w, match_hyper.seed)
    tau = J.size * (1.0 - match_hyper.resolved_slack(n_k))
    B = distance_matrix(F, V, F2, V2, J) < tau
    log.debug("threshold test: |J|=%d tau=%.3f candidate pairs=%d", J.size, tau, int(B.sum()))
    return cleanup_matching(B, match_hyper.seed)


def similarity_match(g, g2, part, sig_hyper, part2=None, signatures=None) -> Permutation:
    F, V, F2, V2 = signatures if signatures is not None else target_signatures(
        g, g2, part, sig_hyper, part2)
    return solve_lap_min(build_similarity_matrix(F, V, F2, V2))


# ---------------------------------------------------------------- refinement

def witness_counts(g: Graph, g2: Graph, pi: Permutation) -> np.ndarray:
    """``W[i, i'] = |pi^{-1}(N_g(i)) ∩ N_g2(i')|`` as a dense array."""
    if not (g.n == g2.n == pi.n):
        raise ValueError("graphs and permutation must share one size")
    A = g.to_csr()
    A2 = g2.to_csr()
    M = A[:, pi.forward]
    return np.asarray((M @ A2).toarray(), dtype=np.int64)


def refine_threshold(g: Graph, g2: Graph, pi0: Permutation, eps: float, p_hat: float) -> Permutation:
    n = pi0.n
    tau = eps * eps * p_hat * n / 512.0
    rounds = math.ceil(math.log2(n)) if n > 1 else 0
    log.info("refinement threshold eps^2*p*n/512 = %.4g (eps=%g, p=%g, n=%d)", tau, eps, p_hat, n)
    pi = pi0
    for _ in range(rounds):
        ge = witness_counts(g, g2, pi) >= tau
        unique = ge & (ge.sum(axis=1, keepdims=True) == 1) & (ge.sum(axis=0, keepdims=True) == 1)
        fwd = np.full(n, -1, dtype=np.int64)
        ii, jj = np.nonzero(unique)
        fwd[jj] = ii
        pi = _complete(fwd, n)
    return pi


def refine_lap(g: Graph, g2: Graph, pi0: Permutation, rounds: int) -> Permutation:
    pi = pi0
    for _ in range(rounds):
        nxt = solve_lap_max(witness_counts(g, g2, pi))
        if nxt == pi:
            break
        pi = nxt
    return pi


# ---------------------------------------------------------------- seeded matching

def _local_blocks(g: Graph, part: CommunityPartition, t: int, s: int):
    A = g.to_csr()
    mt, ms = part.members[t], part.members[s]
    return A[mt][:, mt], A[mt][:, ms]


def _check_seeds(part, s, seeds):
    if not isinstance(seeds, Permutation) or seeds.n != part.sizes[s]:
        raise ValueError("seeds must be a bijection on the seed community")


def two_hop_weights(g, g2, part, seeds: Permutation, s: int, t: int, part2=None) -> np.ndarray:
    """Number of seed pairs reachable from (i, i') through one in-community hop
    followed by one edge into the seed community. Rows: g side, cols: g2 side."""
    part2 = part if part2 is None else part2
    _check_seeds(part, s, seeds)
    Att, Ats = _local_blocks(g, part, t, s)
    Btt, Bts = _local_blocks(g2, part2, t, s)
    reach = ((Att @ Ats) > 0).astype(np.int64)[:, seeds.forward]
    reach2 = ((Btt @ Bts) > 0).astype(np.int64)
    return np.asarray((reach @ reach2.T).toarray(), dtype=np.int64)


def one_hop_counts(g, g2, part, seeds: Permutation, s: int, t: int, part2=None) -> np.ndarray:
    """``c[i, i'] = |{j : seeds(j) ∈ N_g(i), j ∈ N_g2(i')}|``."""
    part2 = part if part2 is None else part2
    _check_seeds(part, s, seeds)
    _, Ats = _local_blocks(g, part, t, s)
    _, Bts = _local_blocks(g2, part2, t, s)
    return np.asarray((Ats[:, seeds.forward] @ Bts.T).toarray(), dtype=np.int64)


def seeded_threshold(n_t: int, n_s: int, p_hat: float, q_hat: float) -> float:
    return n_t * n_s * p_hat * q_hat / 8.0


def seeded_match(g, g2, part, seeds: Permutation, s: int, t: int, p_hat: float, q_hat: float,
                 part2=None, weights: np.ndarray | None = None) -> Permutation:
    """Two-hop seeded matching of community ``t`` from a matching of ``s``.

    Pairs clearing ``n_t n_s p q / 8`` are accepted in order of decreasing weight
    (ties: smaller ids), so each side is used at most once; the rest are paired by
    increasing id.
    """
    if s == t:
        raise ValueError("seed and target communities must differ")
    if weights is None:
        weights = two_hop_weights(g, g2, part, seeds, s, t, part2)
    n_t = part.sizes[t]
    tau = seeded_threshold(n_t, part.sizes[s], p_hat, q_hat)
    fwd = _greedy_pairs(weights, weights >= tau)
    return _complete(fwd, n_t)


def seeded_match_greedy(g, g2, part, seeds: Permutation, s: int, t: int, part2=None) -> Permutation:
    if s == t:
        raise ValueError("seed and target communities must differ")
    counts = one_hop_counts(g, g2, part, seeds, s, t, part2)
    return _complete(_greedy_pairs(counts), part.sizes[t])


def check_seeded_regime(n_t: int, n_s: int, p: float, q: float) -> list[str]:
    problems = []
    if p > 1 / 256:
        problems.append(f"p={p:.4g} > 1/256")
    if n_t * p * q > 1 / 256:
        problems.append(f"n_t*p*q={n_t * p * q:.4g} > 1/256")
    if n_t * p < math.log(n_t):
        problems.append(f"n_t*p={n_t * p:.4g} < ln n_t")
    return problems


# ---------------------------------------------------------------- pipeline

@dataclass
class MatchResult:
    """Recovered matching.

    ``local[a]`` is the per-community permutation, ``permutation`` the assembled
    map from g_prime vertices to g_pi vertices. ``accuracy`` is filled per stage
    when the truth is known.
    """

    local: dict[int, Permutation]
    permutation: Permutation
    order: list[int]
    accuracy: dict[str, float] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)


def local_truth(truth: Permutation, part_pi: CommunityPartition, part_prime: CommunityPartition,
                a: int) -> np.ndarray:
    """Truth restricted to community ``a`` in local indices (-1 where it leaves C_a)."""
    pos = np.full(part_pi.n, -1, dtype=np.int64)
    pos[part_pi.members[a]] = np.arange(part_pi.sizes[a])
    return pos[truth.forward[part_prime.members[a]]]


def assemble(local: dict[int, Permutation], part_pi, part_prime) -> Permutation:
    fwd = np.full(part_prime.n, -1, dtype=np.int64)
    for a, sigma in local.items():
        fwd[part_prime.members[a]] = part_pi.members[a][sigma.forward]
    return Permutation(fwd)


def full_pipeline(g_pi: Graph, g_prime: Graph, part_pi: CommunityPartition,
                  sig_hyper: SignatureHyper, match_hyper: MatchHyper,
                  part_prime: CommunityPartition | None = None,
                  truth: Permutation | None = None) -> MatchResult:
    """Target community first, then the reserved community, then the rest."""
    part_prime = part_pi if part_prime is None else part_prime
    _check_sizes(part_pi, part_prime)
    k = part_pi.k
    if k < 3:
        raise ConfigError("the pipeline needs at least 3 communities")
    tgt, res = sig_hyper.target, sig_hyper.reserved
    p_hat = match_hyper.p_hat if match_hyper.p_hat is not None else sig_hyper.p_hat
    if match_hyper.q_hat is not None:
        q_hat = match_hyper.q_hat
    else:
        q_hat = float(np.mean([sig_hyper.q_hat[a] for a in range(k) if a != tgt]))

    result = MatchResult(local={}, permutation=Permutation.identity(0), order=[tgt, res])
    truths = {}
    if truth is not None:
        truths = {a: local_truth(truth, part_pi, part_prime, a) for a in range(k)}

    def score(stage, comms):
        if truth is None:
            return
        hits = sum(int(np.count_nonzero(result.local[a].forward == truths[a])) for a in comms)
        result.accuracy[stage] = hits / sum(int(part_prime.sizes[a]) for a in comms)

    def sub(a):
        return g_pi.subgraph(part_pi.members[a]), g_prime.subgraph(part_prime.members[a])

    def refine(a, sigma):
        if match_hyper.refine == "none":
            return sigma
        h, h2 = sub(a)
        if match_hyper.refine == "threshold":
            return refine_threshold(h, h2, sigma, match_hyper.epsilon_refine, p_hat)
        n_a = int(part_pi.sizes[a])
        rounds = match_hyper.refine_rounds
        if rounds is None:
            rounds = math.ceil(math.log2(n_a)) if n_a > 1 else 0
        return refine_lap(h, h2, sigma, rounds)

    def seed_from(s, t):
        seeds = result.local[s]
        if match_hyper.seed_threshold_mode == "greedy":
            sigma = seeded_match_greedy(g_pi, g_prime, part_pi, seeds, s, t, part_prime)
        else:
            problems = check_seeded_regime(int(part_pi.sizes[t]), int(part_pi.sizes[s]), p_hat, q_hat)
            if problems:
                log.warning("seeded matching %d->%d outside the guaranteed regime: %s",
                            s, t, ", ".join(problems))
            sigma = seeded_match(g_pi, g_prime, part_pi, seeds, s, t, p_hat, q_hat, part_prime)
        return refine(t, sigma) if match_hyper.refine_seeded else sigma

    t0 = time.perf_counter()
    if match_hyper.initial == "threshold":
        sigma = almost_exact_match(g_pi, g_prime, part_pi, sig_hyper, match_hyper, part_prime)
    else:
        sigma = similarity_match(g_pi, g_prime, part_pi, sig_hyper, part_prime)
    result.local[tgt] = sigma
    result.timings["initial"] = time.perf_counter() - t0
    score("initial", [tgt])

    t0 = time.perf_counter()
    result.local[tgt] = refine(tgt, sigma)
    result.timings["refine"] = time.perf_counter() - t0
    score("refine", [tgt])

    t0 = time.perf_counter()
    result.local[res] = seed_from(tgt, res)
    result.timings["seeded_reserved"] = time.perf_counter() - t0
    score("seeded_reserved", [res])

    t0 = time.perf_counter()
    rest = [a for a in range(k) if a not in (tgt, res)]
    for a in rest:
        result.local[a] = seed_from(res, a)
    result.order.extend(rest)
    result.timings["seeded_rest"] = time.perf_counter() - t0
    score("seeded_rest", rest)

    result.permutation = assemble(result.local, part_pi, part_prime)
    result.timings["overall"] = sum(result.timings.values())
    score("overall", list(range(k)))
    return result
