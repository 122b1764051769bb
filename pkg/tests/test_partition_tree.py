import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from csbm_match.graph import CommunityPartition, Graph, Permutation, apply_permutation, sphere
from csbm_match.partition_tree import (SignatureHyper, build_partition_tree, compute_signature,
                                       decode_leaf_index, default_hyperparams,
                                       encode_leaf_index, signature_matrices)
from csbm_match.sbm import SbmParams, community_permutation, generate_correlated_pair, stream


# ---------------------------------------------------------------- leaf index

def test_encode_examples():
    assert encode_leaf_index([-1] * 6, 3, 2) == 0
    assert encode_leaf_index([1] * 4, 2, 2) == 15
    # bit r*kprime + slot
    assert encode_leaf_index([-1, -1, 1, -1], 2, 2) == 4
    assert decode_leaf_index(4, 2, 2) == [-1, -1, 1, -1]


def test_encode_errors():
    with pytest.raises(ValueError):
        encode_leaf_index([1, 1, 1], 2, 2)
    with pytest.raises(ValueError):
        encode_leaf_index([1, 0, 1, 1], 2, 2)
    with pytest.raises(ValueError):
        decode_leaf_index(16, 2, 2)


def test_roundtrip_1000_strings():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        kp, ell = int(rng.integers(1, 7)), int(rng.integers(1, 5))
        x = rng.choice([-1, 1], size=kp * ell).tolist()
        code = encode_leaf_index(x, kp, ell)
        assert 0 <= code < 2 ** (kp * ell)
        assert decode_leaf_index(code, kp, ell) == x


# ---------------------------------------------------------------- default sizes

def test_default_hyperparams_formula():
    d = default_hyperparams(1000, 0.02, 6)
    ln_n = math.log(1000)
    assert d.ell == min(math.ceil(ln_n / (40 * math.log(20))), math.ceil(42 * math.log(ln_n))) == 1
    assert d.kprime == 4  # clamped to k_available - 2
    assert d.w == math.floor(ln_n ** 5)
    assert default_hyperparams(1000, 0.02, 100).kprime == 19  # 2**(k' ell) <= n_k**2


def test_default_hyperparams_errors():
    with pytest.raises(ValueError):
        default_hyperparams(10, 0.5, 6)
    with pytest.raises(ValueError):
        default_hyperparams(100, 0.01, 6)
    with pytest.raises(ValueError):
        default_hyperparams(100, 0.2, 2)


# ---------------------------------------------------------------- hyper validation

def _part(sizes):
    return CommunityPartition(np.repeat(np.arange(len(sizes)), sizes))


def test_hyper_build_defaults():
    part = _part([50, 40, 30, 20, 10])
    h = SignatureHyper.build(part, 2, 2, 0.1, 0.02)
    assert h.target == 4 and h.selected == (0, 1) and h.reserved == 2
    assert h.num_leaves == 16
    assert np.allclose(h.thresholds(), [50 * 0.02, 40 * 0.02])
    assert h.centre() == pytest.approx(10 * 0.1)
    assert h.unit_variance() == pytest.approx(10 * 0.1 * 0.9)
    hr = SignatureHyper.build(part, 2, 2, 0.1, 0.02, rng=np.random.default_rng(1))
    assert hr.target not in hr.selected and hr.reserved not in hr.selected + (hr.target,)


def test_hyper_rejects_bad_fields():
    part = _part([5, 5, 5])
    with pytest.raises(ValueError):
        SignatureHyper.build(part, 2, 1, 0.1, 0.1)  # needs 4 communities
    base = dict(kprime=1, ell=1, selected=(0,), target=2, reserved=1, p_hat=0.1,
                q_hat=(0.1, 0.1, 0.1), sizes=(5, 5, 5))
    SignatureHyper(**base)
    for bad in [dict(selected=(2,)), dict(selected=(1,)), dict(reserved=2), dict(kprime=0),
                dict(q_hat=(0.1,)), dict(log_degree=True), dict(kprime=1, ell=63)]:
        with pytest.raises(ValueError):
            SignatureHyper(**{**base, **bad})


# ---------------------------------------------------------------- oracle

def oracle_tree(g, part, hyper, root):
    """Layer-by-layer BFS inside the target community; a vertex joins the child
    of the smallest-coded node holding one of its predecessors."""
    target = hyper.target
    inside = {v for v in range(g.n) if part.labels[v] == target}
    nbrs = {v: [u for u in range(g.n) if g.has_edge(v, u) and u in inside] for v in inside}

    def sign(j, slot):
        a = hyper.selected[slot]
        d = sum(1 for u in range(g.n) if g.has_edge(j, u) and part.labels[u] == a)
        return 1 if d - hyper.sizes[a] * hyper.q_hat[a] >= 0 else -1

    signs_of = {root: []}
    levels = [{(): [root]}]
    dist = {root: 0}
    for r in range(hyper.ell):
        layer = {}
        for v in inside:
            if v in dist:
                continue
            preds = [u for u in nbrs[v] if dist.get(u) == r]
            if preds:
                layer[v] = preds
        nodes = {}
        for v, preds in layer.items():
            def code(u):
                s = signs_of[u]
                return encode_leaf_index(s, hyper.kprime, len(s) // hyper.kprime) if s else 0
            parent = min(preds, key=code)
            signs_of[v] = signs_of[parent] + [sign(v, slot) for slot in range(hyper.kprime)]
            dist[v] = r + 1
            key = encode_leaf_index(signs_of[v], hyper.kprime, r + 1)
            nodes.setdefault(key, []).append(v)
        levels.append({c: sorted(vs) for c, vs in nodes.items()})
    return levels


def tree_dicts(tree):
    return [{c: list(vs) for c, vs in level.items()} for level in tree.nodes[1:]]


def hand_fixture():
    # A = 0..3, R = 4..7, target = 8..11; C_k neighbourhood of 8 is a tree
    edges = [(8, 9), (8, 10), (9, 11),
             (9, 0), (9, 1), (10, 2), (11, 0), (11, 1), (11, 3),
             (8, 4), (10, 5), (0, 4), (2, 6)]
    g = Graph.from_edges(12, edges)
    part = CommunityPartition.from_labels([0] * 4 + [1] * 4 + [2] * 4)
    hyper = SignatureHyper.build(part, 1, 2, p_hat=0.5, q_hat=[0.5, 0.5, 0.5])
    return g, part, hyper


def test_hand_fixture_tree():
    g, part, hyper = hand_fixture()
    assert hyper.target == 2 and hyper.selected == (0,)
    tree = build_partition_tree(g, part, hyper, 8)
    # threshold n_A q = 2: vertex 9 (2 into A) is +, 10 (1) is -, 11 (3) is +
    assert tree.nodes[0] == {0: (8,)}
    assert tree.nodes[1] == {0: (10,), 1: (9,)}
    assert tree.nodes[2] == {3: (11,)}
    oracle = oracle_tree(g, part, hyper, 8)
    assert tree_dicts(tree) == oracle[1:]


def test_hand_fixture_signature():
    g, part, hyper = hand_fixture()
    sig = compute_signature(build_partition_tree(g, part, hyper, 8), g, part, hyper)
    # single-vertex leaf {11}: deg^k(11) - 1 - n_k p = 1 - 1 - 2
    want_f = np.zeros(4)
    want_f[3] = 1 - 1 - 4 * 0.5
    assert np.array_equal(sig.f, want_f)
    assert np.array_equal(sig.v, np.array([0, 0, 0, 4 * 0.5 * 0.5]))
    assert sig.leaf_sizes.tolist() == [0, 0, 0, 1]


def test_isolated_root():
    g = Graph.from_edges(9, [(0, 3), (1, 4)])
    part = CommunityPartition.from_labels([0] * 3 + [1] * 3 + [2] * 3)
    hyper = SignatureHyper.build(part, 1, 2, 0.3, 0.3)
    tree = build_partition_tree(g, part, hyper, 6)
    assert tree.nodes[1] == {} and tree.nodes[2] == {}
    sig = compute_signature(tree, g, part, hyper)
    assert not sig.f.any() and not sig.v.any()
    with pytest.raises(ValueError):
        build_partition_tree(g, part, hyper, 0)


@st.composite
def sbm_instances(draw):
    k = draw(st.integers(3, 5))
    sizes = sorted(draw(st.lists(st.integers(4, 14), min_size=k, max_size=k)), reverse=True)
    p = draw(st.floats(0.1, 0.6))
    q = draw(st.floats(0.05, 0.4))
    kprime = draw(st.integers(1, k - 2))
    ell = draw(st.integers(1, 3))
    seed = draw(st.integers(0, 2 ** 32))
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(k), sizes)
    n = labels.size
    same = labels[:, None] == labels[None, :]
    m = np.triu(rng.random((n, n)) < np.where(same, p, q), 1)
    g = Graph.from_edges(n, np.argwhere(m))
    part = CommunityPartition(labels)
    hyper = SignatureHyper.build(part, kprime, ell, p, rng.uniform(0.05, 0.5, size=k).tolist())
    return g, part, hyper


@given(sbm_instances())
def test_tree_matches_oracle(inst):
    g, part, hyper = inst
    for root in part.members[hyper.target].tolist():
        tree = build_partition_tree(g, part, hyper, root)
        assert tree_dicts(tree) == oracle_tree(g, part, hyper, root)[1:]


@given(sbm_instances())
def test_tree_invariants(inst):
    g, part, hyper = inst
    ck = part.members[hyper.target].tolist()
    for root in ck:
        tree = build_partition_tree(g, part, hyper, root)
        for d in range(1, hyper.ell + 1):
            level = tree.nodes[d]
            flat = [v for vs in level.values() for v in vs]
            assert len(flat) == len(set(flat))  # disjoint
            sph = sphere(g, ck, root, d)
            assert set(flat) <= sph
            assert len(flat) <= len(sph)
            for c, vs in level.items():
                parent = tree.nodes[d - 1][c & ((1 << ((d - 1) * hyper.kprime)) - 1)]
                for v in vs:
                    assert any(g.has_edge(v, u) for u in parent)
        if hyper.ell >= 1:
            assert set(v for vs in tree.nodes[1].values() for v in vs) == sphere(g, ck, root, 1)


@given(sbm_instances())
def test_signature_invariants_and_naive_sum(inst):
    g, part, hyper = inst
    F, V, S = signature_matrices(g, part, hyper)
    tk = hyper.target
    for row, root in enumerate(part.members[tk].tolist()):
        tree = build_partition_tree(g, part, hyper, root)
        sig = compute_signature(tree, g, part, hyper)
        want_f = np.zeros(hyper.num_leaves)
        want_n = np.zeros(hyper.num_leaves)
        for c, vs in tree.leaves().items():
            for j in vs:
                dk = sum(1 for u in range(g.n) if g.has_edge(j, u) and part.labels[u] == tk)
                want_f[c] += dk - 1 - part.sizes[tk] * hyper.p_hat
                want_n[c] += 1
        np.testing.assert_allclose(sig.f, want_f, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(sig.v, part.sizes[tk] * hyper.p_hat * (1 - hyper.p_hat) * want_n,
                                   rtol=1e-12)
        np.testing.assert_allclose(F[row], sig.f, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(V[row], sig.v, rtol=1e-12)
        assert np.all(sig.v >= 0)
        empty = sig.leaf_sizes == 0
        assert np.array_equal(sig.v == 0, empty)
        assert np.all(sig.f[empty] == 0)


def test_log_degree_mode():
    g, part, _ = hand_fixture()
    hyper = SignatureHyper.build(part, 1, 2, 0.5, [0.5] * 3, log_degree=True, center=0.25,
                                 variance=0.7)
    sig = compute_signature(build_partition_tree(g, part, hyper, 8), g, part, hyper)
    assert sig.f[3] == pytest.approx(math.log(2.0) - 0.25)
    assert sig.v[3] == pytest.approx(0.7)


def test_alpha_zero_signatures_agree():
    params = SbmParams.balanced(400, 4, 0.1, 0.03, 0.0)
    pair = generate_correlated_pair(params, 3, permute="identity")
    hyper = SignatureHyper.build(pair.part_prime, 2, 2, 0.1, 0.03)
    a = signature_matrices(pair.g_pi, pair.part_pi, hyper)
    b = signature_matrices(pair.g_prime, pair.part_prime, hyper)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


def test_signature_invariant_under_relabelling():
    params = SbmParams.balanced(400, 4, 0.1, 0.03, 0.1)
    pair = generate_correlated_pair(params, 4, keep_parent=False)
    g, part = pair.g_prime, pair.part_prime
    hyper = SignatureHyper.build(part, 2, 2, 0.1, 0.03)
    F, V, _ = signature_matrices(g, part, hyper)
    # shuffle the reserved community only
    rng = np.random.default_rng(0)
    fwd = np.arange(g.n)
    mem = part.members[hyper.reserved]
    fwd[mem] = mem[rng.permutation(mem.size)]
    h = apply_permutation(g, Permutation(fwd))
    F2, V2, _ = signature_matrices(h, part, hyper)
    assert np.array_equal(F, F2) and np.array_equal(V, V2)
    # any community-respecting relabelling moves signatures with their roots
    perm = community_permutation(part, stream(9, 0))
    h = apply_permutation(g, perm)
    ck = part.members[hyper.target]
    F3, V3, _ = signature_matrices(h, part, hyper, roots=perm.forward[ck])
    assert np.array_equal(F, F3) and np.array_equal(V, V3)
