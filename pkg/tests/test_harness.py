import math
from pathlib import Path

import numpy as np
import pytest

from csbm_match.graph import CommunityPartition, Graph, Permutation
from csbm_match.harness import (CSV_HEADER, DataError, ExperimentConfig, accuracy,
                                estimate_params, load_graph, load_pair, rows_to_csv, run_experiment,
                                run_single, save_graph, worker_count)
from csbm_match.matcher import ConfigError, MatchHyper
from csbm_match.sbm import SbmParams, derive_seed, generate_correlated_pair, sample_parent


# ---------------------------------------------------------------- estimation

def regular_ring(n, d):
    return [(i, (i + s) % n) for i in range(n) for s in range(1, d // 2 + 1)]


def test_estimate_regular_community():
    # two rings of degree 4 plus a perfect matching across
    n = 20
    edges = regular_ring(n, 4) + [(n + a, n + b) for a, b in regular_ring(n, 4)]
    edges += [(i, n + i) for i in range(n)]
    g = Graph.from_edges(2 * n, edges)
    part = CommunityPartition.from_labels([0] * n + [1] * n)
    est = estimate_params(g, part)
    assert est.within.tolist() == [4.0, 4.0]
    assert est.cross.tolist() == [[4.0, 1.0], [1.0, 4.0]]
    assert est.center == 4.0 and est.variance == 0.0
    assert est.log_variance == pytest.approx(0.0, abs=1e-15)
    assert est.p_hat.tolist() == [4 / n, 4 / n]


def test_estimate_sbm_within_tolerance():
    for s in range(10):
        g = sample_parent(SbmParams((900, 800), 0.05 * 0.9, 0.01 * 0.9, 0.1), s)
        part = CommunityPartition(np.repeat([0, 1], [900, 800]))
        est = estimate_params(g, part)
        assert abs(est.within[1] - 800 * 0.05) <= 0.15 * 800 * 0.05
        assert abs(est.variance - 800 * 0.05 * 0.95) <= 0.3 * 800 * 0.05 * 0.95


def test_empty_community_rejected():
    with pytest.raises(ValueError):
        CommunityPartition(np.array([0, 0, 2]))


# ---------------------------------------------------------------- accuracy

def test_accuracy_examples():
    rng = np.random.default_rng(0)
    truth = Permutation(rng.permutation(50))
    assert accuracy(truth, truth) == 1.0
    derange = Permutation(np.roll(np.arange(50), 1))
    assert accuracy(truth.compose(derange), truth) == 0.0
    assert accuracy(truth, truth, [0, 1]) == 1.0
    with pytest.raises(ValueError):
        accuracy(Permutation.identity(3), truth)
    with pytest.raises(ValueError):
        accuracy(truth, truth, [60])
    with pytest.raises(ValueError):
        accuracy(truth, truth, [])


def test_accuracy_uniform_random():
    rng = np.random.default_rng(1)
    n, draws = 500, 100
    truth = Permutation(rng.permutation(n))
    accs = [accuracy(Permutation(rng.permutation(n)), truth) for _ in range(draws)]
    # fixed points of a uniform permutation: mean 1, variance 1
    sd = 1 / n / math.sqrt(draws)
    assert abs(np.mean(accs) - 1 / n) < 4 * sd


# ---------------------------------------------------------------- file I/O

def write(path, text):
    Path(path).write_text(text, encoding="utf-8")
    return path


def test_load_empty_edges(tmp_path):
    e = write(tmp_path / "e.txt", "")
    lab = write(tmp_path / "l.txt", "a x\nb x\nc y\n")
    g, part, ids = load_graph(e, lab)
    assert g.n == 3 and g.num_edges == 0 and ids == ["a", "b", "c"]
    assert part.original == ("x", "y")


def test_load_duplicates_and_loops(tmp_path, caplog):
    e = write(tmp_path / "e.txt", "a b\nb a\na b\n# comment\n\nc c\n")
    lab = write(tmp_path / "l.txt", "a 1\nb 1\nc 2\n")
    g, part, _ = load_graph(e, lab)
    assert g.num_edges == 1
    assert "self-loop" in caplog.text


def test_load_errors(tmp_path):
    lab = write(tmp_path / "l.txt", "a 1\nb 1\n")
    with pytest.raises(DataError, match=":2:"):
        load_graph(write(tmp_path / "e1.txt", "a b\na b c\n"), lab)
    with pytest.raises(DataError, match="no label"):
        load_graph(write(tmp_path / "e2.txt", "a z\n"), lab)
    with pytest.raises(DataError, match=":2:"):
        load_graph(write(tmp_path / "e3.txt", ""), write(tmp_path / "l2.txt", "a 1\nb\n"))
    with pytest.raises(DataError, match="duplicate"):
        load_graph(write(tmp_path / "e4.txt", ""), write(tmp_path / "l3.txt", "a 1\na 2\n"))


def test_save_load_roundtrip(tmp_path):
    pair = generate_correlated_pair(SbmParams((40, 30, 20), 0.2, 0.05, 0.1), 3)
    ids = [f"v{i * 7}" for i in range(90)]
    save_graph(tmp_path / "e", tmp_path / "l", pair.g_prime, pair.part_prime, ids)
    g, part, ids2 = load_graph(tmp_path / "e", tmp_path / "l")
    assert g == pair.g_prime and ids2 == ids
    assert np.array_equal(part.labels, pair.part_prime.labels)
    assert part.original_labels() == [str(x) for x in pair.part_prime.original_labels()]


def test_load_pair_aligns_second_graph(tmp_path):
    write(tmp_path / "e1", "a b\nb c\n")
    write(tmp_path / "l1", "a 1\nb 1\nc 2\n")
    write(tmp_path / "e2", "c b\n")
    write(tmp_path / "l2", "c 2\nb 1\na 1\n")
    g1, p1, g2, p2, ids = load_pair(tmp_path / "e1", tmp_path / "l1", tmp_path / "e2", tmp_path / "l2")
    assert ids == ["a", "b", "c"] and p1 == p2
    assert g2.has_edge(1, 2) and g2.num_edges == 1
    write(tmp_path / "l3", "a 1\nb 2\nc 2\n")
    with pytest.raises(DataError):
        load_pair(tmp_path / "e1", tmp_path / "l1", tmp_path / "e2", tmp_path / "l3")


# ---------------------------------------------------------------- experiments

SMALL = dict(n=600, k=4, p=0.1, kprime=2, ell=2)


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig(mode="nope")
    with pytest.raises(ConfigError):
        ExperimentConfig(repetitions=0)
    with pytest.raises(ConfigError):
        ExperimentConfig(mode="synthetic", edges="x")
    with pytest.raises(ConfigError):
        ExperimentConfig(mode="real-resample", edges="x")
    assert ExperimentConfig(mode="real-resample", edges="x", labels="y").use_log_degree
    assert not ExperimentConfig().use_log_degree


def test_single_run_alpha_zero():
    rows = run_experiment(ExperimentConfig(alphas=(0.0,), seed=1, **SMALL))
    assert [r.stage for r in rows] == ["initial", "refine", "seeded_reserved", "seeded_rest", "overall"]
    assert rows[-1].accuracy == 1.0
    assert all(r.n == 600 and r.k == 4 and r.seed == rows[0].seed for r in rows)


def test_sweep_row_count_and_order():
    cfg = ExperimentConfig(alphas=(0.0, 0.1, 0.3), repetitions=2, seed=4, timings=False, **SMALL)
    rows = run_experiment(cfg)
    assert len(rows) == 3 * 2 * 5
    assert [r.run_id for r in rows[::5]] == list(range(6))
    assert [r.alpha for r in rows[::5]] == [0.0, 0.0, 0.1, 0.1, 0.3, 0.3]
    assert rows[0].seed == derive_seed(4, 0, 0) and rows[5].seed == derive_seed(4, 0, 1)


def test_csv_byte_stable(tmp_path):
    cfg = dict(alphas=(0.0, 0.2), repetitions=2, seed=9, timings=False, **SMALL)
    run_experiment(ExperimentConfig(output=str(tmp_path / "a.csv"), **cfg))
    run_experiment(ExperimentConfig(output=str(tmp_path / "b.csv"), **cfg))
    a = (tmp_path / "a.csv").read_bytes()
    assert a == (tmp_path / "b.csv").read_bytes()
    assert a.decode().splitlines()[0] == ",".join(CSV_HEADER)
    par = run_experiment(ExperimentConfig(**cfg), workers=2)
    assert rows_to_csv(par).encode() == a


def test_replay_row_seed():
    cfg = ExperimentConfig(alphas=(0.1, 0.2), repetitions=2, seed=2, timings=False, **SMALL)
    rows = run_experiment(cfg)
    for gi, alpha in enumerate(cfg.alphas):
        for rep in range(2):
            first = rows[(gi * 2 + rep) * 5]
            replay = run_single(cfg, first.run_id, cfg.p, alpha, first.seed)
            assert replay == rows[(gi * 2 + rep) * 5:(gi * 2 + rep + 1) * 5]


def test_failed_run_gives_error_row():
    cfg = ExperimentConfig(n=600, k=2, p=0.1, kprime=1, ell=2, alphas=(0.0, 0.1), seed=0)
    rows = run_experiment(cfg)
    assert [r.stage for r in rows] == ["error", "error"]
    assert rows[0].accuracy is None
    assert rows_to_csv(rows).splitlines()[1].split(",")[11] == ""


def test_accuracy_decreases_with_noise():
    cfg = ExperimentConfig(n=1200, k=4, p=0.08, kprime=2, ell=2, alphas=(0.0, 0.1, 0.2, 0.3),
                           repetitions=10, seed=21, timings=False)
    rows = [r for r in run_experiment(cfg) if r.stage == "overall"]
    means = [np.mean([r.accuracy for r in rows if r.alpha == a]) for a in cfg.alphas]
    for a, b in zip(means, means[1:]):
        assert b <= a + 0.05


def test_real_modes(tmp_path):
    pair = generate_correlated_pair(SbmParams.balanced(600, 4, 0.1, 0.03, 0.05), 6, keep_parent=True)
    save_graph(tmp_path / "p.e", tmp_path / "p.l", pair.parent, pair.part_prime)
    cfg = ExperimentConfig(mode="real-resample", edges=str(tmp_path / "p.e"),
                           labels=str(tmp_path / "p.l"), alphas=(0.0, 0.1), kprime=2, seed=3)
    rows = run_experiment(cfg)
    assert len(rows) == 10 and math.isnan(rows[0].p) is False
    assert rows[4].accuracy >= 0.95
    # two children sharing vertex ids
    g1 = pair.parent
    save_graph(tmp_path / "a.e", tmp_path / "a.l", g1, pair.part_prime)
    save_graph(tmp_path / "b.e", tmp_path / "b.l", pair.g_prime, pair.part_prime)
    cfg = ExperimentConfig(mode="real-pair", edges=str(tmp_path / "a.e"), labels=str(tmp_path / "a.l"),
                           edges2=str(tmp_path / "b.e"), labels2=str(tmp_path / "b.l"), kprime=2,
                           seed=3, match=MatchHyper.experiment())
    rows = run_experiment(cfg)
    assert [r.stage for r in rows][-1] == "overall"
    assert 0.0 <= rows[-1].accuracy <= 1.0


def test_worker_env(monkeypatch):
    monkeypatch.setenv("CSBM_WORKERS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("CSBM_WORKERS", "x")
    with pytest.raises(ConfigError):
        worker_count()
