"""Parameter estimation, accuracy, file I/O and the experiment driver."""
from __future__ import annotations

import csv
import io
import logging
import math
import os
import time
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .graph import CommunityPartition, Graph, Permutation, apply_permutation, community_degrees
from .matcher import STAGES, ConfigError, MatchHyper, full_pipeline
from .partition_tree import SignatureHyper
from .sbm import (STREAM_PERMUTATION, SbmParams, community_permutation, correlate,
                  derive_seed, generate_correlated_pair, stream)

log = logging.getLogger(__name__)

WORKERS_ENV = "CSBM_WORKERS"
MODES = ("synthetic", "real-pair", "real-resample")
CSV_HEADER = ("run_id", "mode", "n", "k", "p", "q", "alpha", "kprime", "ell", "w",
              "stage", "accuracy", "seconds", "seed")


class DataError(ValueError):
    """Unreadable or inconsistent input files."""


# ---------------------------------------------------------------- estimation

@dataclass
class ParamEstimate:
    """Median degree statistics.

    ``within[a]`` estimates n_a p, ``cross[a, b]`` estimates n_b q (degree of a
    vertex of C_a into C_b). ``center``/``variance`` describe within-community
    degrees of the smallest community, ``log_center``/``log_variance`` the same
    for ln(1 + degree).
    """

    sizes: np.ndarray
    within: np.ndarray
    cross: np.ndarray
    center: float
    variance: float
    log_center: float
    log_variance: float

    @property
    def p_hat(self) -> np.ndarray:
        return self.within / self.sizes

    @property
    def q_hat(self) -> np.ndarray:
        return self.cross / self.sizes[None, :]

    def mean(self, other: ParamEstimate) -> ParamEstimate:
        return ParamEstimate(self.sizes, (self.within + other.within) / 2,
                             (self.cross + other.cross) / 2,
                             (self.center + other.center) / 2,
                             (self.variance + other.variance) / 2,
                             (self.log_center + other.log_center) / 2,
                             (self.log_variance + other.log_variance) / 2)

    def as_dict(self) -> dict:
        return {"sizes": self.sizes.tolist(), "within_median": self.within.tolist(),
                "cross_median": self.cross.tolist(), "p_hat": self.p_hat.tolist(),
                "q_hat": self.q_hat.tolist(), "center": self.center,
                "variance": self.variance, "log_center": self.log_center,
                "log_variance": self.log_variance}


def estimate_params(g: Graph, part: CommunityPartition) -> ParamEstimate:
    if any(len(m) == 0 for m in part.members):
        raise ValueError("empty community")
    deg = community_degrees(g, part)
    k = part.k
    within = np.array([np.median(deg[part.members[a], a]) for a in range(k)], dtype=float)
    cross = np.array([[np.median(deg[part.members[a], b]) for b in range(k)] for a in range(k)],
                     dtype=float)
    dk = deg[part.members[part.smallest], part.smallest].astype(float)
    ldk = np.log1p(dk)
    return ParamEstimate(sizes=part.sizes.astype(float), within=within, cross=cross,
                         center=float(np.median(dk)), variance=float(np.var(dk)),
                         log_center=float(np.mean(ldk)), log_variance=float(np.var(ldk)))


def hyper_from_estimate(part: CommunityPartition, est: ParamEstimate, kprime: int, ell: int,
                        log_degree: bool = False, rng=None) -> SignatureHyper:
    """Signature hyper-parameters driven by data estimates instead of true p, q."""
    t = part.smallest
    if log_degree:
        center, variance = est.log_center, est.log_variance
    else:
        center, variance = est.center, est.variance
    return SignatureHyper.build(part, kprime, ell, p_hat=float(est.p_hat[t]),
                                q_hat=est.q_hat[t].tolist(), log_degree=log_degree,
                                center=center, variance=variance, rng=rng)


def accuracy(candidate: Permutation, truth: Permutation, domain: Sequence[int] | None = None) -> float:
    if candidate.n != truth.n:
        raise ValueError("candidate and truth are defined on different ranges")
    dom = np.arange(truth.n) if domain is None else np.asarray(domain, dtype=np.int64)
    if dom.size == 0:
        raise ValueError("empty domain")
    if dom.min() < 0 or dom.max() >= truth.n:
        raise ValueError("domain outside the permutation range")
    return float(np.mean(candidate.forward[dom] == truth.forward[dom]))


# ---------------------------------------------------------------- file I/O

def _lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if line and not line.startswith("#"):
                yield lineno, line.split()


def load_labels(label_path) -> tuple[list[str], list[str]]:
    ids, labels = [], []
    seen = set()
    for lineno, parts in _lines(label_path):
        if len(parts) != 2:
            raise DataError(f"{label_path}:{lineno}: expected 'id label'")
        if parts[0] in seen:
            raise DataError(f"{label_path}:{lineno}: duplicate vertex id {parts[0]!r}")
        seen.add(parts[0])
        ids.append(parts[0])
        labels.append(parts[1])
    return ids, labels


def load_edges(edge_path, index: dict[str, int]) -> tuple[Graph, int]:
    """Read an edge list over the ids in ``index``; returns the graph and the
    number of self-loops dropped."""
    pairs = []
    loops = 0
    for lineno, parts in _lines(edge_path):
        if len(parts) != 2:
            raise DataError(f"{edge_path}:{lineno}: expected two vertex ids")
        try:
            u, v = index[parts[0]], index[parts[1]]
        except KeyError as exc:
            raise DataError(f"{edge_path}:{lineno}: vertex {exc.args[0]!r} has no label") from None
        if u == v:
            loops += 1
            continue
        pairs.append((u, v))
    return Graph.from_edges(len(index), pairs), loops


def load_graph(edge_path, label_path, order: Sequence | None = None):
    """Load ``(graph, partition, ids)``.

    Vertices are numbered in label-file order; ``ids[v]`` is the external id of
    vertex v. ``order`` fixes the community indexing (see
    :meth:`CommunityPartition.from_labels`).
    """
    ids, labels = load_labels(label_path)
    index = {x: i for i, x in enumerate(ids)}
    g, loops = load_edges(edge_path, index)
    if loops:
        log.warning("%s: dropped %d self-loop(s)", edge_path, loops)
    try:
        part = CommunityPartition.from_labels(labels, order=order)
    except ValueError as exc:
        raise DataError(f"{label_path}: {exc}") from None
    return g, part, ids


def save_graph(edge_path, label_path, g: Graph, part: CommunityPartition,
               ids: Sequence[str] | None = None) -> None:
    ids = [str(i) for i in range(g.n)] if ids is None else [str(x) for x in ids]
    with open(edge_path, "w", encoding="utf-8") as fh:
        for u, v in g.edges().tolist():
            fh.write(f"{ids[u]} {ids[v]}\n")
    with open(label_path, "w", encoding="utf-8") as fh:
        for v, lab in enumerate(part.original_labels()):
            fh.write(f"{ids[v]} {lab}\n")


def load_pair(edges1, labels1, edges2, labels2):
    """Two graphs over one vertex set. The second graph is indexed like the first
    (same ids, same community indices), so the identity is the true alignment."""
    g1, part1, ids = load_graph(edges1, labels1)
    ids2, labs2 = load_labels(labels2)
    if set(ids2) != set(ids):
        raise DataError("the two label files list different vertex sets")
    index = {x: i for i, x in enumerate(ids)}
    by_id = dict(zip(ids2, labs2))
    g2, loops = load_edges(edges2, index)
    if loops:
        log.warning("%s: dropped %d self-loop(s)", edges2, loops)
    try:
        part2 = CommunityPartition.from_labels([by_id[x] for x in ids], order=part1.original)
    except ValueError as exc:
        raise DataError(f"{labels2}: {exc}") from None
    if not np.array_equal(part1.sizes, part2.sizes):
        raise DataError("community sizes differ between the two graphs")
    return g1, part1, g2, part2, ids


# ---------------------------------------------------------------- experiments

@dataclass
class ExperimentConfig:
    mode: str = "synthetic"
    n: int = 2400
    k: int = 6
    sizes: tuple[int, ...] | None = None
    p: float = 0.06
    q_ratio: float = 1 / 3
    alphas: tuple[float, ...] = (0.1,)
    ps: tuple[float, ...] | None = None
    edges: str | None = None
    labels: str | None = None
    edges2: str | None = None
    labels2: str | None = None
    kprime: int = 4
    ell: int = 2
    log_degree: bool | None = None
    permute: str = "community"
    match: MatchHyper = field(default_factory=MatchHyper.experiment)
    repetitions: int = 1
    seed: int = 0
    output: str | None = None
    timings: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        real_inputs = {"real-pair": ("edges", "labels", "edges2", "labels2"),
                       "real-resample": ("edges", "labels")}
        needed = real_inputs.get(self.mode, ())
        for name in ("edges", "labels", "edges2", "labels2"):
            present = getattr(self, name) is not None
            if present != (name in needed):
                state = "requires" if name in needed else "does not take"
                raise ConfigError(f"mode {self.mode} {state} --{name}")

    @property
    def use_log_degree(self) -> bool:
        if self.log_degree is not None:
            return self.log_degree
        return self.mode != "synthetic"

    def grid(self) -> list[tuple[float, float]]:
        if self.mode == "synthetic":
            return [(p, a) for p in (self.ps or (self.p,)) for a in self.alphas]
        if self.mode == "real-resample":
            return [(math.nan, a) for a in self.alphas]
        return [(math.nan, math.nan)]


@dataclass
class ResultRow:
    run_id: int
    mode: str
    n: int
    k: int
    p: float
    q: float
    alpha: float
    kprime: int
    ell: int
    w: int
    stage: str
    accuracy: float | None
    seconds: float | None
    seed: int

    def cells(self) -> list[str]:
        def num(x, fmt=".10g"):
            return "" if x is None or (isinstance(x, float) and math.isnan(x)) else format(x, fmt)
        return [str(self.run_id), self.mode, str(self.n), str(self.k), num(self.p), num(self.q),
                num(self.alpha), str(self.kprime), str(self.ell), str(self.w), self.stage,
                num(self.accuracy, ".6f"), num(self.seconds, ".4f"), str(self.seed)]


_PARENT_CACHE: dict = {}


def _load_cached(*paths):
    key = tuple(str(p) for p in paths)
    if key not in _PARENT_CACHE:
        if len(paths) == 2:
            _PARENT_CACHE[key] = load_graph(*paths)
        else:
            _PARENT_CACHE[key] = load_pair(*paths)
    return _PARENT_CACHE[key]


def _instance(cfg: ExperimentConfig, p: float, alpha: float, seed: int):
    """Build (g_pi, g_prime, part_pi, part_prime, truth, sig_hyper, p_report, q_report)."""
    if cfg.mode == "synthetic":
        q = p * cfg.q_ratio
        if cfg.sizes is not None:
            params = SbmParams(cfg.sizes, p, q, alpha)
        else:
            params = SbmParams.balanced(cfg.n, cfg.k, p, q, alpha)
        pair = generate_correlated_pair(params, seed, permute=cfg.permute, keep_parent=False)
        if cfg.use_log_degree:
            est = estimate_params(pair.g_prime, pair.part_prime)
            hyper = hyper_from_estimate(pair.part_prime, est, cfg.kprime, cfg.ell, True)
        else:
            hyper = SignatureHyper.build(pair.part_prime, cfg.kprime, cfg.ell, p, q)
        return (pair.g_pi, pair.g_prime, pair.part_pi, pair.part_prime, pair.truth, hyper, p, q)

    if cfg.mode == "real-resample":
        parent, part, _ = _load_cached(cfg.edges, cfg.labels)
        g_pi, g_prime, truth, part_pi = correlate(parent, part, alpha, seed, cfg.permute)
        est = estimate_params(g_pi, part_pi).mean(estimate_params(g_prime, part))
        part_prime = part
    else:
        g1, part1, g2, part2, _ = _load_cached(cfg.edges, cfg.labels, cfg.edges2, cfg.labels2)
        # hide the identity alignment so that id-based tie breaking cannot help
        truth = community_permutation(part1, stream(seed, STREAM_PERMUTATION))
        g_pi, part_pi = apply_permutation(g1, truth), part1
        g_prime, part_prime = g2, part2
        est = estimate_params(g_pi, part_pi).mean(estimate_params(g_prime, part_prime))
    hyper = hyper_from_estimate(part_prime, est, cfg.kprime, cfg.ell, cfg.use_log_degree)
    t = part_prime.smallest
    q_rep = float(np.mean([est.q_hat[t, a] for a in range(part_prime.k) if a != t]))
    return g_pi, g_prime, part_pi, part_prime, truth, hyper, float(est.p_hat[t]), q_rep


def run_single(cfg: ExperimentConfig, run_id: int, p: float, alpha: float, seed: int) -> list[ResultRow]:
    """One pipeline run; replaying with the same arguments reproduces its rows."""
    def row(stage, acc, secs, n=0, k=0, pp=p, qq=math.nan, w=0):
        return ResultRow(run_id, cfg.mode, n, k, pp, qq, alpha, cfg.kprime, cfg.ell, w, stage,
                         acc, secs if cfg.timings else None, seed)
    try:
        t0 = time.perf_counter()
        g_pi, g_prime, part_pi, part_prime, truth, hyper, p_rep, q_rep = _instance(cfg, p, alpha, seed)
        setup = time.perf_counter() - t0
        mh = replace(cfg.match, seed=seed)
        res = full_pipeline(g_pi, g_prime, part_pi, hyper, mh, part_prime, truth)
    except Exception as exc:  # a failed repetition must not abort the sweep
        log.error("run %d (p=%s, alpha=%s, seed=%d) failed: %s", run_id, p, alpha, seed, exc)
        return [row("error", None, None)]
    n, k = part_prime.n, part_prime.k
    w = mh.resolved_w(hyper.n_target)
    rows = []
    for stage in STAGES:
        secs = res.timings[stage] + (setup if stage == "overall" else 0.0)
        rows.append(row(stage, res.accuracy.get(stage), secs, n, k, p_rep, q_rep, w))
    return rows


def _run_task(args):
    return run_single(*args)


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> list[ResultRow]:
    tasks = []
    grid = cfg.grid()
    for gi, (p, alpha) in enumerate(grid):
        for rep in range(cfg.repetitions):
            run_id = gi * cfg.repetitions + rep
            tasks.append((cfg, run_id, p, alpha, derive_seed(cfg.seed, gi, rep)))
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_task, tasks))
    else:
        chunks = [_run_task(t) for t in tasks]
    rows = [r for chunk in chunks for r in chunk]
    if cfg.output:
        write_csv(rows, cfg.output)
    return rows


def rows_to_csv(rows: Sequence[ResultRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in rows:
        writer.writerow(r.cells())
    return buf.getvalue()


def write_csv(rows: Sequence[ResultRow], path) -> None:
    Path(path).write_text(rows_to_csv(rows), encoding="utf-8")


def config_dict(cfg: ExperimentConfig) -> dict:
    d = asdict(cfg)
    d["match"] = asdict(cfg.match)
    return d
