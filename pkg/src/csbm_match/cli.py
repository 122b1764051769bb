"""Command line entry point: ``csbm-match {generate,match,sweep,estimate}``.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .graph import Permutation
from .harness import (DataError, ExperimentConfig, estimate_params, hyper_from_estimate,
                      load_graph, rows_to_csv, run_experiment, save_graph)
from .matcher import MatchHyper, full_pipeline
from .sbm import SbmParams, generate_correlated_pair

EXIT_CONFIG = 2
EXIT_DATA = 3


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_match_flags(ap: argparse.ArgumentParser, experiment: bool):
    ap.add_argument("--kprime", type=int, default=4)
    ap.add_argument("--ell", type=int, default=2)
    ap.add_argument("--initial", choices=("similarity", "threshold"), default="similarity",
                    help="initial matching of the smallest community")
    ap.add_argument("--refine", choices=("lap", "threshold", "none"), default="lap")
    ap.add_argument("--refine-rounds", type=int, default=None)
    ap.add_argument("--epsilon", type=float, default=0.3, help="threshold refinement epsilon")
    ap.add_argument("--seeded", choices=("greedy", "theory"),
                    default="greedy" if experiment else "theory")
    ap.add_argument("--refine-seeded", action="store_true",
                    help="also refine every community recovered by seeding")
    ap.add_argument("--w", type=int, default=None)
    ap.add_argument("--slack", type=float, default=None)
    grp = ap.add_mutually_exclusive_group()
    grp.add_argument("--log-degree", dest="log_degree", action="store_true", default=None)
    grp.add_argument("--no-log-degree", dest="log_degree", action="store_false")


def _match_hyper(args, seed: int) -> MatchHyper:
    return MatchHyper(w=args.w, threshold_slack=args.slack, epsilon_refine=args.epsilon,
                      refine_rounds=args.refine_rounds, initial=args.initial, refine=args.refine,
                      seed_threshold_mode=args.seeded, refine_seeded=args.refine_seeded, seed=seed)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="csbm-match", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="sample a correlated SBM pair to files")
    gen.add_argument("--n", type=int, default=2400)
    gen.add_argument("--k", type=int, default=6)
    gen.add_argument("--sizes", type=_ints, default=None, help="explicit community sizes")
    gen.add_argument("--p", type=float, required=True)
    gen.add_argument("--q", type=float, required=True)
    gen.add_argument("--alpha", type=float, required=True)
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--permute", choices=("community", "uniform", "identity"), default="community")
    gen.add_argument("--out", type=Path, required=True, help="output directory")

    mt = sub.add_parser("match", help="match two labelled graphs")
    mt.add_argument("--edges1", required=True, help="edge list of the relabelled graph")
    mt.add_argument("--labels1", required=True)
    mt.add_argument("--edges2", required=True, help="edge list of the reference graph")
    mt.add_argument("--labels2", required=True)
    mt.add_argument("--truth", default=None, help="optional 'id2 id1' ground-truth file")
    mt.add_argument("--seed", type=int, default=0)
    mt.add_argument("--out", type=Path, default=None, help="write 'id2 id1' mapping here")
    _add_match_flags(mt, experiment=True)

    sw = sub.add_parser("sweep", help="run a grid of experiments and write CSV")
    sw.add_argument("--mode", choices=("synthetic", "real-pair", "real-resample"), default="synthetic")
    sw.add_argument("--n", type=int, default=2400)
    sw.add_argument("--k", type=int, default=6)
    sw.add_argument("--sizes", type=_ints, default=None)
    sw.add_argument("--p", type=float, default=0.06)
    sw.add_argument("--q-ratio", type=float, default=1 / 3)
    sw.add_argument("--alphas", type=_floats, default=(0.1,))
    sw.add_argument("--ps", type=_floats, default=None)
    sw.add_argument("--edges", default=None)
    sw.add_argument("--labels", default=None)
    sw.add_argument("--edges2", default=None)
    sw.add_argument("--labels2", default=None)
    sw.add_argument("--permute", choices=("community", "uniform"), default="community")
    sw.add_argument("--reps", type=int, default=1)
    sw.add_argument("--seed", type=int, required=True)
    sw.add_argument("--workers", type=int, default=None,
                    help="worker processes (default: $CSBM_WORKERS or 1)")
    sw.add_argument("--no-timings", action="store_true",
                    help="leave the seconds column empty so the CSV is byte-stable")
    sw.add_argument("--out", default=None, help="CSV path (default: stdout)")
    _add_match_flags(sw, experiment=True)

    es = sub.add_parser("estimate", help="print degree-based parameter estimates")
    es.add_argument("--edges", required=True)
    es.add_argument("--labels", required=True)
    return ap


def cmd_generate(args) -> int:
    if args.sizes:
        params = SbmParams(args.sizes, args.p, args.q, args.alpha)
    else:
        params = SbmParams.balanced(args.n, args.k, args.p, args.q, args.alpha)
    pair = generate_correlated_pair(params, args.seed, permute=args.permute, keep_parent=False)
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    save_graph(out / "g_pi.edges", out / "g_pi.labels", pair.g_pi, pair.part_pi)
    save_graph(out / "g_prime.edges", out / "g_prime.labels", pair.g_prime, pair.part_prime)
    with open(out / "truth.txt", "w", encoding="utf-8") as fh:
        for v, u in enumerate(pair.truth.forward.tolist()):
            fh.write(f"{v} {u}\n")
    meta = {"sizes": list(params.sizes), "p": params.p, "q": params.q, "alpha": params.alpha,
            "seed": args.seed, "permute": args.permute}
    (out / "params.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    print(json.dumps({"out": str(out), "n": params.n, "edges_pi": pair.g_pi.num_edges,
                      "edges_prime": pair.g_prime.num_edges}))
    return 0


def _read_truth(path, ids1, ids2) -> Permutation:
    idx1 = {x: i for i, x in enumerate(ids1)}
    idx2 = {x: i for i, x in enumerate(ids2)}
    fwd = np.full(len(ids2), -1, dtype=np.int64)
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            parts = raw.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 'id2 id1'")
            try:
                fwd[idx2[parts[0]]] = idx1[parts[1]]
            except KeyError as exc:
                raise DataError(f"{path}:{lineno}: unknown vertex {exc.args[0]!r}") from None
    try:
        return Permutation(fwd)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def cmd_match(args) -> int:
    g1, part1, ids1 = load_graph(args.edges1, args.labels1)
    g2, part2, ids2 = load_graph(args.edges2, args.labels2, order=part1.original)
    if not np.array_equal(part1.sizes, part2.sizes):
        raise DataError("community sizes differ between the two graphs")
    est = estimate_params(g1, part1).mean(estimate_params(g2, part2))
    log_degree = True if args.log_degree is None else args.log_degree
    hyper = hyper_from_estimate(part2, est, args.kprime, args.ell, log_degree)
    truth = _read_truth(args.truth, ids1, ids2) if args.truth else None
    res = full_pipeline(g1, g2, part1, hyper, _match_hyper(args, args.seed), part2, truth)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            for v, u in enumerate(res.permutation.forward.tolist()):
                fh.write(f"{ids2[v]} {ids1[u]}\n")
    print(json.dumps({"accuracy": res.accuracy, "timings": res.timings,
                      "selected": list(hyper.selected), "reserved": hyper.reserved}, indent=2))
    return 0


def cmd_sweep(args) -> int:
    cfg = ExperimentConfig(
        mode=args.mode, n=args.n, k=args.k, sizes=args.sizes, p=args.p, q_ratio=args.q_ratio,
        alphas=args.alphas, ps=args.ps, edges=args.edges, labels=args.labels,
        edges2=args.edges2, labels2=args.labels2, kprime=args.kprime, ell=args.ell,
        log_degree=args.log_degree, permute=args.permute, match=_match_hyper(args, 0),
        repetitions=args.reps, seed=args.seed, output=args.out, timings=not args.no_timings)
    rows = run_experiment(cfg, workers=args.workers)
    if not args.out:
        sys.stdout.write(rows_to_csv(rows))
    return 0


def cmd_estimate(args) -> int:
    g, part, _ = load_graph(args.edges, args.labels)
    est = estimate_params(g, part)
    d = est.as_dict()
    d["communities"] = [str(x) for x in part.original]
    print(json.dumps(d, indent=2))
    return 0


COMMANDS = {"generate": cmd_generate, "match": cmd_match, "sweep": cmd_sweep,
            "estimate": cmd_estimate}


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
