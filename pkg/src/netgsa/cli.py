"""Command-line front end: ``netgsa run | simulate | backtest``."""

from __future__ import annotations

import argparse
import logging
import math
import os
import re
import sys
from dataclasses import fields

import numpy as np

from . import ggm
from .config import RunConfig, default_threads, read_config_file
from .diffnet import NI_METHODS, NULL_STRATEGIES
from .errors import NetGSAError
from .gsa import (GeneSetCollection, backtest, bh_adjust, classic_scores, combine_min,
                  network_split_matrix, rows_from_splits, shapiro_filter, sort_rows)
from .io import format_p, ingest_expression, ingest_genesets, tsv, write_atomic
from .simulation import GENESET_METHODS, SINGLE_BASELINES, SimScenario, evaluate

logger = logging.getLogger("netgsa")

RESULT_COLUMNS = ("geneset", "size", "p_net_median", "p_classic", "p_combined", "failed_splits")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file; command-line flags take precedence")
    p.add_argument("--splits", type=int, help="number of random data splits B (default 50)")
    p.add_argument("--ni", type=str.lower, choices=[m.lower() for m in NI_METHODS],
                   help="network inference method (default gl-bic-at)")
    p.add_argument("--tau", type=float, help="adaptive thresholding constant (default 5)")
    p.add_argument("--level", type=float, help="significance level (default 0.05)")
    p.add_argument("--null", choices=NULL_STRATEGIES, help="null distribution strategy (default fisher)")
    p.add_argument("--seed", type=int, help="master seed (default 0)")
    p.add_argument("--threads", type=int, help="worker threads (default $NETGSA_THREADS or 1)")
    p.add_argument("--min-set-size", type=int, help="smallest retained gene-set (default 5)")
    p.add_argument("--shapiro-level", type=float,
                   help="enable the Shapiro-Wilk gene filter at this BH level (0.01 is typical)")
    p.add_argument("--no-normalize", action="store_true", help="do not standardize before network tests")


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--x", required=True, help="expression TSV of condition x (samples as rows)")
    p.add_argument("--y", required=True, help="expression TSV of condition y (samples as rows)")
    p.add_argument("--genesets", required=True, help="gene-sets in GMT format")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="netgsa", description="Network-based gene-set analysis.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="test every gene-set for a network difference")
    _add_data_flags(run)
    _add_config_flags(run)
    run.add_argument("--classic", action="store_true", help="also run the classic mean-shift analysis")
    run.add_argument("--out", required=True, help="results TSV")
    run.add_argument("--emit-networks", action="append", default=[], metavar="GENESET",
                     help="write median absolute partial correlations for this set (repeatable)")

    sim = sub.add_parser("simulate", help="run a simulation scenario and report operating characteristics")
    sim.add_argument("--model", required=True, choices=["1", "2", "genesets"])
    sim.add_argument("--alpha", type=float, help="shared-edge fraction (model 1, genesets)")
    sim.add_argument("--beta", type=float, help="AR(1) parameter of condition y (model 2)")
    sim.add_argument("--runs", type=int, default=100)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--methods", help="comma-separated method list")
    sim.add_argument("--contamination", type=float, help="t degrees of freedom for contaminated rows")
    sim.add_argument("--splits", type=int, default=50, help="splits for Net(MS)")
    sim.add_argument("--null", choices=NULL_STRATEGIES, default="fisher")
    sim.add_argument("--level", type=float, default=0.05)
    sim.add_argument("--out", help="metrics TSV (default: standard output)")
    sim.add_argument("--decisions", help="per-run p-values and decisions TSV")

    bt = sub.add_parser("backtest", help="re-test gene-sets on randomly relabelled samples")
    _add_data_flags(bt)
    _add_config_flags(bt)
    bt.add_argument("--sets", action="append", default=[], metavar="GENESET", help="gene-set to back-test")
    bt.add_argument("--from-results", help="back-test sets significant in this results TSV")
    bt.add_argument("--repeats", type=int, default=10)
    bt.add_argument("--out", required=True, help="counts TSV")
    return parser


def resolve_config(args) -> RunConfig:
    """Merge defaults, the optional config file and explicit flags (in increasing priority)."""
    values = {}
    if args.config:
        values.update(read_config_file(args.config))
    if "threads" not in values:
        values["threads"] = default_threads()
    flag_map = {"splits": "splits", "ni": "ni_method", "tau": "tau", "level": "level", "null": "null",
                "seed": "seed", "threads": "threads", "min_set_size": "min_set_size"}
    for flag, key in flag_map.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = v
    if getattr(args, "shapiro_level", None) is not None:
        values["shapiro"] = True
        values["shapiro_level"] = args.shapiro_level
    if getattr(args, "no_normalize", False):
        values["normalize"] = False
    if getattr(args, "classic", False):
        values["classic"] = True
    known = {f.name for f in fields(RunConfig)}
    return RunConfig(**{k: v for k, v in values.items() if k in known})


def _load(args, config: RunConfig):
    ex = ingest_expression(args.x)
    ey = ingest_expression(args.y)
    if set(ex.genes) != set(ey.genes):
        only_x = sorted(set(ex.genes) - set(ey.genes))[:5]
        only_y = sorted(set(ey.genes) - set(ex.genes))[:5]
        raise NetGSAError(f"gene ids differ between conditions (x only: {only_x}, y only: {only_y})")
    Y = ey.values[:, [ey.index_map[g] for g in ex.genes]]
    X = ex.values
    sets = ingest_genesets(args.genesets, ex.index_map, config.min_set_size)
    if config.shapiro:
        keep = shapiro_filter(X, Y, config.shapiro_level)
        logger.info("Shapiro-Wilk filter keeps %d of %d genes", keep.size, X.shape[1])
        kept = {ex.genes[j] for j in keep}
        pruned = []
        for name, genes in sets.sets:
            g = [x for x in genes if x in kept]
            if len(g) >= config.min_set_size:
                pruned.append((name, g))
            else:
                logger.warning("gene-set %s: excluded after normality filtering (%d genes)", name, len(g))
        sets = GeneSetCollection(pruned, sets.index_map)
    if len(sets) == 0:
        raise NetGSAError("no gene-set passes the size requirements")
    return X, Y, sets, ex.genes


def _safe_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", name)


def cmd_run(args) -> int:
    config = resolve_config(args)
    X, Y, sets, genes = _load(args, config)
    unknown = [s for s in args.emit_networks if s not in sets.names]
    if unknown:
        raise NetGSAError(f"--emit-networks names unknown or excluded gene-sets: {unknown}")
    p_classic = classic_scores(X, Y, sets) if config.classic else None
    if config.normalize:
        X, Y = ggm.standardize(X), ggm.standardize(Y)
    mat = network_split_matrix(X, Y, sets, config, config.splits, config.seed,
                               keep_networks=args.emit_networks)
    rows = rows_from_splits(sets, mat)
    if p_classic is not None:
        adj = bh_adjust(p_classic)
        comb = combine_min(adj, [r.p_net_median for r in rows])
        for r, pc, pm in zip(rows, adj, comb):
            r.p_classic, r.p_combined = float(pc), float(pm)
    rows = sort_rows(rows)
    body = tsv(RESULT_COLUMNS, [(r.name, r.size, format_p(r.p_net_median), format_p(r.p_classic),
                                 format_p(r.p_combined), r.failed_split_count) for r in rows])
    outputs = [(args.out, body)]
    base = os.path.splitext(args.out)[0]
    for name in args.emit_networks:
        nets = mat.networks[name]
        cols = [genes[j] for j in sets.columns(sets.names.index(name))]
        for k, cond in enumerate(("x", "y")):
            med = np.median(np.stack([n[k] for n in nets]), axis=0) if nets else np.full((len(cols),) * 2, np.nan)
            table = tsv(cols, [[format_p(v) for v in row] for row in med])
            outputs.append((f"{base}.{_safe_name(name)}.pcor_{cond}.tsv", table))
    for path, text in outputs:
        write_atomic(path, text)
    return 0


def _sim_methods(args, model: str):
    if not args.methods:
        return None
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    if model == "genesets":
        return methods
    upper = {m.lower(): m for m in NI_METHODS + SINGLE_BASELINES}
    try:
        return [upper[m.lower()] for m in methods]
    except KeyError as exc:
        raise NetGSAError(f"unknown method {exc.args[0]!r}") from None


def cmd_simulate(args) -> int:
    model = {"1": "model1", "2": "model2", "genesets": "genesets"}[args.model]
    param = args.beta if model == "model2" else args.alpha
    if param is None:
        raise NetGSAError("--beta is required for model 2" if model == "model2" else "--alpha is required")
    scen = SimScenario(model, param, runs=args.runs, seed=args.seed, contamination=args.contamination,
                       splits=args.splits, null=args.null, level=args.level)
    reports = evaluate(scen, _sim_methods(args, model))
    header = ("model", "param", "method", "runs", "rejection_rate", "fdr", "tpr", "screening_rate",
              "sparsity_mean", "cpu_seconds", "failures")

    def fmt(v):
        return "NA" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.6g}"

    rows = [(model, param, m, args.runs, fmt(r.power), fmt(r.fdr_at_level), fmt(r.tpr_at_level),
             fmt(r.screening_rate), fmt(r.sparsity_mean), f"{r.cpu_seconds:.3f}", r.failures)
            for m, r in reports.items()]
    text = tsv(header, rows)
    decisions = None
    if args.decisions:
        drows = []
        for m, r in reports.items():
            P = np.atleast_2d(r.pvalues.T).T if r.pvalues.ndim == 1 else r.pvalues
            for run, prow in enumerate(P):
                for s, p in enumerate(np.atleast_1d(prow)):
                    rej = "NA" if math.isnan(p) else int(p < args.level)
                    drows.append((m, run, s + 1, format_p(p), rej))
        decisions = tsv(("method", "run", "unit", "pvalue", "reject"), drows)
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    if decisions is not None:
        write_atomic(args.decisions, decisions)
    return 0


def _read_significant(path, level: float) -> list:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if "geneset" not in header or "p_net_median" not in header:
            raise NetGSAError(f"{path}: not a results table")
        i, j = header.index("geneset"), header.index("p_net_median")
        out = []
        for line in fh:
            f = line.rstrip("\n").split("\t")
            if len(f) > j and f[j] != "NA" and float(f[j]) < level:
                out.append(f[i])
    return out


def cmd_backtest(args) -> int:
    config = resolve_config(args)
    X, Y, sets, _ = _load(args, config)
    names = list(dict.fromkeys(args.sets + (_read_significant(args.from_results, config.level)
                                            if args.from_results else [])))
    if not names:
        raise NetGSAError("no gene-sets to back-test; pass --sets or --from-results")
    chosen = sets.subset(names)
    counts = backtest(X, Y, chosen, config, repeats=args.repeats, rng=config.seed)
    write_atomic(args.out, tsv(("geneset", "significant_count", "repeats"),
                               [(n, counts[n], args.repeats) for n in chosen.names]))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="netgsa: %(levelname)s: %(message)s")
    handlers = {"run": cmd_run, "simulate": cmd_simulate, "backtest": cmd_backtest}
    try:
        return handlers[args.command](args)
    except (NetGSAError, OSError, ValueError) as exc:
        print(f"netgsa: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
