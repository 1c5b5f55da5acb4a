"""Gene-set level orchestration.

Multi-split network testing over a collection of gene-sets with
Benjamini-Hochberg adjustment and median aggregation, classic mean-based
gene-set analysis, p-value combination, normality filtering and back-testing.
"""

from __future__ import annotations

import hashlib
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import ggm
from .config import RunConfig
from .diffnet import diffnet_on_split, split_data
from .errors import DataError, NetGSAError

logger = logging.getLogger(__name__)


@dataclass
class GeneSetCollection:
    """Named gene-sets resolved against the columns of an expression matrix."""

    sets: list
    index_map: dict

    def __post_init__(self):
        names = [name for name, _ in self.sets]
        if len(set(names)) != len(names):
            raise DataError("duplicate gene-set names")
        for name, genes in self.sets:
            missing = [g for g in genes if g not in self.index_map]
            if missing:
                raise DataError(f"gene-set {name}: unknown gene ids {missing[:5]}")

    @classmethod
    def from_indices(cls, blocks: dict, d: int) -> GeneSetCollection:
        """Build from ``{name: column indices}`` with synthetic ids ``g0..g{d-1}``."""
        index_map = {f"g{j}": j for j in range(d)}
        return cls([(name, [f"g{j}" for j in idx]) for name, idx in blocks.items()], index_map)

    @property
    def names(self) -> list:
        return [name for name, _ in self.sets]

    def columns(self, i: int) -> np.ndarray:
        return np.array([self.index_map[g] for g in self.sets[i][1]], dtype=np.int64)

    def subset(self, names) -> GeneSetCollection:
        wanted = set(names)
        unknown = wanted - set(self.names)
        if unknown:
            raise DataError(f"unknown gene-sets: {sorted(unknown)}")
        return GeneSetCollection([s for s in self.sets if s[0] in wanted], self.index_map)

    def __len__(self) -> int:
        return len(self.sets)


@dataclass
class GeneSetResultRow:
    name: str
    size: int
    p_net_median: float
    p_classic: float | None = None
    p_combined: float | None = None
    failed_split_count: int = 0
    note: str = ""


def bh_adjust(p) -> np.ndarray:
    """Benjamini-Hochberg step-up adjusted p-values, in input order."""
    p = np.asarray(p, dtype=float)
    if p.ndim != 1:
        raise DataError("p-values must be a vector")
    if p.size == 0:
        return p.copy()
    if np.any(np.isnan(p)) or np.any(p < 0) or np.any(p > 1):
        raise DataError("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    scaled = p[order] * m / np.arange(1, m + 1)
    adj = np.minimum.accumulate(scaled[::-1])[::-1]
    out = np.empty(m)
    out[order] = np.minimum(adj, 1.0)
    return out


def bh_adjust_partial(p) -> np.ndarray:
    """BH over the finite entries only; NaN (failed tests) stays NaN."""
    p = np.asarray(p, dtype=float)
    out = np.full(p.shape, np.nan)
    ok = ~np.isnan(p)
    out[ok] = bh_adjust(p[ok])
    return out


def median_aggregate(values) -> float:
    """Median of the finite values (mean of the two central ones for even counts)."""
    v = np.asarray(values, dtype=float)
    v = v[~np.isnan(v)]
    if v.size == 0:
        return math.nan
    return float(np.median(v))


def _split_seed(master_seed: int, b: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master_seed, spawn_key=(b, 0))


def _task_seed(master_seed: int, b: int, s: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master_seed, spawn_key=(b, s + 1))


def _block_digest(x_block, y_block) -> bytes:
    h = hashlib.sha1()
    for a in (x_block, y_block):
        a = np.ascontiguousarray(a)
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.digest()


@dataclass
class SplitMatrix:
    """Per-split outcome of the network test for every gene-set.

    ``raw`` and ``adjusted`` are ``(B, S)`` arrays with NaN marking failed
    tests. ``networks`` maps a set name to lists of absolute partial
    correlation matrices (x, y) across splits, when requested.
    """

    raw: np.ndarray
    adjusted: np.ndarray
    networks: dict = field(default_factory=dict)


def _pcor_abs(omega) -> np.ndarray:
    P = np.abs(ggm.partial_correlations(omega))
    np.fill_diagonal(P, 0.0)
    return P


def network_split_matrix(X, Y, sets: GeneSetCollection, config: RunConfig, B: int,
                         master_seed: int, keep_networks=(), cache: dict | None = None) -> SplitMatrix:
    """Run the network test for every (split, gene-set) pair.

    One random split per split index is shared by all gene-sets. Tasks are
    executed on ``config.threads`` worker threads and reduced by index, so the
    result does not depend on the thread count. ``cache`` optionally memoises
    raw p-values by (data block, split index, set index).
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    S = len(sets)
    cols = [sets.columns(s) for s in range(S)]
    keep = set(keep_networks)
    raw = np.full((B, S), np.nan)
    networks = {name: [] for name in sets.names if name in keep}
    splits = [split_data(X, Y, _split_seed(master_seed, b)) for b in range(B)]

    def task(b, s):
        sub = splits[b].columns(cols[s])
        name = sets.sets[s][0]
        key = None
        if cache is not None and name not in keep:
            key = (_block_digest(X[:, cols[s]], Y[:, cols[s]]), b, s)
            if key in cache:
                return cache[key], None
        try:
            out = diffnet_on_split(sub, config.ni_method, config.null, _task_seed(master_seed, b, s),
                                   config.tau, config.bic_patience)
        except NetGSAError as exc:
            logger.warning("gene-set %s split %d failed: %s", name, b, exc)
            p, nets = math.nan, None
        else:
            p = out.pvalue
            nets = (_pcor_abs(out.fits[0].omega), _pcor_abs(out.fits[1].omega)) if name in keep else None
        if key is not None:
            cache[key] = p
        return p, nets

    jobs = [(b, s) for b in range(B) for s in range(S)]
    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(lambda bs: task(*bs), jobs))
    else:
        results = [task(b, s) for b, s in jobs]
    for (b, s), (p, nets) in zip(jobs, results):
        raw[b, s] = p
        if nets is not None:
            networks[sets.sets[s][0]].append(nets)
    adjusted = np.vstack([bh_adjust_partial(raw[b]) for b in range(B)]) if B else raw
    return SplitMatrix(raw, adjusted, networks)


def run_single_split(X, Y, sets: GeneSetCollection, config: RunConfig, seed: int) -> np.ndarray:
    """BH-adjusted network p-values from one shared random split."""
    return network_split_matrix(X, Y, sets, config, 1, seed).adjusted[0]


def rows_from_splits(sets: GeneSetCollection, mat: SplitMatrix) -> list:
    B = mat.adjusted.shape[0]
    rows = []
    for s, (name, genes) in enumerate(sets.sets):
        col = mat.adjusted[:, s]
        failed = int(np.sum(np.isnan(col)))
        if failed > B / 2:
            rows.append(GeneSetResultRow(name, len(genes), math.nan, failed_split_count=failed,
                                         note=f"{failed} of {B} splits failed"))
        else:
            rows.append(GeneSetResultRow(name, len(genes), median_aggregate(col),
                                         failed_split_count=failed))
    return rows


def sort_rows(rows: list) -> list:
    return sorted(rows, key=lambda r: (math.isnan(r.p_net_median), r.p_net_median))


def run_netgsa(X, Y, sets: GeneSetCollection, config: RunConfig, B: int | None = None,
               master_seed: int | None = None) -> list:
    """Multi-split NetGSA; one row per gene-set sorted by median adjusted p."""
    B = config.splits if B is None else B
    if B < 1:
        raise DataError("B must be >= 1")
    seed = config.seed if master_seed is None else master_seed
    mat = network_split_matrix(X, Y, sets, config, B, seed)
    return sort_rows(rows_from_splits(sets, mat))


def gene_t_statistics(X, Y) -> tuple[np.ndarray, np.ndarray]:
    """Pooled-variance two-sample t statistics and Welch-Satterthwaite degrees of freedom.

    Genes with zero pooled variance get ``t = 0`` (logged).
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    nx, ny = X.shape[0], Y.shape[0]
    if nx < 2 or ny < 2:
        raise DataError("each condition needs at least 2 samples")
    vx, vy = X.var(axis=0, ddof=1), Y.var(axis=0, ddof=1)
    sp2 = ((nx - 1) * vx + (ny - 1) * vy) / (nx + ny - 2)
    diff = Y.mean(axis=0) - X.mean(axis=0)
    t = np.zeros(X.shape[1])
    df = np.full(X.shape[1], float(nx + ny - 2))
    ok = sp2 > 0
    if np.any(~ok):
        logger.warning("%d genes have zero pooled variance; their z-scores are set to 0", int(np.sum(~ok)))
    t[ok] = diff[ok] / np.sqrt(sp2[ok] * (1.0 / nx + 1.0 / ny))
    ax, ay = vx / nx, vy / ny
    den = ax**2 / (nx - 1) + ay**2 / (ny - 1)
    w = den > 0
    df[w] = (ax[w] + ay[w]) ** 2 / den[w]
    return t, df


def t_to_z(t, df) -> np.ndarray:
    """Normal score with the same tail probability as ``t`` under a t law with ``df``."""
    t = np.asarray(t, dtype=float)
    # via the upper tail so that large |t| does not saturate at 1
    return np.sign(t) * -stats.norm.ppf(stats.t.sf(np.abs(t), df))


def classic_scores(X, Y, sets: GeneSetCollection) -> np.ndarray:
    """Unadjusted two-sided p-values of the mean-shift gene-set statistic."""
    z = t_to_z(*gene_t_statistics(X, Y))
    p = np.empty(len(sets))
    for s in range(len(sets)):
        zs = z[sets.columns(s)]
        e = math.sqrt(zs.size) * float(np.mean(zs))
        p[s] = 2.0 * stats.norm.sf(abs(e))
    return p


def classic_gsa(X, Y, sets: GeneSetCollection) -> np.ndarray:
    """BH-adjusted classic gene-set p-values (intended for unnormalised data)."""
    return bh_adjust(classic_scores(X, Y, sets))


def combine_min(p_classic, p_net) -> np.ndarray:
    """Elementwise minimum; a missing value on one side passes the other through."""
    a = np.asarray(p_classic, dtype=float)
    b = np.asarray(p_net, dtype=float)
    if a.shape != b.shape:
        raise DataError(f"length mismatch: {a.shape} vs {b.shape}")
    return np.fmin(a, b)


def shapiro_filter(X, Y, level: float = 0.01) -> np.ndarray:
    """Indices of genes whose BH-adjusted Shapiro-Wilk p-values are >= level in both conditions."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    for name, M in (("x", X), ("y", Y)):
        if not 3 <= M.shape[0] <= 5000:
            raise DataError(f"Shapiro-Wilk needs 3 <= n <= 5000, condition {name} has n={M.shape[0]}")
    d = X.shape[1]
    p = np.empty(2 * d)
    for j in range(d):
        p[j] = stats.shapiro(X[:, j]).pvalue
        p[d + j] = stats.shapiro(Y[:, j]).pvalue
    p = np.nan_to_num(p, nan=1.0)
    adj = bh_adjust(np.clip(p, 0.0, 1.0))
    keep = (adj[:d] >= level) & (adj[d:] >= level)
    return np.flatnonzero(keep)


def backtest(X, Y, significant_sets: GeneSetCollection, config: RunConfig, repeats: int = 10,
             rng=None) -> dict:
    """Re-run NetGSA on pooled, randomly relabelled samples.

    Returns how many of the ``repeats`` relabellings declared each set
    significant at ``config.level``.
    """
    if len(significant_sets) == 0:
        raise DataError("back-testing needs at least one gene-set")
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    nx = X.shape[0]
    pooled = np.vstack([X, Y])
    ss = np.random.SeedSequence(rng if rng is None or isinstance(rng, int) else int(
        np.random.default_rng(rng).integers(2**63)))
    counts = {name: 0 for name in significant_sets.names}
    for r, child in enumerate(ss.spawn(repeats)):
        gen = np.random.default_rng(child)
        perm = gen.permutation(pooled.shape[0])
        Xb, Yb = pooled[perm[:nx]], pooled[perm[nx:]]
        if config.normalize:
            Xb, Yb = ggm.standardize(Xb), ggm.standardize(Yb)
        seed = int(gen.integers(2**31))
        for row in run_netgsa(Xb, Yb, significant_sets, config, master_seed=seed):
            if row.p_net_median < config.level:
                counts[row.name] += 1
    return counts
