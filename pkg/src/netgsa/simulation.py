"""Synthetic data generators, likelihood-ratio baselines and the evaluation harness."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import ggm
from .config import RunConfig
from .diffnet import NI_METHODS, diffnet_test, normalize_method, seed_sequence
from .errors import DataError, NetGSAError
from .graph import UndirectedGraph
from .gsa import (GeneSetCollection, bh_adjust, classic_scores, combine_min,
                  median_aggregate, network_split_matrix)

logger = logging.getLogger(__name__)

MIN_EIGENVALUE = 0.1
VALUE_RANGE = (0.1, 0.4)


@dataclass
class TrueNetworks:
    g_x: UndirectedGraph
    g_y: UndirectedGraph
    omega_x: np.ndarray
    omega_y: np.ndarray


def _draw_values(rng, k: int) -> np.ndarray:
    return rng.choice([-1.0, 1.0], size=k) * rng.uniform(*VALUE_RANGE, size=k)


def _repair(omega: np.ndarray, max_rounds: int = 100) -> np.ndarray:
    # shift the spectrum until the smallest eigenvalue clears the floor, then
    # rescale so every implied variance is one; repeat since rescaling moves it
    for _ in range(max_rounds):
        lo = np.linalg.eigvalsh(omega)[0]
        if lo < MIN_EIGENVALUE:
            omega = omega + (MIN_EIGENVALUE - lo + 1e-9) * np.eye(omega.shape[0])
        sd = np.sqrt(np.diag(np.linalg.inv(omega)))
        omega = omega * np.outer(sd, sd)
        omega = 0.5 * (omega + omega.T)
        if np.linalg.eigvalsh(omega)[0] >= MIN_EIGENVALUE:
            return omega
    raise NetGSAError("could not repair precision matrix to the eigenvalue floor")


def shared_count(alpha: float, total: int) -> int:
    """Number of shared entries, ``round(alpha * total)`` (logged when not integral)."""
    if not 0.0 <= alpha <= 1.0:
        raise DataError("alpha must lie in [0, 1]")
    raw = alpha * total
    k = int(math.floor(raw + 0.5))
    if abs(raw - k) > 1e-9:
        logger.info("alpha * %d = %.4g is not integral; using %d shared entries", total, raw, k)
    return k


def precision_pair(d: int, n_nonzero: int, n_shared: int, rng) -> TrueNetworks:
    """Two sparse precision matrices sharing ``n_shared`` off-diagonal entries.

    Shared positions carry identical values. Off-diagonals are drawn from
    ``+-U[0.1, 0.4]`` on a unit diagonal before repair.
    """
    rng = np.random.default_rng(rng)
    iu = np.array(np.triu_indices(d, k=1)).T
    if 2 * n_nonzero - n_shared > len(iu):
        raise DataError("too many nonzero entries for the dimension")
    order = rng.permutation(len(iu))
    pos_x = iu[order[:n_nonzero]]
    pos_y = np.vstack([pos_x[:n_shared], iu[order[n_nonzero:2 * n_nonzero - n_shared]]])
    vals_x = _draw_values(rng, n_nonzero)
    vals_y = np.concatenate([vals_x[:n_shared], _draw_values(rng, n_nonzero - n_shared)])

    def build(pos, vals):
        om = np.eye(d)
        om[pos[:, 0], pos[:, 1]] = vals
        om[pos[:, 1], pos[:, 0]] = vals
        return _repair(om)

    ox, oy = build(pos_x, vals_x), build(pos_y, vals_y)
    gx = UndirectedGraph(d, [tuple(e) for e in pos_x.tolist()])
    gy = UndirectedGraph(d, [tuple(e) for e in pos_y.tolist()])
    return TrueNetworks(gx, gy, ox, oy)


def _gaussian(rng, n: int, omega: np.ndarray, mean=None) -> np.ndarray:
    sigma = np.linalg.inv(omega)
    L = np.linalg.cholesky(0.5 * (sigma + sigma.T))
    Z = rng.standard_normal((n, omega.shape[0])) @ L.T
    return Z if mean is None else Z + mean


def gen_model1(alpha: float, rng=None, n: int = 100, d: int = 50, n_edges: int = 10):
    """Model 1: sparse networks with a fraction ``alpha`` of shared edges.

    Returns standardized ``X``, ``Y`` and the true networks. ``alpha = 1``
    yields identical precision matrices (the null).
    """
    rng = np.random.default_rng(rng)
    truth = precision_pair(d, n_edges, shared_count(alpha, n_edges), rng)
    X = _gaussian(rng, n, truth.omega_x)
    Y = _gaussian(rng, n, truth.omega_y)
    return ggm.standardize(X), ggm.standardize(Y), truth


def ar1_covariance(d: int, rho: float) -> np.ndarray:
    idx = np.arange(d)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def chain_graph(d: int) -> UndirectedGraph:
    return UndirectedGraph(d, [(j, j + 1) for j in range(d - 1)])


def gen_model2(beta: float, rng=None, n: int = 100, d: int = 50, rho_x: float = 0.7):
    """Model 2: AR(1) covariances with parameters 0.7 (x) and ``beta`` (y)."""
    if not -1.0 < beta < 1.0:
        raise DataError("beta must lie in (-1, 1)")
    rng = np.random.default_rng(rng)
    sx, sy = ar1_covariance(d, rho_x), ar1_covariance(d, beta)
    X = rng.multivariate_normal(np.zeros(d), sx, size=n, method="cholesky")
    Y = rng.multivariate_normal(np.zeros(d), sy, size=n, method="cholesky")
    g = chain_graph(d)
    gy = g if beta != 0 else UndirectedGraph.empty(d)
    truth = TrueNetworks(g, gy, np.linalg.inv(sx), np.linalg.inv(sy))
    return ggm.standardize(X), ggm.standardize(Y), truth


@dataclass
class GeneSetSim:
    X: np.ndarray
    Y: np.ndarray
    sets: GeneSetCollection
    truth: np.ndarray
    sizes: np.ndarray
    networks: list = field(default_factory=list)


def _multivariate_t(rng, n: int, sigma: np.ndarray, df: float, mean) -> np.ndarray:
    L = np.linalg.cholesky(0.5 * (sigma + sigma.T))
    Z = rng.standard_normal((n, sigma.shape[0])) @ L.T
    w = np.sqrt(rng.chisquare(df, size=n) / df)
    return Z / w[:, None] + mean


def shifted_mean(s: int, d: int) -> np.ndarray:
    """Mean of the second condition for the differential sets ``s = 0, 1, 2``."""
    half = int(math.ceil(d / 2))
    mu = np.zeros(d)
    if s == 0:
        mu[:] = 0.2
    elif s == 1:
        mu[half:] = 0.4
    elif s == 2:
        mu[:half] = -0.2
        mu[half:] = 0.2
    return mu


def gen_genesets_sim(alpha: float, contamination=None, rng=None, n: int = 40, n_sets: int = 20,
                     size_range=None, contamination_fraction: float = 0.1,
                     mean_shift: bool = True) -> GeneSetSim:
    """Gene-set scenario: disjoint blocks, the first three differential.

    Sets 1 to 3 get networks sharing a fraction ``alpha`` of their
    ``ceil(d_s / 2)`` entries plus a mean shift in the second condition; the
    remaining sets have identical distributions. ``contamination`` is None
    or the degrees of freedom of a multivariate t; the last
    ``floor(contamination_fraction * n)`` rows of each sample are then
    replaced by t draws with the same scale matrix and mean. Output is not
    standardized. ``mean_shift=False`` keeps every mean at zero.

    Each set draws from its own random stream, so sets that do not depend on
    ``alpha`` are identical across ``alpha`` for the same seed.
    """
    if contamination in ("none", "mvn"):
        contamination = None
    if contamination is not None and not float(contamination) > 0:
        raise DataError(f"contamination must be None or positive degrees of freedom, got {contamination!r}")
    shifted_sets = 3
    ss = seed_sequence(rng)
    size_ss, *set_ss = ss.spawn(n_sets + 1)
    lo, hi = (20, n - 1) if size_range is None else size_range
    sizes = np.random.default_rng(size_ss).integers(lo, hi + 1, size=n_sets)
    d = int(sizes.sum())
    X = np.empty((n, d))
    Y = np.empty((n, d))
    blocks = {}
    nets = []
    n_bad = int(math.floor(contamination_fraction * n)) if contamination is not None else 0
    start = 0
    for s in range(n_sets):
        ds = int(sizes[s])
        srng = np.random.default_rng(set_ss[s])
        k = int(math.ceil(ds / 2))
        diff = s < shifted_sets
        shared = shared_count(alpha, k) if diff else k
        truth = precision_pair(ds, k, shared, srng)
        mu_y = shifted_mean(s, ds) if diff and mean_shift else np.zeros(ds)
        oy = truth.omega_y if diff else truth.omega_x
        xs = _gaussian(srng, n, truth.omega_x)
        ys = _gaussian(srng, n, oy, mu_y)
        if n_bad:
            df = float(contamination)
            xs[n - n_bad:] = _multivariate_t(srng, n_bad, np.linalg.inv(truth.omega_x), df, 0.0)
            ys[n - n_bad:] = _multivariate_t(srng, n_bad, np.linalg.inv(oy), df, mu_y)
        X[:, start:start + ds] = xs
        Y[:, start:start + ds] = ys
        blocks[f"set{s + 1:02d}"] = list(range(start, start + ds))
        nets.append(truth)
        start += ds
    labels = np.zeros(n_sets, dtype=bool)
    labels[:shifted_sets] = True
    sets = GeneSetCollection.from_indices(blocks, d)
    return GeneSetSim(X, Y, sets, labels, sizes, nets)


def _loglik_zero_mean(S: np.ndarray, n: int) -> float:
    d = S.shape[0]
    sign, logdet = np.linalg.slogdet(S)
    if sign <= 0:
        raise DataError("sample covariance is singular; the likelihood-ratio test needs n > d")
    return -0.5 * n * (logdet + d * (1.0 + math.log(2.0 * math.pi)))


def lrt_full(X, Y) -> float:
    """Likelihood-ratio p-value for equal covariance (zero-mean, unrestricted MLEs)."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    nx, ny = X.shape[0], Y.shape[0]
    d = X.shape[1]
    sx, sy = ggm.scatter(X), ggm.scatter(Y)
    sp = (nx * sx + ny * sy) / (nx + ny)
    stat = 2.0 * (_loglik_zero_mean(sx, nx) + _loglik_zero_mean(sy, ny) - _loglik_zero_mean(sp, nx + ny))
    return float(stats.chi2.sf(max(stat, 0.0), d * (d + 1) // 2))


def lrt_diag(X, Y) -> float:
    """Likelihood-ratio p-value for equal variances under diagonal covariance."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    nx, ny = X.shape[0], Y.shape[0]
    vx = np.mean(X**2, axis=0)
    vy = np.mean(Y**2, axis=0)
    vp = (nx * vx + ny * vy) / (nx + ny)
    if np.any(vx <= 0) or np.any(vy <= 0):
        raise DataError("a column has zero second moment")
    stat = float(np.sum((nx + ny) * np.log(vp) - nx * np.log(vx) - ny * np.log(vy)))
    return float(stats.chi2.sf(max(stat, 0.0), X.shape[1]))


def roc_curve(pvalues, labels) -> np.ndarray:
    """(FPR, TPR) points from thresholding p-values at every observed value."""
    p = np.asarray(pvalues, dtype=float)
    y = np.asarray(labels, dtype=bool)
    ok = ~np.isnan(p)
    p, y = p[ok], y[ok]
    pos, neg = max(int(y.sum()), 1), max(int((~y).sum()), 1)
    pts = [(0.0, 0.0)]
    for t in np.unique(p):
        hit = p <= t
        pts.append((float(np.sum(hit & ~y)) / neg, float(np.sum(hit & y)) / pos))
    pts.append((1.0, 1.0))
    return np.array(pts)


def roc_auc(roc: np.ndarray) -> float:
    return float(np.trapezoid(roc[:, 1], roc[:, 0]))


@dataclass
class MetricsReport:
    """Operating characteristics of one method over repeated runs.

    ``pvalues`` holds one row per run (a scalar column for single-network
    scenarios, one column per gene-set otherwise); NaN marks failures.
    """

    method: str
    pvalues: np.ndarray
    power: float
    roc: np.ndarray | None = None
    fdr_at_level: float | None = None
    tpr_at_level: float | None = None
    screening_rate: float | None = None
    sparsity_mean: float | None = None
    cpu_seconds: float = 0.0
    failures: int = 0


@dataclass
class SimScenario:
    """One simulation setting.

    ``model`` is ``"model1"`` (parameter ``alpha``), ``"model2"`` (``beta``)
    or ``"genesets"`` (``alpha`` and ``contamination``).
    """

    model: str
    param: float
    runs: int = 100
    seed: int = 0
    n: int | None = None
    d: int = 50
    contamination: float | None = None
    contamination_fraction: float = 0.1
    splits: int = 50
    level: float = 0.05
    null: str = "fisher"
    tau: float = 5.0
    bic_patience: int | None = 5

    def generate(self, run: int):
        ss = np.random.SeedSequence(self.seed, spawn_key=(run,))
        if self.model == "model1":
            return gen_model1(self.param, ss, n=self.n or 100, d=self.d)
        if self.model == "model2":
            return gen_model2(self.param, ss, n=self.n or 100, d=self.d)
        if self.model == "genesets":
            return gen_genesets_sim(self.param, self.contamination, ss, n=self.n or 40,
                                    contamination_fraction=self.contamination_fraction)
        raise DataError(f"unknown model {self.model!r}")

    def test_seed(self, run: int) -> np.random.SeedSequence:
        return np.random.SeedSequence(self.seed, spawn_key=(run, 1))


GENESET_METHODS = ("Net(SS)", "Net(MS)", "Classic", "Classic+Net(MS)", "LRT")
SINGLE_BASELINES = ("LRT", "LRT-diag")


def screening_holds(truth: TrueNetworks, screened) -> bool:
    """Whether each screened condition graph contains its true edge set."""
    return truth.g_x.issubgraph(screened.g_x) and truth.g_y.issubgraph(screened.g_y)


def _single_network_method(method: str, X, Y, truth, scen: SimScenario, run: int):
    if method == "LRT":
        return lrt_full(X, Y), None, None
    if method == "LRT-diag":
        return lrt_diag(X, Y), None, None
    out = diffnet_test(X, Y, method, scen.null, scen.test_seed(run), scen.tau, scen.bic_patience)
    m = float(np.mean([r.m for r in out.sparsity.values()]))
    return out.pvalue, m, screening_holds(truth, out.screening)


def _evaluate_single(scen: SimScenario, methods) -> dict:
    pvals = {m: np.full(scen.runs, np.nan) for m in methods}
    spars = {m: [] for m in methods}
    sca = {m: [] for m in methods}
    cpu = {m: 0.0 for m in methods}
    for run in range(scen.runs):
        X, Y, truth = scen.generate(run)
        for m in methods:
            t0 = time.process_time()
            try:
                p, sp, ok = _single_network_method(m, X, Y, truth, scen, run)
            except NetGSAError as exc:
                logger.warning("run %d method %s failed: %s", run, m, exc)
                p, sp, ok = math.nan, None, None
            cpu[m] += time.process_time() - t0
            pvals[m][run] = p
            if sp is not None:
                spars[m].append(sp)
                sca[m].append(ok)
    out = {}
    for m in methods:
        p = pvals[m]
        ok = ~np.isnan(p)
        power = float(np.mean(p[ok] < scen.level)) if ok.any() else math.nan
        out[m] = MetricsReport(m, p, power,
                               screening_rate=float(np.mean(sca[m])) if sca[m] else None,
                               sparsity_mean=float(np.mean(spars[m])) if spars[m] else None,
                               cpu_seconds=cpu[m], failures=int((~ok).sum()))
    return out


def _geneset_pvalues(method: str, sim: GeneSetSim, scen: SimScenario, run: int, cache: dict,
                     ms_cache: dict) -> np.ndarray:
    if method == "LRT":
        p = np.empty(len(sim.sets))
        for s in range(len(sim.sets)):
            c = sim.sets.columns(s)
            try:
                p[s] = lrt_full(ggm.standardize(sim.X[:, c]), ggm.standardize(sim.Y[:, c]))
            except DataError:
                p[s] = 1.0
        return bh_adjust(p)
    if method == "Classic":
        return bh_adjust(classic_scores(sim.X, sim.Y, sim.sets))
    if method in ("Net(SS)", "Net(MS)", "Classic+Net(MS)"):
        if run not in ms_cache:
            cfg = RunConfig(ni_method="GL-BIC-AT", splits=scen.splits, tau=scen.tau, level=scen.level,
                            null=scen.null, bic_patience=scen.bic_patience)
            Xs, Ys = ggm.standardize(sim.X), ggm.standardize(sim.Y)
            seed = int(scen.test_seed(run).generate_state(1)[0])
            mat = network_split_matrix(Xs, Ys, sim.sets, cfg, scen.splits, seed, cache=cache)
            ms_cache[run] = mat
        mat = ms_cache[run]
        if method == "Net(SS)":
            return mat.adjusted[0]
        B = mat.adjusted.shape[0]
        med = np.array([median_aggregate(mat.adjusted[:, s])
                        if np.sum(np.isnan(mat.adjusted[:, s])) <= B / 2 else math.nan
                        for s in range(mat.adjusted.shape[1])])
        if method == "Net(MS)":
            return med
        return combine_min(bh_adjust(classic_scores(sim.X, sim.Y, sim.sets)), med)
    raise DataError(f"unknown gene-set method {method!r}")


def _evaluate_genesets(scen: SimScenario, methods, cache: dict | None) -> dict:
    cache = {} if cache is None else cache
    ms_cache = {}
    per = {m: [] for m in methods}
    cpu = {m: 0.0 for m in methods}
    labels = None
    for run in range(scen.runs):
        sim = scen.generate(run)
        labels = sim.truth
        for m in methods:
            t0 = time.process_time()
            per[m].append(_geneset_pvalues(m, sim, scen, run, cache, ms_cache))
            cpu[m] += time.process_time() - t0
        ms_cache.clear()
    out = {}
    for m in methods:
        P = np.vstack(per[m])
        fdrs, tprs = [], []
        for row in P:
            sig = np.nan_to_num(row, nan=1.0) < scen.level
            n_sig = int(sig.sum())
            fdrs.append(float(np.sum(sig & ~labels)) / n_sig if n_sig else 0.0)
            tprs.append(float(np.sum(sig & labels)) / max(int(labels.sum()), 1))
        flat_p = P.ravel()
        flat_y = np.tile(labels, P.shape[0])
        out[m] = MetricsReport(m, P, float(np.mean(tprs)), roc=roc_curve(flat_p, flat_y),
                               fdr_at_level=float(np.mean(fdrs)), tpr_at_level=float(np.mean(tprs)),
                               cpu_seconds=cpu[m],
                               failures=int(np.isnan(P).sum()))
    return out


def evaluate(scenario: SimScenario, methods=None, cache: dict | None = None) -> dict:
    """Run ``scenario.runs`` repetitions and summarise each method.

    For the single-network models ``methods`` defaults to every inference
    method plus the two likelihood-ratio baselines; for gene-set scenarios to
    ``Net(SS)``, ``Net(MS)``, ``Classic``, ``Classic+Net(MS)`` and ``LRT``.
    ``cache`` memoises per-set network p-values across scenarios that share
    data blocks.
    """
    if scenario.model == "genesets":
        methods = GENESET_METHODS if methods is None else tuple(methods)
        bad = set(methods) - set(GENESET_METHODS)
        if bad:
            raise DataError(f"unknown gene-set methods {sorted(bad)}")
        return _evaluate_genesets(scenario, methods, cache)
    if methods is None:
        methods = NI_METHODS + SINGLE_BASELINES
    methods = tuple(m if m in SINGLE_BASELINES else normalize_method(m) for m in methods)
    return _evaluate_single(scenario, methods)
