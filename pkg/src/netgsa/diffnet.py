"""Two-sample network test for one gene-set on one random data split.

Networks are screened on the first half of each sample, constrained
Gaussian likelihoods are evaluated on the second half, and the AIC difference
between the two-network and pooled-network models is referred to a shifted
weighted sum of chi-squares.
"""

from __future__ import annotations

import ctypes
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import LowLevelCallable, integrate

from . import ggm
from . import _kernels
from .constrained_mle import (GraphConstrainedFit, fisher_information, ipf_mle, model_df,
                             precision_coordinates)
from .errors import ConvergenceError, DataError, NetGSAError
from .graph import UndirectedGraph

logger = logging.getLogger(__name__)

NI_METHODS = ("GL-CV", "GL-CV-AT", "GL-BIC", "GL-BIC-AT", "MB-CV", "Shrink")
NULL_STRATEGIES = ("nested", "fisher", "bootstrap")
BOOTSTRAP_REPLICATES = 200


def normalize_method(method: str) -> str:
    for m in NI_METHODS:
        if m.lower() == str(method).lower():
            return m
    raise DataError(f"unknown network inference method {method!r}; choose from {NI_METHODS}")


def seed_sequence(rng) -> np.random.SeedSequence:
    """Coerce an int, SeedSequence, Generator or None into a SeedSequence."""
    if isinstance(rng, np.random.SeedSequence):
        return rng
    if isinstance(rng, np.random.Generator):
        return np.random.SeedSequence(int(rng.integers(2**63)))
    return np.random.SeedSequence(rng)


@dataclass
class SplitData:
    x_in: np.ndarray
    x_out: np.ndarray
    y_in: np.ndarray
    y_out: np.ndarray

    def columns(self, idx) -> SplitData:
        return SplitData(self.x_in[:, idx], self.x_out[:, idx],
                         self.y_in[:, idx], self.y_out[:, idx])


@dataclass
class ScreenedNetworks:
    g_x: UndirectedGraph
    g_y: UndirectedGraph
    g_xy: UndirectedGraph
    sparsity: dict = field(default_factory=dict)


@dataclass
class NullSpec:
    nu: np.ndarray | None
    delta: float
    strategy: str = "nested"


@dataclass
class DiffNetOutcome:
    delta_aic: float
    null: NullSpec
    pvalue: float
    screening: ScreenedNetworks
    sparsity: dict
    fits: tuple = ()


def split_indices(n: int, rng) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(rng)
    perm = rng.permutation(n)
    k = (n + 1) // 2
    return np.sort(perm[:k]), np.sort(perm[k:])


def split_data(X, Y, rng) -> SplitData:
    """Random half split of each sample; the first half gets the odd row."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.shape[0] < 4 or Y.shape[0] < 4:
        raise DataError(f"need at least 4 samples per condition, got {X.shape[0]} and {Y.shape[0]}")
    ss = seed_sequence(rng)
    sx, sy = ss.spawn(2)
    ix, ox = split_indices(X.shape[0], sx)
    iy, oy = split_indices(Y.shape[0], sy)
    return SplitData(X[ix], X[ox], Y[iy], Y[oy])


def _screen_one(D, method: str, rng, tau: float, patience: int | None) -> UndirectedGraph:
    n, d = D.shape
    if d < 2:
        return UndirectedGraph.empty(d)
    if method == "Shrink":
        return ggm.shrinkage_fit(D)
    S = ggm.sample_covariance(D)
    if not np.any(np.triu(S, k=1)):
        return UndirectedGraph.empty(d)
    grid = ggm.lambda_grid(S, n, d)
    folds = min(10, n)
    if method == "MB-CV":
        return ggm.mb_fit(D, grid, folds=folds, rng=rng)
    if method.startswith("GL-BIC"):
        _, omega = ggm.select_lambda_bic(D, grid, patience=patience)
    else:
        _, omega = ggm.select_lambda_cv(D, grid, folds=folds, rng=rng)
    if method.endswith("-AT"):
        return ggm.adaptive_threshold(omega, n, tau)[1]
    return ggm.induced_graph(omega)


def network_screen(x_in, y_in, method: str = "GL-BIC-AT", rng=None, tau: float = 5.0,
                   patience: int | None = 5) -> ScreenedNetworks:
    """Estimate the condition-specific and pooled networks on first halves."""
    method = normalize_method(method)
    x_in = np.asarray(x_in, dtype=float)
    y_in = np.asarray(y_in, dtype=float)
    if x_in.shape[1] != y_in.shape[1]:
        raise DataError("conditions have different numbers of genes")
    rx, ry, rxy = seed_sequence(rng).spawn(3)
    pooled = np.vstack([x_in, y_in])
    g_x = _screen_one(x_in, method, np.random.default_rng(rx), tau, patience)
    g_y = _screen_one(y_in, method, np.random.default_rng(ry), tau, patience)
    g_xy = _screen_one(pooled, method, np.random.default_rng(rxy), tau, patience)
    sparsity = {
        "x": ggm.sparsity_index(g_x, x_in.shape[0]),
        "y": ggm.sparsity_index(g_y, y_in.shape[0]),
        "xy": ggm.sparsity_index(g_xy, pooled.shape[0]),
    }
    return ScreenedNetworks(g_x, g_y, g_xy, sparsity)


def fit_second_half(x_out, y_out, nets: ScreenedNetworks) -> tuple[GraphConstrainedFit, ...]:
    """Constrained MLEs of the three screened graphs on second-half data (zero mean)."""
    pooled = np.vstack([x_out, y_out])
    fx = ipf_mle(ggm.scatter(x_out), nets.g_x, x_out.shape[0])
    fy = ipf_mle(ggm.scatter(y_out), nets.g_y, y_out.shape[0])
    fxy = ipf_mle(ggm.scatter(pooled), nets.g_xy, pooled.shape[0])
    return fx, fy, fxy


def delta_aic(fit_x: GraphConstrainedFit, fit_y: GraphConstrainedFit,
              fit_xy: GraphConstrainedFit) -> tuple[float, NullSpec]:
    """AIC of the two-network model minus AIC of the pooled model."""
    df_ind, df_joint = model_df(fit_x.graph, fit_y.graph, fit_xy.graph)
    l_ind = fit_x.loglik + fit_y.loglik
    l_joint = fit_xy.loglik
    value = 2.0 * (l_ind - l_joint) - 2.0 * (df_ind - df_joint)
    return value, NullSpec(nu=None, delta=2.0 * (df_ind - df_joint))


def _score_blocks(R: np.ndarray, a, b, s):
    # F0[t, u] = tr(R e_t R e_u); G[t, k] = (R e_t R)_kk; C[t, k] = (R e_t)_kk,
    # where e_t is the symmetric indicator matrix of coordinate t
    F0 = fisher_information(R, a, b, s)
    G = s[:, None] * R[a, :] * R[b, :]
    q, d = len(a), R.shape[0]
    C = np.zeros((q, d))
    rows = np.arange(q)
    np.add.at(C, (rows, b), R[a, b])
    off = a != b
    np.add.at(C, (rows[off], a[off]), R[a[off], b[off]])
    return F0, G, C


def _score_covariance(F0, G, C, R2, n_in: int, n_out: int, standardized: bool) -> np.ndarray:
    # covariance of sqrt(n_out) times the per-sample score on second-half data;
    # standardizing on the full sample removes part of the variance along
    # the per-gene scale directions
    if not standardized:
        return 0.5 * F0
    n = n_in + n_out
    f_in, f_out = n_in / n, n_out / n
    GC = G @ C.T
    CRC = C @ R2 @ C.T
    return 0.5 * (F0 - f_out * (GC + GC.T) + (f_out**2 + (n_out / n_in) * f_in**2) * CRC)


def _sym_sqrt(V: np.ndarray) -> np.ndarray:
    w, U = np.linalg.eigh(0.5 * (V + V.T))
    return (U * np.sqrt(np.clip(w, 0.0, None))) @ U.T


def fisher_weights(fits, sizes, standardized: bool = True, rel_tol: float = 1e-8) -> np.ndarray:
    """Weights of the asymptotic null law of ``2 (L_ind - L_joint)``.

    Under equal distributions and correctly specified screened graphs the
    likelihood-ratio statistic is a quadratic form ``h' Q h`` in the
    second-half scores ``h``; ``Q`` combines the inverse information matrices
    of the three graph-constrained models and ``h`` is Gaussian with a
    covariance estimated at the pooled fit. The weights are the non-zero
    eigenvalues of ``Q Cov(h)``. Models that are not nested yield negative
    weights. ``sizes`` is ``((n_in_x, n_out_x), (n_in_y, n_out_y))``;
    with ``standardized`` the covariance accounts for per-condition
    standardization of the full sample.
    """
    fx, fy, fxy = fits
    d = fxy.omega.shape[0]
    sigma = np.linalg.inv(fxy.omega)
    sd = np.sqrt(np.diag(sigma))
    R = sigma / np.outer(sd, sd)
    R = 0.5 * (R + R.T)
    union = UndirectedGraph(d, set(fx.graph.edges) | set(fy.graph.edges) | set(fxy.graph.edges))
    edges = union.edge_array()
    a, b, s = precision_coordinates(d, edges)
    F0, G, C = _score_blocks(R, a, b, s)
    pos = {e: d + t for t, e in enumerate(map(tuple, edges.tolist()))}
    q = len(a)

    def projector(graph):
        idx = np.concatenate([np.arange(d), np.array([pos[e] for e in sorted(graph.edges)], dtype=np.int64)])
        P = np.zeros((q, q))
        P[np.ix_(idx, idx)] = np.linalg.inv(0.5 * F0[np.ix_(idx, idx)])
        return P

    Px, Py, Pxy = projector(fx.graph), projector(fy.graph), projector(fxy.graph)
    (nix, nox), (niy, noy) = sizes
    wx, wy = nox / (nox + noy), noy / (nox + noy)
    Q = np.block([[Px - wx * Pxy, -math.sqrt(wx * wy) * Pxy],
                  [-math.sqrt(wx * wy) * Pxy, Py - wy * Pxy]])
    R2 = R * R
    Vx = _sym_sqrt(_score_covariance(F0, G, C, R2, nix, nox, standardized))
    Vy = _sym_sqrt(_score_covariance(F0, G, C, R2, niy, noy, standardized))
    Z = np.zeros((q, q))
    H = np.block([[Vx, Z], [Z, Vy]])
    M = H @ Q @ H
    ev = np.linalg.eigvalsh(0.5 * (M + M.T))
    scale = float(np.max(np.abs(ev))) if ev.size else 0.0
    return ev[np.abs(ev) > rel_tol * max(scale, 1.0)]


def null_weights(fits, strategy: str = "nested", sizes=None, standardized: bool = True) -> NullSpec:
    """Null-distribution parameters for the AIC difference.

    ``nested`` uses unit weights, one per extra parameter of the two-network
    model, which makes the shifted distribution a chi-square with
    ``df_ind - df_joint`` degrees of freedom; when that count is not positive
    the bootstrap is used instead. ``fisher`` uses :func:`fisher_weights`
    (``sizes`` required) and does not assume nested models.
    """
    if strategy not in NULL_STRATEGIES:
        raise DataError(f"unknown null strategy {strategy!r}")
    fx, fy, fxy = fits
    df_ind, df_joint = model_df(fx.graph, fy.graph, fxy.graph)
    k = df_ind - df_joint
    delta = 2.0 * k
    if strategy == "fisher":
        if sizes is None:
            raise DataError("the fisher strategy needs the split sizes")
        nu = fisher_weights(fits, sizes, standardized)
        if nu.size:
            return NullSpec(nu=nu, delta=delta, strategy="fisher")
        logger.info("no non-zero weights; falling back to bootstrap")
    elif strategy == "nested":
        if k >= 1:
            return NullSpec(nu=np.ones(k), delta=delta, strategy="nested")
        logger.info("nested null has %d degrees of freedom; falling back to bootstrap", k)
    return NullSpec(nu=None, delta=delta, strategy="bootstrap")


def _imhof_sf(x: float, nu: np.ndarray) -> float:
    # P(sum nu_i Z_i^2 > x) by Imhof's inversion formula; the integral is split
    # into a finite head and a Fourier tail handled by QUADPACK's QAWF.
    if x <= 0 and np.all(nu > 0):
        return 1.0
    if x >= 0 and np.all(nu < 0):
        return 0.0
    w = 0.5 * x
    vals, mult = np.unique(nu, return_counts=True)
    data = np.concatenate([[w, len(vals)], vals, mult.astype(float)])
    ptr = ctypes.cast(data.ctypes.data, ctypes.c_void_p)
    sig = "double (double, void *)"
    head = LowLevelCallable(_kernels.imhof_head.ctypes, ptr, sig)
    tail_sin = LowLevelCallable(_kernels.imhof_tail_sin.ctypes, ptr, sig)
    tail_cos = LowLevelCallable(_kernels.imhof_tail_cos.ctypes, ptr, sig)
    opts = dict(epsabs=1e-10, epsrel=1e-9, limit=500)
    top = float(np.max(np.abs(nu)))
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            if w == 0.0:
                a = 10.0 / top
                i0, _ = integrate.quad(head, 0.0, a, **opts)
                i1, _ = integrate.quad(head, a, np.inf, **opts)
                return 0.5 + (i0 + i1) / math.pi
            a = min(math.pi / abs(w), 10.0 / top)
            i0, _ = integrate.quad(head, 0.0, a, **opts)
            # sin(g - w u) = sin(g) cos(|w| u) - sign(w) cos(g) sin(|w| u)
            i1, _ = integrate.quad(tail_sin, a, np.inf,
                                   weight="cos", wvar=abs(w), epsabs=1e-9, limlst=200)
            i2, _ = integrate.quad(tail_cos, a, np.inf,
                                   weight="sin", wvar=abs(w), epsabs=1e-9, limlst=200)
        except integrate.IntegrationWarning as exc:
            raise NetGSAError(f"Imhof integration failed at x={x:.6g}: {exc}") from exc
    return 0.5 + (i0 + i1 - math.copysign(1.0, w) * i2) / math.pi


def psi_sf(t: float, null: NullSpec) -> float:
    """Upper tail ``P(sum nu_i Z_i^2 - delta > t)``."""
    nu = np.asarray(null.nu, dtype=float)
    if nu.size == 0 or np.any(nu == 0) or not np.all(np.isfinite(nu)):
        raise DataError("weights must be finite, non-zero and non-empty")
    return min(1.0, max(0.0, _imhof_sf(float(t) + null.delta, nu)))


def psi_cdf(t: float, null: NullSpec) -> float:
    """Distribution function of a shifted weighted sum of chi-square(1) variables."""
    return 1.0 - psi_sf(t, null)


def _bootstrap_pvalue(observed: float, sizes, nets: ScreenedNetworks, fit_xy: GraphConstrainedFit,
                      ss: np.random.SeedSequence, replicates: int, standardized: bool) -> float:
    # parametric resampling from the pooled second-half fit with the screened
    # graphs held fixed; with ``standardized`` each replicate condition is
    # drawn at full size, standardized, and its second-half rows are kept
    sigma = np.linalg.inv(fit_xy.omega)
    sigma = 0.5 * (sigma + sigma.T)
    L = np.linalg.cholesky(sigma)
    d = sigma.shape[0]
    (nix, nox), (niy, noy) = sizes

    def draw(rng, n_in, n_out):
        if not standardized:
            return rng.standard_normal((n_out, d)) @ L.T
        full = rng.standard_normal((n_in + n_out, d)) @ L.T
        return ggm.standardize(full)[n_in:]

    exceed = 0
    done = 0
    for child in ss.spawn(replicates):
        rng = np.random.default_rng(child)
        xs = draw(rng, nix, nox)
        ys = draw(rng, niy, noy)
        try:
            stat, _ = delta_aic(*fit_second_half(xs, ys, nets))
        except NetGSAError:
            continue
        done += 1
        exceed += stat >= observed
    if done == 0:
        raise ConvergenceError("every bootstrap replicate failed to fit")
    return (1 + exceed) / (done + 1)


def diffnet_on_split(split: SplitData, method: str = "GL-BIC-AT", strategy: str = "fisher",
                     rng=None, tau: float = 5.0, patience: int | None = 5,
                     replicates: int = BOOTSTRAP_REPLICATES, standardized: bool = True) -> DiffNetOutcome:
    """Screening, second-half likelihoods and p-value for an existing split.

    ``standardized`` tells the ``fisher`` null that each condition was
    standardized on its full sample before splitting.
    """
    ss_screen, ss_boot = seed_sequence(rng).spawn(2)
    nets = network_screen(split.x_in, split.y_in, method, ss_screen, tau, patience)
    fits = fit_second_half(split.x_out, split.y_out, nets)
    stat, _ = delta_aic(*fits)
    sizes = ((split.x_in.shape[0], split.x_out.shape[0]), (split.y_in.shape[0], split.y_out.shape[0]))
    null = null_weights(fits, strategy, sizes, standardized)
    if null.strategy != "bootstrap":
        p = psi_sf(stat, null)
    else:
        p = _bootstrap_pvalue(stat, sizes, nets, fits[2], ss_boot, replicates, standardized)
    return DiffNetOutcome(stat, null, p, nets, nets.sparsity, fits)


def diffnet_test(X, Y, method: str = "GL-BIC-AT", strategy: str = "fisher", rng=None,
                 tau: float = 5.0, patience: int | None = 5,
                 replicates: int = BOOTSTRAP_REPLICATES, standardized: bool = True) -> DiffNetOutcome:
    """Single-split differential network test for standardized ``X`` and ``Y``.

    Raises ``ConvergenceError`` when a constrained fit fails; callers
    aggregating over splits treat that split as failed.
    """
    ss_split, ss_rest = seed_sequence(rng).spawn(2)
    split = split_data(X, Y, ss_split)
    return diffnet_on_split(split, method, strategy, ss_rest, tau, patience, replicates, standardized)
