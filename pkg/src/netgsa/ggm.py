"""Sparse Gaussian graphical model estimation.

Graphical lasso with BIC or cross-validated tuning, Meinshausen-Buhlmann
neighbourhood selection, shrinkage partial correlations, and sparsity
control by adaptive thresholding.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import _kernels
from .constrained_mle import gaussian_loglik
from .errors import ConvergenceError, DataError
from .graph import UndirectedGraph

logger = logging.getLogger(__name__)

N_LAMBDA = 20
ZERO_TOL = 1e-12
GLASSO_MAX_SWEEPS = 10_000


@dataclass
class SparsityReport:
    m: float
    inverse_m: float | None
    edge_count: int


def standardize(X) -> np.ndarray:
    """Centre each column and scale it to unit sample variance (divisor n-1)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise DataError("need a 2-D matrix with at least 2 rows")
    mu = X.mean(axis=0)
    Xc = X - mu
    sd = np.sqrt(np.sum(Xc**2, axis=0) / (X.shape[0] - 1))
    for j in range(X.shape[1]):
        col = X[:, j]
        if np.all(col == col[0]) or not sd[j] > 0:
            raise DataError(f"constant column {j}")
    Z = Xc / sd
    # a second centring pass removes the O(eps) residual mean left by rounding
    return Z - Z.mean(axis=0)


def sample_covariance(X) -> np.ndarray:
    """Column-centred covariance with divisor ``n``."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if n < 2:
        raise DataError(f"sample covariance needs n >= 2, got {n}")
    Xc = X - X.mean(axis=0)
    S = Xc.T @ Xc / n
    return 0.5 * (S + S.T)


def scatter(X) -> np.ndarray:
    """Zero-mean scatter ``X'X / n`` (no centring)."""
    X = np.asarray(X, dtype=float)
    S = X.T @ X / X.shape[0]
    return 0.5 * (S + S.T)


class GlassoSolver:
    """Warm-started graphical lasso on a fixed covariance matrix.

    Calling :meth:`fit` along a decreasing sequence of penalties reuses the
    previous solution, which is how the tuning routines trace the path.

    With ``strict=False`` a sweep sequence stops as soon as the primal-dual
    gap falls below ``tol * d``; ``strict=True`` additionally runs until the
    covariance iterate is stationary, which certifies the KKT conditions to
    about 1e-9.
    """

    def __init__(self, S, tol: float = 1e-6, strict: bool = False,
                 max_sweeps: int = GLASSO_MAX_SWEEPS):
        S = np.ascontiguousarray(S, dtype=float)
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise DataError("S must be square")
        if not np.allclose(S, S.T, atol=1e-10):
            raise DataError("S must be symmetric")
        if np.any(np.diag(S) <= 0):
            raise DataError("S must have a strictly positive diagonal")
        self.S = S
        self.d = S.shape[0]
        self.tol = tol
        self.max_sweeps = max_sweeps
        self.w_tol, self.inner_tol = (1e-9, 1e-11) if strict else (np.inf, 1e-8)
        self.W = S.copy()
        self.B = np.zeros_like(S)

    def fit(self, lam: float) -> np.ndarray:
        if not lam > 0:
            raise DataError(f"penalty must be positive, got {lam}")
        d = self.d
        omega = np.empty_like(self.S)
        sweeps, gap = _kernels.glasso_cd(
            self.S, float(lam), self.W, self.B, omega,
            self.tol * d, self.w_tol, self.max_sweeps, self.inner_tol, 100_000)
        if sweeps < 0:
            raise ConvergenceError(
                f"graphical lasso did not converge at lambda={lam:.4g} "
                f"(duality gap {gap:.3g})", last_value=gap)
        return omega


def glasso_fit(S, lam: float, tol: float = 1e-6) -> np.ndarray:
    """Graphical lasso estimate penalising off-diagonal entries only.

    Minimises ``-log det(omega) + tr(S omega) + lam * sum_{j != k} |omega_jk|``.
    Convergence is declared when the duality gap drops below ``tol * d``.
    """
    return GlassoSolver(S, tol=tol, strict=True).fit(lam)


def glasso_kkt_violation(S, omega, lam: float) -> float:
    """Largest violation of the graphical lasso stationarity conditions.

    At the optimum ``W = inv(omega)`` satisfies ``W_jj = S_jj``,
    ``W_jk - S_jk = lam * sign(omega_jk)`` on the support and
    ``|W_jk - S_jk| <= lam`` off it.
    """
    S = np.asarray(S, dtype=float)
    W = np.linalg.inv(omega)
    R = W - S
    d = S.shape[0]
    off = ~np.eye(d, dtype=bool)
    nz = off & (omega != 0)
    z = off & (omega == 0)
    v = float(np.max(np.abs(np.diag(R))))
    if nz.any():
        v = max(v, float(np.max(np.abs(R[nz] - lam * np.sign(omega[nz])))))
    if z.any():
        v = max(v, float(np.max(np.abs(R[z]))) - lam)
    return v


def induced_graph(omega, zero_tol: float = ZERO_TOL) -> UndirectedGraph:
    A = np.abs(np.asarray(omega)) > zero_tol
    np.fill_diagonal(A, False)
    return UndirectedGraph.from_adjacency(A)


def lambda_grid(S, n: int, d: int, n_lambda: int = N_LAMBDA) -> np.ndarray:
    """Twenty log-equispaced penalties from ``max_{j>k} |S_jk|`` downward.

    The smallest value is ``lambda_max / 100`` when ``d >= n`` and
    ``lambda_max / 1000`` when ``d < n``.
    """
    S = np.asarray(S, dtype=float)
    if d < 2:
        raise DataError("lambda grid needs d >= 2")
    lam_max = float(np.max(np.abs(S[np.triu_indices(d, k=1)])))
    if lam_max == 0:
        raise DataError("all off-diagonal covariances are zero; lambda grid is degenerate")
    ratio = 100.0 if d >= n else 1000.0
    return np.geomspace(lam_max, lam_max / ratio, n_lambda)


def bic_score(omega, S, n: int) -> float:
    d = omega.shape[0]
    df = d + int(np.count_nonzero(np.triu(omega, k=1)))
    return -2.0 * gaussian_loglik(omega, S, n) + np.log(n) * df


def select_lambda_bic(X, grid, patience: int | None = None) -> tuple[float, np.ndarray]:
    """Pick the grid penalty minimising BIC; ties go to the larger penalty.

    The grid is traversed from the largest penalty down. With ``patience``
    set, the scan stops after that many consecutive penalties fail to improve
    on the best score, skipping the expensive dense end of the path.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    S = sample_covariance(X)
    solver = GlassoSolver(S)
    best = None
    stale = 0
    for lam in sorted(np.asarray(grid, dtype=float), reverse=True):
        omega = solver.fit(lam)
        score = bic_score(omega, S, n)
        if best is None or score < best[0]:
            best = (score, float(lam), omega)
            stale = 0
        else:
            stale += 1
            if patience is not None and stale >= patience:
                break
    return best[1], best[2]


def _fold_indices(n: int, folds: int, rng) -> list[np.ndarray]:
    if n < folds:
        raise DataError(f"{folds}-fold cross-validation needs n >= {folds}, got {n}")
    perm = rng.permutation(n)
    return np.array_split(perm, folds)


def cv_fold_loss(omega, X_train_mean, X_test) -> float:
    """Held-out negative log-likelihood of ``X_test`` centred at the training mean."""
    Xt = np.asarray(X_test, dtype=float) - X_train_mean
    return -gaussian_loglik(omega, Xt.T @ Xt / Xt.shape[0], Xt.shape[0])


def select_lambda_cv(X, grid, folds: int = 10, rng=None) -> tuple[float, np.ndarray]:
    """K-fold cross-validated graphical lasso; refits on all rows at the winner."""
    X = np.asarray(X, dtype=float)
    rng = np.random.default_rng(rng)
    lams = np.array(sorted(np.asarray(grid, dtype=float), reverse=True))
    parts = _fold_indices(X.shape[0], folds, rng)
    loss = np.zeros(len(lams))
    for test in parts:
        train = np.setdiff1d(np.arange(X.shape[0]), test)
        Xtr = X[train]
        mu = Xtr.mean(axis=0)
        solver = GlassoSolver(sample_covariance(Xtr))
        for i, lam in enumerate(lams):
            loss[i] += cv_fold_loss(solver.fit(lam), mu, X[test])
    loss /= folds
    i_best = int(np.argmin(loss))  # first minimum = largest penalty among ties
    lam = float(lams[i_best])
    return lam, glasso_fit(sample_covariance(X), lam)


def _nodewise_lasso(Q, lam, coefs, tol: float = 1e-8) -> None:
    # the stopping rule is relative to the variance of the response gene
    d = Q.shape[0]
    for j in range(d):
        beta = coefs[:, j]
        it = _kernels.lasso_gram(Q, Q[:, j].copy(), float(lam), beta, j, tol * Q[j, j], 100_000)
        if it < 0:
            # a warm start deep in a flat valley can crawl; restart from zero
            beta[:] = 0.0
            it = _kernels.lasso_gram(Q, Q[:, j].copy(), float(lam), beta, j, tol * Q[j, j], 100_000)
        if it < 0:
            raise ConvergenceError(f"lasso for node {j} did not converge at lambda={lam:.4g}")
        coefs[:, j] = beta


def mb_fit(X, grid, folds: int = 10, rng=None) -> UndirectedGraph:
    """Meinshausen-Buhlmann neighbourhood selection with a shared penalty.

    The penalty is chosen by K-fold cross-validation of the squared prediction
    error pooled over all node regressions; edges use the OR rule.
    """
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    if d < 2:
        raise DataError("neighbourhood selection needs d >= 2")
    rng = np.random.default_rng(rng)
    lams = np.array(sorted(np.asarray(grid, dtype=float), reverse=True))
    sse = np.zeros(len(lams))
    for test in _fold_indices(n, folds, rng):
        train = np.setdiff1d(np.arange(n), test)
        mu = X[train].mean(axis=0)
        Xtr = X[train] - mu
        Xte = X[test] - mu
        Q = np.ascontiguousarray(Xtr.T @ Xtr / len(train))
        coefs = np.zeros((d, d))
        for i, lam in enumerate(lams):
            _nodewise_lasso(Q, lam, coefs)
            sse[i] += float(np.sum((Xte - Xte @ coefs) ** 2))
    i_best = int(np.argmin(sse))
    coefs = np.zeros((d, d))
    Xc = X - X.mean(axis=0)
    Q = np.ascontiguousarray(Xc.T @ Xc / n)
    for lam in lams[: i_best + 1]:
        _nodewise_lasso(Q, lam, coefs)
    return UndirectedGraph.from_adjacency(coefs != 0)


def partial_correlations(omega) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    s = np.sqrt(np.diag(omega))
    P = -omega / np.outer(s, s)
    np.fill_diagonal(P, 1.0)
    return P


def shrinkage_intensity(Z) -> float:
    """Analytic shrinkage intensity of the correlation matrix toward identity.

    ``Z`` must be standardized (unit sample variance). Returns the
    unbiased-variance ratio estimator clipped to ``[0, 1]``.
    """
    n = Z.shape[0]
    W = Z[:, :, None] * Z[:, None, :]
    wbar = W.mean(axis=0)
    r = n / (n - 1) * wbar
    var_r = n / (n - 1) ** 3 * np.sum((W - wbar) ** 2, axis=0)
    off = ~np.eye(Z.shape[1], dtype=bool)
    denom = float(np.sum(r[off] ** 2))
    if denom == 0:
        return 1.0
    return float(np.clip(np.sum(var_r[off]) / denom, 0.0, 1.0))


def _null_pcor_density(r, kappa):
    # density of a sample correlation under independence with kappa degrees of freedom
    return np.exp((kappa - 3) / 2 * np.log1p(-r**2) - special.betaln(0.5, (kappa - 1) / 2))


def edge_probabilities(pcor, kappa: float, max_iter: int = 500) -> np.ndarray:
    """Posterior probability that each partial correlation is a true edge.

    Two-group mixture with the independence null density and a uniform
    alternative on ``[-1, 1]``; the null proportion is fitted by EM.
    """
    r = np.clip(np.asarray(pcor, dtype=float), -1 + 1e-12, 1 - 1e-12)
    f0 = _null_pcor_density(r, kappa)
    f1 = 0.5
    eta = 0.9
    for _ in range(max_iter):
        lfdr = eta * f0 / (eta * f0 + (1 - eta) * f1)
        new = float(np.mean(lfdr))
        if abs(new - eta) < 1e-10:
            eta = new
            break
        eta = new
    lfdr = eta * f0 / (eta * f0 + (1 - eta) * f1)
    return 1.0 - lfdr


def shrinkage_fit(X, edge_threshold: float = 0.8) -> UndirectedGraph:
    """Shrinkage partial-correlation network.

    The correlation matrix is shrunk toward the identity with the analytic
    intensity, inverted to partial correlations, and an edge is kept when its
    posterior edge probability exceeds ``edge_threshold``.
    """
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    if n < 3:
        raise DataError(f"shrinkage estimation needs n >= 3, got {n}")
    Z = standardize(X)
    lam = shrinkage_intensity(Z)
    R = (1 - lam) * (Z.T @ Z / (n - 1)) + lam * np.eye(d)
    np.fill_diagonal(R, 1.0)
    if np.linalg.cond(R) > 1e12:
        raise DataError("shrunk correlation matrix is numerically singular")
    P = partial_correlations(np.linalg.inv(R))
    iu = np.triu_indices(d, k=1)
    kappa = max(n - d - 1, 3)
    prob = edge_probabilities(P[iu], kappa)
    keep = prob > edge_threshold
    return UndirectedGraph(d, zip(iu[0][keep].tolist(), iu[1][keep].tolist()))


def sparsity_index(G: UndirectedGraph, n: int) -> SparsityReport:
    if n < 1:
        raise DataError("n must be positive")
    e = G.n_edges
    m = 2.0 * e / (n * G.d)
    return SparsityReport(m=m, inverse_m=(1.0 / m if e > 0 else None), edge_count=e)


def adaptive_threshold(omega, n: int, tau: float = 5.0) -> tuple[np.ndarray, UndirectedGraph]:
    """Prune the weakest partial correlations until ``1/m >= tau``.

    Edges are dropped in order of increasing absolute partial correlation
    (ties: lexicographically smaller pair first). Surviving entries keep their
    values.
    """
    if not tau > 0:
        raise DataError("tau must be positive")
    omega = np.array(omega, dtype=float)
    d = omega.shape[0]
    G = induced_graph(omega)
    budget = int(np.floor(n * d / (2.0 * tau)))
    excess = G.n_edges - budget
    if excess <= 0:
        return omega, G
    P = np.abs(partial_correlations(omega))
    order = sorted(G.edges, key=lambda e: (P[e], e))
    for i, j in order[:excess]:
        omega[i, j] = omega[j, i] = 0.0
    return omega, UndirectedGraph(d, order[excess:])
