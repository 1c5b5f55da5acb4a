"""Gaussian likelihood under graph constraints.

Zero-mean Gaussian graphical models: log-likelihood, degrees of freedom and
the constrained maximum likelihood estimate obtained by edgewise iterative
proportional fitting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ConvergenceError, DataError
from .graph import UndirectedGraph

LOG_2PI = np.log(2.0 * np.pi)
IPF_SWEEPS = 500
NEWTON_STEPS = 100
MAX_CONDITION = 1e12


@dataclass
class GraphConstrainedFit:
    omega: np.ndarray
    graph: UndirectedGraph
    loglik: float
    df: int
    iterations: int = 0


def logdet_pd(A) -> float:
    """Log-determinant of a symmetric positive definite matrix.

    Raises ``DataError`` if the Cholesky factorisation fails.
    """
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise DataError("matrix is not positive definite") from exc
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def gaussian_loglik(omega, S, n) -> float:
    """Zero-mean Gaussian log-likelihood of ``n`` samples with scatter ``S``.

    ``(n/2) (log det omega - tr(S omega)) - (n d / 2) log(2 pi)``, where ``S``
    is the scatter matrix divided by ``n``.
    """
    omega = np.asarray(omega, dtype=float)
    S = np.asarray(S, dtype=float)
    d = omega.shape[0]
    ld = logdet_pd(omega)
    return 0.5 * n * (ld - float(np.sum(S * omega))) - 0.5 * n * d * LOG_2PI


def model_df(gx: UndirectedGraph, gy: UndirectedGraph, gxy: UndirectedGraph) -> tuple[int, int]:
    """Parameter counts of the individual (two-graph) and joint (pooled) models."""
    if not (gx.d == gy.d == gxy.d):
        raise DataError(f"graph dimensions differ: {gx.d}, {gy.d}, {gxy.d}")
    d = gx.d
    return 2 * d + gx.n_edges + gy.n_edges, d + gxy.n_edges


def precision_coordinates(d: int, edges: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Free entries of a graph-constrained precision matrix.

    Returns row and column indices of the ``d`` diagonal entries followed by
    the edges, and the multiplicity ``s`` of each entry in the matrix (1 on
    the diagonal, 2 off it).
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    a = np.concatenate([np.arange(d), edges[:, 0]]).astype(np.int64)
    b = np.concatenate([np.arange(d), edges[:, 1]]).astype(np.int64)
    s = np.concatenate([np.ones(d), np.full(len(edges), 2.0)])
    return a, b, s


def fisher_information(sigma, a, b, s) -> np.ndarray:
    """``tr(sigma E_t sigma E_u)`` for the symmetric indicator matrices ``E_t`` of the coordinates.

    This is minus the Hessian of ``log det(omega) - tr(S omega)`` in the free
    entries of ``omega``, evaluated at ``sigma = inv(omega)``.
    """
    return 0.5 * np.outer(s, s) * (sigma[np.ix_(a, a)] * sigma[np.ix_(b, b)]
                                   + sigma[np.ix_(a, b)] * sigma[np.ix_(b, a)])


def _objective(omega, S) -> float:
    try:
        L = np.linalg.cholesky(omega)
    except np.linalg.LinAlgError:
        return -np.inf
    return 2.0 * float(np.sum(np.log(np.diag(L)))) - float(np.sum(S * omega))


def _newton_polish(S, edges, omega, tol: float, max_steps: int) -> tuple[np.ndarray, int]:
    # damped Newton ascent in the free entries; quadratic convergence near the
    # optimum where edgewise fitting slows to a crawl on ill-conditioned data
    d = S.shape[0]
    a, b, s = precision_coordinates(d, edges)
    f = _objective(omega, S)
    if not np.isfinite(f):
        raise ConvergenceError("IPF iterate is not positive definite")
    for step in range(max_steps):
        sigma = np.linalg.inv(omega)
        sigma = 0.5 * (sigma + sigma.T)
        resid = sigma[a, b] - S[a, b]
        if float(np.max(np.abs(resid))) <= tol:
            return omega, step
        g = s * resid
        try:
            delta = np.linalg.solve(fisher_information(sigma, a, b, s), g)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError("singular information matrix in Newton step") from exc
        slope = float(g @ delta)
        t = 1.0
        while True:
            cand = omega.copy()
            cand[a, b] += t * delta
            cand[b, a] = cand[a, b]
            fc = _objective(cand, S)
            # near the optimum the gain is below rounding, so only positivity is required
            if np.isfinite(fc) and (fc >= f + 1e-4 * t * slope or slope < 1e-12 * max(1.0, abs(f))):
                break
            t *= 0.5
            if t < 1e-10:
                raise ConvergenceError("Newton line search failed; the constrained MLE may not exist")
        omega, f = cand, fc
        if np.linalg.cond(omega) > MAX_CONDITION:
            raise ConvergenceError("precision estimate diverges; the constrained MLE may not exist")
    raise ConvergenceError("Newton refinement did not converge")


def ipf_mle(S, G: UndirectedGraph, n: int = 1, tol: float = 1e-8,
            max_iter: int = IPF_SWEEPS) -> GraphConstrainedFit:
    """Maximum likelihood concentration matrix with zeros outside ``G``.

    Edgewise iterative proportional fitting runs for up to ``max_iter``
    sweeps; if the likelihood equations do not yet hold to ``tol``, damped
    Newton steps on the free entries of the precision matrix finish the fit.

    Parameters
    ----------
    S : (d, d) array
        Scatter matrix divided by the sample count.
    G : UndirectedGraph
        Allowed off-diagonal support.
    n : int
        Sample count used for the reported log-likelihood.
    tol : float
        Maximum absolute deviation in the likelihood equations
        ``inv(omega)[C] == S[C]`` over all edges and diagonal entries.
    max_iter : int
        Cap on IPF sweeps before switching to Newton refinement.

    Raises
    ------
    ConvergenceError
        When the fit does not converge; usually the MLE does not exist
        because the sample is too small for the graph.
    """
    S = np.ascontiguousarray(S, dtype=float)
    d = S.shape[0]
    if G.d != d:
        raise DataError(f"graph has {G.d} nodes but S is {d}x{d}")
    if np.any(np.diag(S) <= 0):
        raise DataError("S must have a strictly positive diagonal")
    edges = G.edge_array()
    singles = G.isolated()
    omega = np.diag(1.0 / np.diag(S))
    sigma = np.diag(np.diag(S)).astype(float)
    it, dev = _kernels.ipf_edges(S, edges, singles, omega, sigma, tol, max_iter)
    if it == -2:
        raise ConvergenceError(
            f"IPF lost positive definiteness (max deviation {dev:.3g}); "
            "the constrained MLE may not exist", last_value=dev)
    sweeps = max_iter if it < 0 else it
    omega = 0.5 * (omega + omega.T)
    omega, steps = _newton_polish(S, edges, omega, tol, NEWTON_STEPS)
    if np.linalg.cond(omega) > MAX_CONDITION:
        raise ConvergenceError("precision estimate is numerically singular; the constrained MLE may not exist")
    loglik = gaussian_loglik(omega, S, n)
    return GraphConstrainedFit(omega, G, loglik, d + G.n_edges, sweeps + steps)


def _likelihood_equation_residual(sigma, S, edges) -> float:
    r = float(np.max(np.abs(np.diag(sigma) - np.diag(S))))
    if len(edges):
        i, j = edges[:, 0], edges[:, 1]
        r = max(r, float(np.max(np.abs(sigma[i, j] - S[i, j]))))
    return r


def likelihood_equation_residual(fit: GraphConstrainedFit, S) -> float:
    """Largest violation of the GGM likelihood equations at ``fit.omega``."""
    sigma = np.linalg.inv(fit.omega)
    return _likelihood_equation_residual(sigma, np.asarray(S, dtype=float), fit.graph.edge_array())
