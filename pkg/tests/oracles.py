"""Independent reference implementations used by the unit and acceptance tests."""

import numpy as np
from scipy import optimize

from netgsa.constrained_mle import gaussian_loglik
from netgsa.graph import UndirectedGraph


def random_graph(rng, d, p=0.4):
    return UndirectedGraph(d, [(i, j) for i in range(d) for j in range(i + 1, d) if rng.random() < p])


def optimizer_loglik(S, G, n):
    """Constrained MLE log-likelihood from BFGS over the free entries of omega."""
    d = S.shape[0]
    edges = G.edge_array()

    def unpack(theta):
        omega = np.diag(theta[:d])
        omega[edges[:, 0], edges[:, 1]] = theta[d:]
        omega[edges[:, 1], edges[:, 0]] = theta[d:]
        return omega

    def negll(theta):
        omega = unpack(theta)
        try:
            L = np.linalg.cholesky(omega)
        except np.linalg.LinAlgError:
            return np.inf, np.zeros_like(theta)
        R = np.linalg.inv(omega) - S
        grad = np.concatenate([np.diag(R), 2 * R[edges[:, 0], edges[:, 1]]])
        return -(2 * np.sum(np.log(np.diag(L))) - np.sum(S * omega)), -grad

    x0 = np.concatenate([1 / np.diag(S), np.zeros(len(edges))])
    r = optimize.minimize(negll, x0, jac=True, method="BFGS", options=dict(gtol=1e-10, maxiter=10_000))
    return gaussian_loglik(unpack(r.x), S, n)


def brute_force_bh(p):
    """Step-up adjustment straight from the definition: min over j >= rank of m p_(j) / j."""
    m = len(p)
    order = sorted(range(m), key=lambda i: (p[i], i))
    adj = [0.0] * m
    for r, i in enumerate(order, 1):
        adj[i] = min(1.0, min(m * p[order[j - 1]] / j for j in range(r, m + 1)))
    return adj
