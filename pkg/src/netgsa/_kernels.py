"""Compiled inner loops: lasso / graphical lasso coordinate descent and edgewise IPF.

All kernels operate in place on float64 arrays and release the GIL so that
they can be driven from a thread pool.
"""

import numpy as np
from numba import cfunc, njit, types


@njit(cache=True, nogil=True)
def _soft(r, lam):
    if r > lam:
        return r - lam
    if r < -lam:
        return r + lam
    return 0.0


@njit(cache=True, nogil=True)
def lasso_gram(Q, c, lam, beta, skip, tol, max_iter):
    """Minimise 0.5 b'Qb - c'b + lam*|b|_1 by cyclic coordinate descent.

    ``skip`` is an index excluded from the problem (its coefficient is held at
    zero), or -1.  Returns the number of passes, or -1 when ``max_iter`` is hit.
    """
    p = c.shape[0]
    g = np.zeros(p)
    for l in range(p):
        b = beta[l]
        if b != 0.0 and l != skip:
            for k in range(p):
                g[k] += Q[k, l] * b
    for it in range(max_iter):
        max_delta = 0.0
        for k in range(p):
            if k == skip:
                continue
            old = beta[k]
            r = c[k] - (g[k] - Q[k, k] * old)
            new = _soft(r, lam) / Q[k, k]
            if new != old:
                delta = new - old
                for l in range(p):
                    g[l] += Q[l, k] * delta
                beta[k] = new
                ad = abs(delta) * Q[k, k]
                if ad > max_delta:
                    max_delta = ad
        if max_delta < tol:
            return it + 1
        # flat directions can keep coordinates drifting after the KKT
        # conditions already hold to tolerance
        kkt = 0.0
        for k in range(p):
            if k == skip:
                continue
            r = c[k] - g[k]
            if beta[k] > 0.0:
                v = abs(r - lam)
            elif beta[k] < 0.0:
                v = abs(r + lam)
            else:
                v = abs(r) - lam
            if v > kkt:
                kkt = v
        if kkt < tol:
            return it + 1
    return -1


@njit(cache=True, nogil=True)
def _precision_from_coefs(W, B, Omega):
    d = W.shape[0]
    for j in range(d):
        acc = 0.0
        for k in range(d):
            if k != j:
                acc += W[k, j] * B[k, j]
        ojj = 1.0 / (W[j, j] - acc)
        Omega[j, j] = ojj
        for k in range(d):
            if k != j:
                Omega[k, j] = -B[k, j] * ojj
    for j in range(d):
        for k in range(j + 1, d):
            a = Omega[j, k]
            b = Omega[k, j]
            # keep exact zeros where either column regression dropped the pair
            if a == 0.0 or b == 0.0:
                m = 0.0
            else:
                m = 0.5 * (a + b)
            Omega[j, k] = m
            Omega[k, j] = m


@njit(cache=True, nogil=True)
def _logdet_chol(A):
    d = A.shape[0]
    L = np.zeros_like(A)
    acc = 0.0
    for j in range(d):
        s = A[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not (s > 0.0):
            return np.nan
        L[j, j] = np.sqrt(s)
        acc += np.log(L[j, j])
        for i in range(j + 1, d):
            s = A[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s / L[j, j]
    return 2.0 * acc


@njit(cache=True, nogil=True)
def _duality_gap(S, W, Omega, lam):
    # primal objective at Omega minus dual objective at W (dual feasible by construction)
    d = S.shape[0]
    ld_o = _logdet_chol(Omega)
    ld_w = _logdet_chol(W)
    if np.isnan(ld_o) or np.isnan(ld_w):
        return np.inf
    val = -ld_o - ld_w - d
    for j in range(d):
        for k in range(d):
            val += S[j, k] * Omega[j, k]
            if j != k:
                val += lam * abs(Omega[j, k])
    return val


@njit(cache=True, nogil=True)
def glasso_cd(S, lam, W, B, Omega, gap_tol, w_tol, max_sweeps, inner_tol, inner_max):
    """Block coordinate descent for the graphical lasso, off-diagonal penalty only.

    W (current covariance estimate) and B (column regression coefficients,
    B[k, j] for predictor k of column j) are warm starts and are updated in
    place. On return Omega holds the symmetric precision estimate.

    Returns (sweeps, gap); sweeps is -1 when the cap was reached, -2 when an
    inner lasso failed to converge.
    """
    d = S.shape[0]
    v = np.empty(d)
    gap = np.inf
    for k in range(d):
        W[k, k] = S[k, k]
    for sweep in range(max_sweeps):
        max_change = 0.0
        for j in range(d):
            for k in range(d):
                v[k] = 0.0
            for l in range(d):
                b = B[l, j]
                if l == j or b == 0.0:
                    continue
                for k in range(d):
                    v[k] += W[k, l] * b
            converged = False
            for it in range(inner_max):
                max_delta = 0.0
                for k in range(d):
                    if k == j:
                        continue
                    old = B[k, j]
                    r = S[k, j] - (v[k] - W[k, k] * old)
                    new = _soft(r, lam) / W[k, k]
                    if new != old:
                        delta = new - old
                        for l in range(d):
                            v[l] += W[l, k] * delta
                        B[k, j] = new
                        ad = abs(delta) * W[k, k]
                        if ad > max_delta:
                            max_delta = ad
                if max_delta < inner_tol:
                    converged = True
                    break
            if not converged:
                return -2, gap
            for k in range(d):
                if k != j:
                    ch = abs(W[k, j] - v[k])
                    if ch > max_change:
                        max_change = ch
                    W[k, j] = v[k]
                    W[j, k] = v[k]
        _precision_from_coefs(W, B, Omega)
        if max_change < w_tol:
            gap = _duality_gap(S, W, Omega, lam)
            if gap < gap_tol:
                return sweep + 1, gap
    return -1, gap


@njit(cache=True, nogil=True)
def ipf_edges(S, edges, singles, Omega, Sigma, tol, max_iter):
    """Edgewise iterative proportional fitting for a graph-constrained GGM.

    ``edges`` is an (E, 2) int array, ``singles`` lists vertices without
    edges. Omega / Sigma are updated in place and kept mutually inverse.
    Returns (iterations, max_deviation); iterations is -1 on non-convergence
    and -2 if a marginal lost positive definiteness.
    """
    d = S.shape[0]
    ne = edges.shape[0]
    u0 = np.empty(d)
    u1 = np.empty(d)
    dev = np.inf
    for it in range(max_iter):
        dev = 0.0
        for e in range(ne):
            i = edges[e, 0]
            j = edges[e, 1]
            a = Sigma[i, i]
            b = Sigma[i, j]
            c = Sigma[j, j]
            da = S[i, i] - a
            db = S[i, j] - b
            dc = S[j, j] - c
            m = max(abs(da), abs(db), abs(dc))
            if m > dev:
                dev = m
            if m == 0.0:
                continue
            det = a * c - b * b
            sdet = S[i, i] * S[j, j] - S[i, j] * S[i, j]
            if not (det > 0.0) or not (sdet > 0.0):
                return -2, dev
            # inverse of the current and target 2x2 marginals
            ia, ib, ic = c / det, -b / det, a / det
            sa, sb, sc = S[j, j] / sdet, -S[i, j] / sdet, S[i, i] / sdet
            Omega[i, i] += sa - ia
            Omega[i, j] += sb - ib
            Omega[j, i] += sb - ib
            Omega[j, j] += sc - ic
            # M = A D A with A = inv(Sigma_CC), D = S_CC - Sigma_CC
            t00 = ia * da + ib * db
            t01 = ia * db + ib * dc
            t10 = ib * da + ic * db
            t11 = ib * db + ic * dc
            m00 = t00 * ia + t01 * ib
            m01 = t00 * ib + t01 * ic
            m11 = t10 * ib + t11 * ic
            for k in range(d):
                u0[k] = Sigma[k, i]
                u1[k] = Sigma[k, j]
            for k in range(d):
                p0 = m00 * u0[k] + m01 * u1[k]
                p1 = m01 * u0[k] + m11 * u1[k]
                for l in range(d):
                    Sigma[k, l] += p0 * u0[l] + p1 * u1[l]
        for t in range(singles.shape[0]):
            i = singles[t]
            a = Sigma[i, i]
            da = S[i, i] - a
            if abs(da) > dev:
                dev = abs(da)
            if da == 0.0:
                continue
            if not (a > 0.0):
                return -2, dev
            Omega[i, i] += 1.0 / S[i, i] - 1.0 / a
            m00 = da / (a * a)
            for k in range(d):
                u0[k] = Sigma[k, i]
            for k in range(d):
                p0 = m00 * u0[k]
                for l in range(d):
                    Sigma[k, l] += p0 * u0[l]
        for k in range(d):
            for l in range(d):
                if not np.isfinite(Sigma[k, l]):
                    return -2, dev
        if dev < tol:
            return it + 1, dev
    return -1, dev


# Imhof integrands as C callbacks for QUADPACK. ``data`` points to a float64
# buffer [w, K, vals[0..K), mult[0..K)] where w is half the threshold.
_imhof_sig = types.double(types.double, types.CPointer(types.double))


def _imhof_integrand(kind):
    @cfunc(_imhof_sig, cache=True, nopython=True)
    def f(u, data):
        w = data[0]
        k = int(data[1])
        g = 0.0
        lr = 0.0
        for i in range(k):
            t = data[2 + i] * u
            m = data[2 + k + i]
            g += m * np.arctan(t)
            lr += m * np.log1p(t * t)
        g *= 0.5
        r = np.exp(-0.25 * lr)
        if u == 0.0:
            # limit of sin(g - w u) / u at the origin
            acc = 0.0
            for i in range(k):
                acc += data[2 + k + i] * data[2 + i]
            return 0.5 * acc - w
        if kind == 0:
            return np.sin(g - w * u) * r / u
        if kind == 1:
            return np.sin(g) * r / u
        return np.cos(g) * r / u

    return f


imhof_head = _imhof_integrand(0)
imhof_tail_sin = _imhof_integrand(1)
imhof_tail_cos = _imhof_integrand(2)
