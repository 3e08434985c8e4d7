"""Pure-numpy reference implementations of the hot kernels.

Selected when META3_BACKEND=numpy (or when numba is unavailable); the numba
variants in _kernels_numba.py implement the same contracts.
"""
from __future__ import annotations

import numpy as np

# Sampling points per chunk in davies_sum, bounding temporary arrays.
_CHUNK_BUDGET = 2_000_000


def jacobi_eigh(a, max_sweeps, rel_tol):
    """Cyclic Jacobi diagonalization of a symmetric matrix.

    Returns (diag, vectors, off_norm, sweeps) where ``diag`` holds the
    unsorted eigenvalues, ``vectors`` the accumulated rotations (columns),
    ``off_norm`` the final off-diagonal Frobenius norm and ``sweeps`` the
    number of full cycles performed. ``a`` is destroyed.
    """
    n = a.shape[0]
    v = np.eye(n)
    fro = float(np.sqrt((a * a).sum()))
    if fro == 0.0 or n < 2:
        return np.diag(a).copy(), v, 0.0, 0

    def off_norm():
        o = a.copy()
        np.fill_diagonal(o, 0.0)
        return float(np.sqrt((o * o).sum()))

    sweeps = 0
    off = off_norm()
    while off > rel_tol * fro and sweeps < max_sweeps:
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
        sweeps += 1
        off = off_norm()
    return np.diag(a).copy(), v, off, sweeps


def scaled_block_eigvals(blocks, roots, max_sweeps, rel_tol):
    """Eigenvalues of diag(r) B diag(r) for a stack of symmetric blocks."""
    m, k, _ = blocks.shape
    out = np.empty(m * k)
    worst = 0.0
    for g in range(m):
        r = roots[g]
        a = r[:, None] * blocks[g] * r[None, :]
        fro = float(np.linalg.norm(a))
        w, _, off, _ = jacobi_eigh(a.copy(), max_sweeps, rel_tol)
        if fro > 0.0:
            worst = max(worst, off / fro)
        out[g * k:(g + 1) * k] = w
    return out, worst


def davies_sum(q, lams, delta, n_terms, tau2):
    """Midpoint sum of the characteristic-function inversion integrand.

    sum over j of sin(theta(u_j)) * exp(-log rho(u_j) - tau2 u_j^2/2) / u_j
    at u_j = (j + 1/2) * delta.  The caller scales by delta/pi.
    """
    total = 0.0
    chunk = max(1, _CHUNK_BUDGET // max(int(lams.size), 1))
    for start in range(0, n_terms, chunk):
        stop = min(start + chunk, n_terms)
        u = (np.arange(start, stop) + 0.5) * delta
        x = lams[:, None] * u[None, :]
        theta = 0.5 * np.arctan(x).sum(axis=0) - 0.5 * q * u
        logrho = 0.25 * np.log1p(x * x).sum(axis=0)
        total += float((np.sin(theta) * np.exp(-logrho - 0.5 * tau2 * u * u) / u).sum())
    return total


def chernoff_bound(lams, x, upper):
    """Chernoff tail bound for Q = sum(lams * chi2_1), all lams >= 0.

    Upper: bound on P(Q > x); lower: bound on P(Q < x).  Tilting point
    solves K'(s) = x by bisection; K(s) = -1/2 sum log(1 - 2 lam s).
    """
    mean = float(lams.sum())
    if upper:
        if x <= mean:
            return 1.0
        lmax = float(lams.max())
        lo, hi = 0.0, (1.0 - 1e-12) / (2.0 * lmax)
        for _ in range(32):
            mid = 0.5 * (lo + hi)
            kprime = float((lams / (1.0 - 2.0 * lams * mid)).sum())
            if kprime < x:
                lo = mid
            else:
                hi = mid
        s = lo
    else:
        if x >= mean:
            return 1.0
        if x <= 0.0:
            return 0.0
        hi = 0.0
        lo = -1.0
        while float((lams / (1.0 - 2.0 * lams * lo)).sum()) > x:
            lo *= 2.0
            if lo < -1e300:
                break
        for _ in range(32):
            mid = 0.5 * (lo + hi)
            kprime = float((lams / (1.0 - 2.0 * lams * mid)).sum())
            if kprime > x:
                hi = mid
            else:
                lo = mid
        s = hi
    expo = -0.5 * float(np.log1p(-2.0 * lams * s).sum()) - s * x
    if expo >= 0.0:
        return 1.0
    return float(np.exp(expo))


def tail_cutoff(lams, eps, upper):
    """Point x with chernoff_bound(lams, x, upper) <= eps."""
    mean = float(lams.sum())
    if upper:
        lo = mean
        hi = 2.0 * mean + 1.0
        while chernoff_bound(lams, hi, True) > eps:
            lo = hi
            hi = 2.0 * hi
            if hi > 1e300:
                return hi
        for _ in range(16):
            mid = 0.5 * (lo + hi)
            if chernoff_bound(lams, mid, True) > eps:
                lo = mid
            else:
                hi = mid
        return hi
    lo, hi = 0.0, mean
    for _ in range(16):
        mid = 0.5 * (lo + hi)
        if chernoff_bound(lams, mid, False) > eps:
            hi = mid
        else:
            lo = mid
    return lo


def reml_loglik_core(tau2, omega2, t, v2, x, starts):
    """Restricted log-likelihood of the intercept+two-variance-component model.

    Per-cluster covariance diag(tau2 + v2) + omega2 * ones; rank-one
    inversion throughout.  Returns nan when the normal matrix degenerates.
    """
    d = tau2 + v2
    if np.any(d <= 0.0):
        return np.nan
    invd = 1.0 / d
    it = invd * t
    xtvx = x.T @ (invd[:, None] * x)
    xtvt = x.T @ it
    ttvt = float(t @ it)
    logdet = float(np.log(d).sum())
    s0 = np.add.reduceat(invd, starts[:-1])
    st = np.add.reduceat(it, starts[:-1])
    sx = np.add.reduceat(invd[:, None] * x, starts[:-1], axis=0)
    w = omega2 / (1.0 + omega2 * s0)
    logdet += float(np.log1p(omega2 * s0).sum())
    xtvx -= (w[:, None] * sx).T @ sx
    xtvt -= sx.T @ (w * st)
    ttvt -= float((w * st * st).sum())
    sign, logdet_x = np.linalg.slogdet(xtvx)
    if sign <= 0.0 or not np.isfinite(logdet_x):
        return np.nan
    try:
        beta = np.linalg.solve(xtvx, xtvt)
    except np.linalg.LinAlgError:
        return np.nan
    quad = ttvt - float(xtvt @ beta)
    return -0.5 * (logdet + logdet_x + quad)


def profile_loglik(which, theta, hi, t, v2, x, starts, tol):
    """Golden-section maximum of the restricted log-likelihood over the
    nuisance variance component in [0, hi] with the other fixed at theta.

    which=0 fixes tau2 (maximizes over omega2); which=1 fixes omega2.
    Returns (max loglik, argmax).
    """
    def val(y):
        if which == 0:
            ll = reml_loglik_core(theta, y, t, v2, x, starts)
        else:
            ll = reml_loglik_core(y, theta, t, v2, x, starts)
        return ll if np.isfinite(ll) else -1e300

    gr = 0.6180339887498949
    a, b = 0.0, hi
    c1 = b - gr * (b - a)
    c2 = a + gr * (b - a)
    f1 = val(c1)
    f2 = val(c2)
    while b - a > tol:
        if f1 >= f2:
            b, c2, f2 = c2, c1, f1
            c1 = b - gr * (b - a)
            f1 = val(c1)
        else:
            a, c1, f1 = c1, c2, f2
            c2 = a + gr * (b - a)
            f2 = val(c2)
    xb = 0.5 * (a + b)
    fb = val(xb)
    f0 = val(0.0)
    if f0 >= fb:
        return f0, 0.0
    return fb, xb
