"""numba-compiled hot kernels; contracts match _kernels_numpy exactly."""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def jacobi_eigh(a, max_sweeps, rel_tol):
    n = a.shape[0]
    v = np.eye(n)
    fro = 0.0
    for i in range(n):
        for j in range(n):
            fro += a[i, j] * a[i, j]
    fro = np.sqrt(fro)
    if fro == 0.0 or n < 2:
        return np.diag(a).copy(), v, 0.0, 0

    off = 0.0
    for i in range(n):
        for j in range(n):
            if i != j:
                off += a[i, j] * a[i, j]
    off = np.sqrt(off)

    sweeps = 0
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
                for i in range(n):
                    aip = a[i, p]
                    aiq = a[i, q]
                    a[i, p] = c * aip - s * aiq
                    a[i, q] = s * aip + c * aiq
                for i in range(n):
                    api = a[p, i]
                    aqi = a[q, i]
                    a[p, i] = c * api - s * aqi
                    a[q, i] = s * api + c * aqi
                a[p, q] = 0.0
                a[q, p] = 0.0
                for i in range(n):
                    vip = v[i, p]
                    viq = v[i, q]
                    v[i, p] = c * vip - s * viq
                    v[i, q] = s * vip + c * viq
        sweeps += 1
        off = 0.0
        for i in range(n):
            for j in range(n):
                if i != j:
                    off += a[i, j] * a[i, j]
        off = np.sqrt(off)
    w = np.empty(n)
    for i in range(n):
        w[i] = a[i, i]
    return w, v, off, sweeps


@njit(cache=True)
def davies_sum(q, lams, delta, n_terms, tau2):
    k = lams.size
    total = 0.0
    for j in range(n_terms):
        u = (j + 0.5) * delta
        theta = -0.5 * q * u
        logrho = 0.0
        for i in range(k):
            x = lams[i] * u
            theta += 0.5 * np.arctan(x)
            logrho += 0.25 * np.log1p(x * x)
        total += np.sin(theta) * np.exp(-logrho - 0.5 * tau2 * u * u) / u
    return total


@njit(cache=True)
def scaled_block_eigvals(blocks, roots, max_sweeps, rel_tol):
    """Eigenvalues of diag(r) B diag(r) for a stack of symmetric blocks.

    Returns (values flattened block-major, worst relative off-diagonal norm).
    """
    m, k, _ = blocks.shape
    out = np.empty(m * k)
    worst = 0.0
    a = np.empty((k, k))
    for g in range(m):
        fro = 0.0
        for i in range(k):
            for j in range(k):
                a[i, j] = roots[g, i] * blocks[g, i, j] * roots[g, j]
                fro += a[i, j] * a[i, j]
        fro = np.sqrt(fro)
        w, v, off, sweeps = jacobi_eigh(a, max_sweeps, rel_tol)
        if fro > 0.0 and off / fro > worst:
            worst = off / fro
        for i in range(k):
            out[g * k + i] = w[i]
    return out, worst


@njit(cache=True)
def _kprime(lams, s):
    out = 0.0
    for i in range(lams.size):
        out += lams[i] / (1.0 - 2.0 * lams[i] * s)
    return out


@njit(cache=True)
def chernoff_bound(lams, x, upper):
    mean = lams.sum()
    if upper:
        if x <= mean:
            return 1.0
        lmax = lams.max()
        lo = 0.0
        hi = (1.0 - 1e-12) / (2.0 * lmax)
        for _ in range(32):
            mid = 0.5 * (lo + hi)
            if _kprime(lams, mid) < x:
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
        while _kprime(lams, lo) > x:
            lo *= 2.0
            if lo < -1e300:
                break
        for _ in range(32):
            mid = 0.5 * (lo + hi)
            if _kprime(lams, mid) > x:
                hi = mid
            else:
                lo = mid
        s = hi
    expo = -s * x
    for i in range(lams.size):
        expo += -0.5 * np.log1p(-2.0 * lams[i] * s)
    if expo >= 0.0:
        return 1.0
    return np.exp(expo)


@njit(cache=True)
def tail_cutoff(lams, eps, upper):
    mean = lams.sum()
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
    lo = 0.0
    hi = mean
    for _ in range(16):
        mid = 0.5 * (lo + hi)
        if chernoff_bound(lams, mid, False) > eps:
            hi = mid
        else:
            lo = mid
    return lo


@njit(cache=True)
def reml_loglik_core(tau2, omega2, t, v2, x, starts):
    kk = t.size
    qdim = x.shape[1]
    m = starts.size - 1
    xtvx = np.zeros((qdim, qdim))
    xtvt = np.zeros(qdim)
    ttvt = 0.0
    logdet = 0.0
    sx = np.empty(qdim)
    for g in range(m):
        s = starts[g]
        e = starts[g + 1]
        s0 = 0.0
        st = 0.0
        for a in range(qdim):
            sx[a] = 0.0
        for i in range(s, e):
            d = tau2 + v2[i]
            if d <= 0.0:
                return np.nan
            invd = 1.0 / d
            logdet += np.log(d)
            s0 += invd
            st += invd * t[i]
            ttvt += invd * t[i] * t[i]
            for a in range(qdim):
                xtvt[a] += invd * x[i, a] * t[i]
                sx[a] += invd * x[i, a]
                for b in range(qdim):
                    xtvx[a, b] += invd * x[i, a] * x[i, b]
        w = omega2 / (1.0 + omega2 * s0)
        logdet += np.log1p(omega2 * s0)
        ttvt -= w * st * st
        for a in range(qdim):
            xtvt[a] -= w * sx[a] * st
            for b in range(qdim):
                xtvx[a, b] -= w * sx[a] * sx[b]
    if kk == 0:
        return np.nan
    if qdim == 1:
        if xtvx[0, 0] <= 0.0:
            return np.nan
        logdet_x = np.log(xtvx[0, 0])
        beta0 = xtvt[0] / xtvx[0, 0]
        quad = ttvt - xtvt[0] * beta0
    else:
        detx = np.linalg.det(xtvx)
        if detx <= 0.0 or not np.isfinite(detx):
            return np.nan
        logdet_x = np.log(detx)
        beta = np.linalg.solve(xtvx, xtvt)
        quad = ttvt - xtvt @ beta
    return -0.5 * (logdet + logdet_x + quad)


@njit(cache=True)
def _profile_val(which, theta, y, t, v2, x, starts):
    if which == 0:
        ll = reml_loglik_core(theta, y, t, v2, x, starts)
    else:
        ll = reml_loglik_core(y, theta, t, v2, x, starts)
    if not np.isfinite(ll):
        return -1e300
    return ll


@njit(cache=True)
def profile_loglik(which, theta, hi, t, v2, x, starts, tol):
    gr = 0.6180339887498949
    a = 0.0
    b = hi
    c1 = b - gr * (b - a)
    c2 = a + gr * (b - a)
    f1 = _profile_val(which, theta, c1, t, v2, x, starts)
    f2 = _profile_val(which, theta, c2, t, v2, x, starts)
    while b - a > tol:
        if f1 >= f2:
            b = c2
            c2 = c1
            f2 = f1
            c1 = b - gr * (b - a)
            f1 = _profile_val(which, theta, c1, t, v2, x, starts)
        else:
            a = c1
            c1 = c2
            f1 = f2
            c2 = a + gr * (b - a)
            f2 = _profile_val(which, theta, c2, t, v2, x, starts)
    xb = 0.5 * (a + b)
    fb = _profile_val(which, theta, xb, t, v2, x, starts)
    f0 = _profile_val(which, theta, 0.0, t, v2, x, starts)
    if f0 >= fb:
        return f0, 0.0
    return fb, xb
