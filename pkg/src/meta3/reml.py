"""REML baseline: restricted-likelihood estimation of (tau2, omega2),
inverse-variance GLS for the overall effect, and profile-likelihood CIs.

The marginal covariance of cluster g is V_g = diag(tau2 + v2_gi) +
omega2 * J_g; inverses and determinants use the rank-one identity on the
diagonal-plus-constant structure.  The likelihood surface is maximized by
Nelder-Mead on softplus-transformed components with three deterministic
restarts; failures are data values, not exceptions, mirroring how the
reference analyses account for non-convergence.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.stats import chi2 as _chi2, norm as _norm, t as _t

from . import backend, model
from .errors import NonFiniteLikelihood, NotConverged

__all__ = ["RemlFit", "reml_loglik", "reml_fit", "profile_ci", "gls", "fixed_design"]

_NM_XATOL = 1e-8
_NM_FATOL = 1e-10
_NM_MAXITER = 2000
_SEED_EPS = 1e-8
_PROFILE_INNER_TOL = 1e-8
_ENDPOINT_TOL = 1e-6
_THETA_CAP = 1e3


@dataclass(frozen=True)
class RemlFit:
    converged: bool
    tau2: float | None = None
    omega2: float | None = None
    delta_iv: float | None = None
    se_delta: float | None = None
    loglik: float | None = None
    pl_ci_tau2: tuple[float, float] | None = None
    pl_ci_omega2: tuple[float, float] | None = None
    pl_converged_tau2: bool = False
    pl_converged_omega2: bool = False
    # data needed to re-profile the likelihood (not part of the value)
    _t: np.ndarray | None = field(default=None, repr=False, compare=False)
    _x: np.ndarray | None = field(default=None, repr=False, compare=False)
    _v2: np.ndarray | None = field(default=None, repr=False, compare=False)
    _starts: np.ndarray | None = field(default=None, repr=False, compare=False)


def fixed_design(d: model.StackedDesign) -> np.ndarray:
    """Fixed-effects design of the marginal model: cluster W rows expanded to
    studies, followed by any study-level covariate columns."""
    x = np.repeat(d.w, d.sizes, axis=0)
    p = d.x.shape[1] - d.m
    if p:
        x = np.hstack([x, d.x[:, d.m:]])
    return np.ascontiguousarray(x)


def _as_arrays(t, x, v2, starts):
    t = np.ascontiguousarray(t, dtype=float)
    x = np.ascontiguousarray(np.atleast_2d(x), dtype=float)
    if x.shape[0] != t.size:
        x = x.T
    v2 = np.ascontiguousarray(v2, dtype=float)
    starts = np.ascontiguousarray(starts, dtype=np.int64)
    return t, x, v2, starts


def reml_loglik(tau2, omega2, t, x, v2, starts) -> float:
    """Restricted log-likelihood, up to an additive constant."""
    if tau2 < 0 or omega2 < 0:
        raise ValueError("variance components must be nonnegative")
    t, x, v2, starts = _as_arrays(t, x, v2, starts)
    ll = float(backend.reml_loglik_core(tau2, omega2, t, v2, x, starts))
    if not math.isfinite(ll):
        raise NonFiniteLikelihood(
            f"restricted likelihood degenerate at tau2={tau2}, omega2={omega2}"
        )
    return ll


def gls(tau2, omega2, t, x, v2, starts):
    """Generalized least squares at fixed variance components.

    Returns (beta, cov_beta) with cov the inverse weighted normal matrix.
    """
    t, x, v2, starts = _as_arrays(t, x, v2, starts)
    d = tau2 + v2
    invd = 1.0 / d
    xtvx = x.T @ (invd[:, None] * x)
    xtvt = x.T @ (invd * t)
    s0 = np.add.reduceat(invd, starts[:-1])
    st = np.add.reduceat(invd * t, starts[:-1])
    sx = np.add.reduceat(invd[:, None] * x, starts[:-1], axis=0)
    w = omega2 / (1.0 + omega2 * s0)
    xtvx -= (w[:, None] * sx).T @ sx
    xtvt -= sx.T @ (w * st)
    cov = np.linalg.inv(xtvx)
    beta = cov @ xtvt
    return beta, cov


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _softplus_inv(y: float) -> float:
    if y < 1e-10:
        return math.log(max(y, 1e-300))
    if y > 30.0:
        return y
    return math.log(math.expm1(y))


def _dl_seeds(t, x, v2, starts) -> tuple[float, float]:
    """DerSimonian-Laird-style starting values for (tau2, omega2)."""
    m = starts.size - 1
    w = 1.0 / v2
    sw = np.add.reduceat(w, starts[:-1])
    swt = np.add.reduceat(w * t, starts[:-1])
    tbar = swt / sw
    tbar_full = np.repeat(tbar, np.diff(starts))
    q_w = float((w * (t - tbar_full) ** 2).sum())
    c_w = float(w.sum() - (np.add.reduceat(w * w, starts[:-1]) / sw).sum())
    df = t.size - m
    tau2_dl = max((q_w - df) / c_w, 0.0) if c_w > 0 else 0.0

    wg = 1.0 / (1.0 / np.add.reduceat(1.0 / (v2 + tau2_dl), starts[:-1]))
    ag = (np.add.reduceat(t / (v2 + tau2_dl), starts[:-1])
          / np.add.reduceat(1.0 / (v2 + tau2_dl), starts[:-1]))
    abar = float((wg * ag).sum() / wg.sum())
    q_g = float((wg * (ag - abar) ** 2).sum())
    c_g = float(wg.sum() - (wg * wg).sum() / wg.sum())
    omega2_dl = max((q_g - (m - 1)) / c_g, 0.0) if c_g > 0 else 0.0
    return tau2_dl, omega2_dl


def reml_fit(t, x, v2, starts, alpha: float = 0.05, ci: bool = True) -> RemlFit:
    """Maximize the restricted likelihood over (tau2, omega2) in [0, inf)^2.

    Nelder-Mead on softplus-reparameterized components, restarted from the
    origin, from DerSimonian-Laird seeds, and from an inflated perturbation
    of those seeds; a run converges when the simplex collapses below 1e-8
    with function spread below 1e-10 inside 2000 iterations.  When no
    restart converges the fit reports converged=False and no estimates.
    """
    t, x, v2, starts = _as_arrays(t, x, v2, starts)

    def objective(params):
        th = _softplus(np.asarray(params))
        ll = backend.reml_loglik_core(float(th[0]), float(th[1]), t, v2, x, starts)
        if not np.isfinite(ll):
            return 1e300
        return -ll

    tau2_dl, omega2_dl = _dl_seeds(t, x, v2, starts)
    seeds = [
        (_SEED_EPS, _SEED_EPS),
        (max(tau2_dl, _SEED_EPS), max(omega2_dl, _SEED_EPS)),
        (max(2.0 * tau2_dl + 0.05, _SEED_EPS), max(2.0 * omega2_dl + 0.05, _SEED_EPS)),
    ]
    best = None
    any_ok = False
    for s_tau, s_omega in seeds:
        x0 = np.array([_softplus_inv(s_tau), _softplus_inv(s_omega)])
        res = minimize(
            objective,
            x0,
            method="Nelder-Mead",
            options=dict(xatol=_NM_XATOL, fatol=_NM_FATOL,
                         maxiter=_NM_MAXITER, maxfev=4 * _NM_MAXITER),
        )
        if res.success and np.isfinite(res.fun) and res.fun < 1e299:
            any_ok = True
            if best is None or res.fun < best.fun:
                best = res
    if not any_ok:
        return RemlFit(converged=False, _t=t, _x=x, _v2=v2, _starts=starts)

    tau2, omega2 = (float(v) for v in _softplus(best.x))
    beta, cov = gls(tau2, omega2, t, x, v2, starts)
    fit = RemlFit(
        converged=True,
        tau2=tau2,
        omega2=omega2,
        delta_iv=float(beta[0]),
        se_delta=float(math.sqrt(cov[0, 0])),
        loglik=float(-best.fun),
        _t=t, _x=x, _v2=v2, _starts=starts,
    )
    if not ci:
        return fit

    ci_tau2 = ci_omega2 = None
    ok_tau2 = ok_omega2 = False
    try:
        ci_tau2 = profile_ci(fit, "tau2", alpha)
        ok_tau2 = True
    except NotConverged:
        pass
    try:
        ci_omega2 = profile_ci(fit, "omega2", alpha)
        ok_omega2 = True
    except NotConverged:
        pass
    return RemlFit(
        converged=True, tau2=tau2, omega2=omega2, delta_iv=fit.delta_iv,
        se_delta=fit.se_delta, loglik=fit.loglik,
        pl_ci_tau2=ci_tau2, pl_ci_omega2=ci_omega2,
        pl_converged_tau2=ok_tau2, pl_converged_omega2=ok_omega2,
        _t=t, _x=x, _v2=v2, _starts=starts,
    )


def delta_interval_iv(fit: RemlFit, m: int, crit: str = "t", alpha: float = 0.05):
    """Normal- or t-quantile interval around the inverse-variance estimate."""
    if not fit.converged:
        raise NotConverged("no converged REML fit")
    if crit == "normal":
        c = float(_norm.ppf(1.0 - alpha / 2.0))
    elif crit == "t":
        c = float(_t.ppf(1.0 - alpha / 2.0, m - 1))
    else:
        raise ValueError(f"crit must be 'normal' or 't', got {crit!r}")
    return (fit.delta_iv - c * fit.se_delta, fit.delta_iv + c * fit.se_delta)


def _profile_value(fit: RemlFit, which: int, theta: float) -> float:
    """Profile log-likelihood at a fixed component value (0=tau2, 1=omega2)."""
    other_hat = fit.omega2 if which == 0 else fit.tau2
    hi = max(1.0, 10.0 * other_hat + 1.0)
    while True:
        ll, arg = backend.profile_loglik(
            which, theta, hi, fit._t, fit._v2, fit._x, fit._starts, _PROFILE_INNER_TOL
        )
        if arg < 0.92 * hi or hi > 1e6:
            return float(ll)
        hi *= 4.0


def profile_ci(fit: RemlFit, which: str, alpha: float = 0.05) -> tuple[float, float]:
    """Profile-likelihood CI for one variance component.

    Endpoints solve 2*(loglik_hat - profile(theta)) = chi2_1(1-alpha),
    profiling out the other component; bisection refines to 1e-6 and the
    lower endpoint truncates at zero.  NotConverged when no bracket exists
    below theta = 1e3.
    """
    if not fit.converged:
        raise NotConverged("no converged REML fit to profile")
    if which not in ("tau2", "omega2"):
        raise ValueError(f"which must be 'tau2' or 'omega2', got {which!r}")
    w = 0 if which == "tau2" else 1
    theta_hat = fit.tau2 if w == 0 else fit.omega2
    target = float(_chi2.ppf(1.0 - alpha, 1))
    ll_hat = fit.loglik

    def deviance(theta: float) -> float:
        return 2.0 * (ll_hat - _profile_value(fit, w, theta))

    def bisect(lo: float, hi: float) -> float:
        # deviance(lo) < target <= deviance(hi) or the reverse ordering
        d_lo = deviance(lo)
        for _ in range(200):
            if hi - lo <= _ENDPOINT_TOL:
                break
            mid = 0.5 * (lo + hi)
            if (deviance(mid) < target) == (d_lo < target):
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    # upper endpoint
    step = max(theta_hat, 0.1)
    prev = theta_hat
    cur = theta_hat + step
    while deviance(cur) < target:
        prev = cur
        step *= 2.0
        cur = theta_hat + step
        if cur > _THETA_CAP:
            raise NotConverged(f"no upper profile endpoint for {which} below {_THETA_CAP}")
    hi = bisect(prev, cur)

    # lower endpoint
    if theta_hat <= _ENDPOINT_TOL or deviance(0.0) < target:
        lo = 0.0
    else:
        lo = bisect(0.0, theta_hat)
    return (lo, hi)
