"""Distribution of quadratic forms in normal variables.

Central pieces: a cyclic-Jacobi symmetric eigensolver, a characteristic-
function inversion for P(sum lam_j Z_j^2 <= q) in the style of Davies'
algorithm, tail tests for the heterogeneity statistics, and test inversion
for variance-component confidence intervals.

The inversion evaluates the midpoint sum of the standard integrand

    sin(theta(u)) / (pi * u * rho(u)),
    theta(u) = (1/2) sum_j atan(lam_j u) - q u / 2,
    rho(u)   = prod_j (1 + lam_j^2 u^2)^(1/4),

over u in (0, U).  Three error sources are budgeted at acc/4 each and the
achieved bounds are returned: truncation at U, aliasing from the step
choice (images at q +- 2 pi m / step, bounded by Chernoff tail bounds at
the image points), and, only when the term budget would otherwise be
exceeded, Gaussian smoothing by a convergence factor exp(-tau2 u^2 / 2).
The smoothing coefficient uses a local density-derivative bound with a
safety factor of 4; its honesty is exercised against exact chi-square
families (including the slowly-decaying one-eigenvalue case) in the tests.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from . import backend
from .errors import BracketingFailed, NoConvergence, NotSymmetric

__all__ = [
    "QFormSpec",
    "DaviesResult",
    "eigen_sym",
    "davies_cdf",
    "het_test_lambdas",
    "het_test",
    "invert_ci",
]

# Eigenvalues below this fraction of the largest are treated as exact zeros
# created by projections.
EIGEN_DROP_RTOL = 1e-12

_JACOBI_MAX_SWEEPS = 100
_JACOBI_REL_TOL = 1e-12

# One-sided N(0,1) tail beyond 6 sigma; enters the aliasing accounting when
# a smoothing factor is active.
_PHI_TAIL_6 = 9.9e-10


@dataclass(frozen=True)
class QFormSpec:
    """Eigenvalues of the weighted form plus accuracy targets."""

    lambdas: np.ndarray
    acc: float = 1e-6
    lim: int = 100_000

    def __post_init__(self):
        lams = np.asarray(self.lambdas, dtype=float)
        if lams.ndim != 1:
            raise ValueError("lambdas must be a vector")
        if not np.all(np.isfinite(lams)):
            raise ValueError("lambdas must be finite")
        if self.acc <= 0 or self.lim <= 0:
            raise ValueError("acc and lim must be positive")
        object.__setattr__(self, "lambdas", lams)


class DaviesResult(NamedTuple):
    prob: float
    err_bound: float
    n_terms: int
    tau2: float

    def accuracy_reached(self, acc: float) -> bool:
        return self.err_bound <= acc


def eigen_sym(s: np.ndarray, return_vectors: bool = False):
    """Eigenvalues (descending) of a symmetric matrix by cyclic Jacobi sweeps.

    Requires symmetry to 1e-10 relative; raises NotSymmetric otherwise and
    NoConvergence if the off-diagonal norm has not fallen below
    1e-12 * ||S||_F after 100 sweeps.
    """
    s = np.asarray(s, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise NotSymmetric(f"expected a square matrix, got shape {s.shape}")
    scale = max(1.0, float(np.abs(s).max()) if s.size else 1.0)
    if s.size and float(np.abs(s - s.T).max()) > 1e-10 * scale:
        raise NotSymmetric("matrix is not symmetric to 1e-10")
    a = 0.5 * (s + s.T)
    fro = float(np.linalg.norm(a))
    w, v, off, sweeps = backend.jacobi_eigh(a.copy(), _JACOBI_MAX_SWEEPS, _JACOBI_REL_TOL)
    if fro > 0.0 and off > _JACOBI_REL_TOL * fro:
        raise NoConvergence(
            f"Jacobi sweeps did not converge: off-diagonal {off:.3g} after {sweeps} sweeps"
        )
    assert fro == 0.0 or np.linalg.norm(v @ np.diag(w) @ v.T - s) <= 1e-9 * fro
    order = np.argsort(w)[::-1]
    w = w[order]
    if return_vectors:
        return w, v[:, order]
    return w


def _trunc_bound(lams: np.ndarray, log_lams_sum: float, u: float, tau2: float) -> float:
    """Upper bound on the absolute truncated tail of the inversion integral."""
    k = lams.size
    gauss = -0.5 * tau2 * u * u
    log_b1 = math.log(2.0 / (math.pi * k)) - 0.5 * log_lams_sum - 0.5 * k * math.log(u) + gauss
    b = math.exp(log_b1) if log_b1 < 700.0 else math.inf
    if tau2 > 0.0:
        log_rho = 0.25 * float(np.log1p((lams * u) ** 2).sum())
        log_b2 = -log_rho + gauss - math.log(math.pi * tau2 * u * u)
        b = min(b, math.exp(log_b2))
    return b


def _find_u(lams: np.ndarray, log_lams_sum: float, tau2: float, eps: float) -> float:
    u = 1.0
    while _trunc_bound(lams, log_lams_sum, u, tau2) > eps:
        u *= 2.0
        if u > 1e14:
            return u
    lo, hi = u / 2.0, u
    for _ in range(25):
        mid = 0.5 * (lo + hi)
        if _trunc_bound(lams, log_lams_sum, mid, tau2) > eps:
            lo = mid
        else:
            hi = mid
    return hi


def davies_cdf(q: float, spec: QFormSpec) -> DaviesResult:
    """P(sum lam_j Z_j^2 <= q) with an achieved error bound.

    Only nonnegative-definite forms are supported (all our Q statistics
    are).  When the bound exceeds spec.acc the result is still returned;
    callers decide whether the accuracy shortfall matters.
    """
    lams = spec.lambdas
    lmax = float(np.abs(lams).max()) if lams.size else 0.0
    if lmax == 0.0:
        return DaviesResult(1.0 if q >= 0.0 else 0.0, 0.0, 0, 0.0)
    lams = lams[np.abs(lams) > EIGEN_DROP_RTOL * lmax]
    if np.any(lams < 0.0):
        raise ValueError("davies_cdf supports nonnegative eigenvalues only")
    lams = np.ascontiguousarray(np.sort(lams)[::-1])
    if q <= 0.0:
        return DaviesResult(0.0, 0.0, 0, 0.0)

    acc = spec.acc
    eps_t = acc / 4.0
    eps_d = acc / 4.0
    eps_s = acc / 4.0
    mean = float(lams.sum())

    up = float(backend.tail_cutoff(lams, eps_d, True))
    if q >= up:
        return DaviesResult(1.0, float(backend.chernoff_bound(lams, q, True)), 0, 0.0)
    dn = float(backend.tail_cutoff(lams, eps_d, False))
    if q <= dn:
        return DaviesResult(0.0, float(backend.chernoff_bound(lams, q, False)), 0, 0.0)
    delta = 2.0 * math.pi / max(up - q, q - dn)

    log_lams_sum = float(np.log(lams).sum())
    tau2 = 0.0
    err_s = 0.0
    u_top = _find_u(lams, log_lams_sum, 0.0, eps_t)
    n_terms = int(math.ceil(u_top / delta))
    if n_terms > spec.lim:
        qt = max(q, 0.05 * mean)
        tau2 = eps_s * math.pi * qt * qt / 4.0
        err_s = eps_s
        u_top = _find_u(lams, log_lams_sum, tau2, eps_t)
        n_terms = int(math.ceil(u_top / delta))
        if n_terms > spec.lim:
            n_terms = spec.lim
    u_top = n_terms * delta

    total = float(backend.davies_sum(q, lams, delta, n_terms, tau2))
    prob = min(max(0.5 - (delta / math.pi) * total, 0.0), 1.0)

    e_trunc = _trunc_bound(lams, log_lams_sum, u_top, tau2)
    tau = math.sqrt(tau2)
    period = 2.0 * math.pi / delta
    e_alias = 0.0
    last = 0.0
    for mimg in (1, 2, 3, 4):
        last = float(backend.chernoff_bound(lams, q + mimg * period - 6.0 * tau, True))
        x_lo = q - mimg * period
        if x_lo + 6.0 * tau > 0.0:
            last += float(backend.chernoff_bound(lams, x_lo + 6.0 * tau, False))
        if tau > 0.0:
            last += 2.0 * _PHI_TAIL_6
        e_alias += last
    e_alias += last  # majorant for the (rapidly decaying) images beyond m=4
    return DaviesResult(prob, e_trunc + e_alias + err_s, n_terms, tau2)


def block_lambdas(stacked: np.ndarray, variances: np.ndarray, null_var: float) -> np.ndarray:
    """Eigenvalues (unsorted, zeros kept) of the scaled block stack.

    ``stacked`` is (M, K, K) of symmetric weight blocks, ``variances``
    (M, K) per-coordinate diagonals to which ``null_var`` is added.  This is
    the hot path of the variance-component CI inversion.
    """
    sigma = variances + null_var
    if np.any(sigma < 0.0):
        raise ValueError("negative variance in the null specification")
    vals, worst = backend.scaled_block_eigvals(
        stacked, np.sqrt(sigma), _JACOBI_MAX_SWEEPS, _JACOBI_REL_TOL
    )
    if worst > _JACOBI_REL_TOL:
        raise NoConvergence(f"Jacobi sweeps stalled on a block (rel. off {worst:.3g})")
    return vals


def het_test_lambdas(
    weight: np.ndarray,
    variances: np.ndarray,
    null_var: float,
    blocks: np.ndarray | None = None,
) -> np.ndarray:
    """Eigenvalues of Sigma^(1/2) W Sigma^(1/2) for a null variance value.

    ``weight`` is the symmetric weight matrix of the quadratic form (C at
    level 2, P at level 3), ``variances`` the per-coordinate variance diagonal
    to which ``null_var`` is added.  ``blocks`` (cluster sizes) activates a
    block-diagonal fast path that must match the dense computation.
    Projection zeros (below 1e-12 of the largest eigenvalue) are dropped.
    """
    variances = np.asarray(variances, dtype=float)
    sigma = variances + null_var
    if np.any(sigma < 0.0):
        raise ValueError("negative variance in the null specification")
    root = np.sqrt(sigma)
    if blocks is None:
        s = root[:, None] * weight * root[None, :]
        lams = eigen_sym(s)
    else:
        sizes = np.asarray(blocks, dtype=int)
        if sizes.size and np.all(sizes == sizes[0]):
            k = int(sizes[0])
            m = sizes.size
            stacked = np.empty((m, k, k))
            for g in range(m):
                stacked[g] = weight[g * k:(g + 1) * k, g * k:(g + 1) * k]
            lams = np.sort(block_lambdas(stacked, variances.reshape(m, k), null_var))[::-1]
        else:
            out = []
            pos = 0
            for size in sizes:
                blk = weight[pos:pos + size, pos:pos + size]
                r = root[pos:pos + size]
                out.append(eigen_sym(r[:, None] * blk * r[None, :]))
                pos += size
            lams = np.sort(np.concatenate(out))[::-1]
    lmax = float(np.abs(lams).max()) if lams.size else 0.0
    if lmax == 0.0:
        return lams
    return lams[np.abs(lams) > EIGEN_DROP_RTOL * lmax]


def het_test(q_obs: float, lambdas: np.ndarray, acc: float = 1e-6, lim: int = 100_000) -> float:
    """Tail p-value P(Q >= q_obs) for the heterogeneity statistic."""
    if q_obs < 0.0:
        raise ValueError(f"observed Q statistic must be nonnegative, got {q_obs}")
    res = davies_cdf(q_obs, QFormSpec(np.asarray(lambdas, float), acc=acc, lim=lim))
    return min(max(1.0 - res.prob, 0.0), 1.0)


def invert_ci(
    q_obs: float,
    lambda_fn: Callable[[float], np.ndarray],
    alpha: float = 0.05,
    theta_cap: float = 1e3,
    theta_tol: float = 1e-6,
    acc: float = 1e-6,
) -> tuple[float, float]:
    """Confidence interval for a variance component by test inversion.

    G(theta) = P(Q <= q_obs; lambda(theta)) decreases in theta; the interval
    is [lo, hi] with G(lo) = 1 - alpha/2 and G(hi) = alpha/2, each endpoint
    truncated at 0 when the equation has no nonnegative root.  Brackets grow
    by doubling from 1.0 up to theta_cap (BracketingFailed beyond); bisection
    refines to 1e-6 in theta.  Monotonicity is spot-checked on the bracket
    samples.
    """
    def g(theta: float) -> float:
        lams = np.asarray(lambda_fn(theta), dtype=float)
        return davies_cdf(q_obs, QFormSpec(lams, acc=acc)).prob

    def bisect(lo: float, hi: float, target: float) -> float:
        # g is decreasing: g(lo) >= target >= g(hi)
        while hi - lo > theta_tol:
            mid = 0.5 * (lo + hi)
            if g(mid) >= target:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    half = alpha / 2.0
    g0 = g(0.0)
    if g0 < half:
        # q_obs below even the alpha/2 null quantile: the interval collapses
        return (0.0, 0.0)

    lo_bracket, hi_bracket = 0.0, 1.0
    g_prev = g0
    while True:
        g_cur = g(hi_bracket)
        if g_cur > g_prev + 1e-3:
            raise ValueError("davies_cdf(q_obs; lambda(theta)) is not decreasing in theta")
        if g_cur < half:
            break
        g_prev = g_cur
        lo_bracket = hi_bracket
        hi_bracket *= 2.0
        if hi_bracket > theta_cap:
            raise BracketingFailed(
                f"no upper endpoint below theta={theta_cap} for q_obs={q_obs:.6g}"
            )
    hi = bisect(lo_bracket, hi_bracket, half)

    if g0 < 1.0 - half:
        lo = 0.0
    else:
        lo = bisect(0.0, hi, 1.0 - half)
    return (lo, hi)
