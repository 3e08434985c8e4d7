"""Fixed-weight moment estimation for the three-level model.

Level 2 (within clusters): with a symmetric full-rank weight matrix A,
beta_hat = (X'AX)^-1 X'AT and the generalized Q statistic
Q_A = T'A(I - H_A)T drive a moment estimator of the between-study variance:

    tau2_hat = max( (sum c_ii)^-1 (Q_A - sum c_ii v2_i), 0 ),
    C = A (I - H_A).

Level 3 (between clusters): the estimated cluster effects a0_hat feed
gamma_hat = (W'FW)^-1 W'F a0_hat and Q_F = a0_hat' F (I - H_F) a0_hat, with

    omega2_hat = max( (sum p_gg)^-1 (Q_F - sum p_gg (sum_i b_gi^2
                      (tau2_hat + v2_gi) + Z_g Omega Z_g')), 0 ),
    P = F (I - H_F),  b_gi = A^g_{+i} / A^g_{++}.

Observed v2 substitutes for E(v2) throughout (the variance estimator is
unbiased, so the plug-in is exact in expectation), and plug-ins happen in
the order tau2_hat, then omega2_hat, then the standard error of the overall
effect.  Untruncated variance estimates are kept for bias diagnostics.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm as _norm, t as _t

from . import model, qform
from .errors import DataError, SingularNormalMatrix

__all__ = [
    "Level2Fit",
    "Level3Fit",
    "MomentFit",
    "hat_matrix",
    "fit_level2",
    "fit_level3",
    "delta_interval",
    "fit_moment",
]


@dataclass(frozen=True)
class Level2Fit:
    beta_hat: np.ndarray          # (M+p,): a0_hat per cluster, then covariate effects
    q_a: float
    c_diag: np.ndarray            # (K_total,) diagonal of C = A(I - H_A)
    tau2_hat: float
    tau2_raw: float               # before truncation at zero
    b_weights: tuple[np.ndarray, ...]
    cond_var_a0: np.ndarray       # (M,) Var(a0g_hat | a0g) at (tau2_hat, v2)


@dataclass(frozen=True)
class Level3Fit:
    gamma_hat: np.ndarray         # (q,)
    q_f: float
    p_diag: np.ndarray            # (M,) diagonal of P = F(I - H_F)
    omega2_hat: float
    omega2_raw: float
    se_gamma: np.ndarray          # (q,)
    var_a0_uncond: np.ndarray     # (M,) estimated unconditional Var(a0g_hat)


@dataclass(frozen=True)
class MomentFit:
    """Full SSW analysis of one dataset."""

    level2: Level2Fit
    level3: Level3Fit
    m: int
    alpha: float
    delta_hat: float
    se_delta: float
    ci_delta_normal: tuple[float, float]
    ci_delta_t: tuple[float, float]
    p_qa: float
    p_qf: float
    ci_tau2: tuple[float, float] | None
    ci_omega2: tuple[float, float] | None

    @property
    def tau2_hat(self) -> float:
        return self.level2.tau2_hat

    @property
    def omega2_hat(self) -> float:
        return self.level3.omega2_hat


def _solve_spd(mat: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve a symmetric positive-definite system via Cholesky."""
    try:
        chol = np.linalg.cholesky(mat)
    except np.linalg.LinAlgError as exc:
        raise SingularNormalMatrix(f"normal matrix is not positive definite: {exc}") from exc
    y = np.linalg.solve(chol, rhs)
    return np.linalg.solve(chol.T, y)


def _apply(a: np.ndarray, v: np.ndarray) -> np.ndarray:
    """A @ v for a diagonal (1-D) or dense (2-D) weight matrix."""
    if a.ndim == 1:
        return a[:, None] * v if v.ndim == 2 else a * v
    return a @ v


def hat_matrix(x: np.ndarray, a: np.ndarray) -> np.ndarray:
    """H_A = X (X'AX)^-1 X'A.  Idempotent, and H'A = AH (checked in debug runs)."""
    x = np.asarray(x, dtype=float)
    a = np.asarray(a, dtype=float)
    ax = _apply(a, x)
    xtax = x.T @ ax
    h = x @ _solve_spd(xtax, ax.T)
    if __debug__:
        scale = max(1.0, float(np.abs(h).max()))
        assert np.abs(h @ h - h).max() <= 1e-10 * scale
        a_full = np.diag(a) if a.ndim == 1 else a
        ascale = max(1.0, float(np.abs(a_full).max()))
        assert np.abs(h.T @ a_full - a_full @ h).max() <= 1e-10 * ascale * scale
    return h


def _block_b_weights(a: np.ndarray, sizes: np.ndarray) -> tuple[np.ndarray, ...]:
    """Normalized column sums b_gi = A^g_{+i} / A^g_{++} of each diagonal block."""
    out = []
    pos = 0
    for size in sizes:
        if a.ndim == 1:
            blk_sums = a[pos:pos + size]
        else:
            blk_sums = a[pos:pos + size, pos:pos + size].sum(axis=0)
        out.append(blk_sums / blk_sums.sum())
        pos += size
    return tuple(out)


def fit_level2(
    t: np.ndarray,
    x: np.ndarray,
    a: np.ndarray,
    v2: np.ndarray,
    sizes: np.ndarray,
) -> Level2Fit:
    """Weighted level-2 fit; ``a`` may be a diagonal given as a vector."""
    t = np.asarray(t, float)
    x = np.asarray(x, float)
    a = np.asarray(a, float)
    v2 = np.asarray(v2, float)
    sizes = np.asarray(sizes, dtype=np.int64)
    m = sizes.size

    ax = _apply(a, x)
    xtax = x.T @ ax
    beta = _solve_spd(xtax, ax.T @ t)
    resid = t - x @ beta
    q_a = float(resid @ _apply(a, resid))

    # diag(C) = diag(A) - diag(A X (X'AX)^-1 X'A)
    e = ax @ _solve_spd(xtax, np.eye(xtax.shape[0]))
    diag_aha = np.einsum("ij,ij->i", e, ax)
    diag_a = a if a.ndim == 1 else np.diag(a)
    c_diag = diag_a - diag_aha

    c_sum = float(c_diag.sum())
    if c_sum <= 1e-12 * max(float(np.abs(diag_a).sum()), 1e-300):
        raise DataError(
            "no residual weight at level 2 (saturated design, e.g. one study "
            "per cluster): tau2 is not estimable"
        )
    tau2_raw = (q_a - float(c_diag @ v2)) / c_sum
    tau2_hat = max(tau2_raw, 0.0)

    b_weights = _block_b_weights(a, sizes)

    # Var(a0g_hat | a0g) from the sandwich covariance of beta_hat at
    # Sigma = diag(tau2_hat + v2); reduces to sum_i b_gi^2 (tau2 + v2_gi)
    # for block-diagonal A with p = 0.
    sig = tau2_hat + v2
    mid = ax.T @ (sig[:, None] * ax)
    cov_beta = _solve_spd(xtax, _solve_spd(xtax, mid).T)
    cond_var_a0 = np.diag(cov_beta)[:m].copy()

    return Level2Fit(beta_hat=beta, q_a=q_a, c_diag=c_diag, tau2_hat=tau2_hat,
                     tau2_raw=tau2_raw, b_weights=b_weights, cond_var_a0=cond_var_a0)


def fit_level3(
    level2: Level2Fit,
    w: np.ndarray,
    z: np.ndarray,
    f: np.ndarray,
    omega_known: np.ndarray,
    tau2: float,
    v2: np.ndarray,
    sizes: np.ndarray,
) -> Level3Fit:
    """Weighted level-3 fit on the estimated cluster effects."""
    w = np.atleast_2d(np.asarray(w, float))
    f = np.asarray(f, float)
    sizes = np.asarray(sizes, dtype=np.int64)
    m = sizes.size
    a0 = np.asarray(level2.beta_hat[:m], float)

    fw = _apply(f, w)
    wtfw = w.T @ fw
    gamma = _solve_spd(wtfw, fw.T @ a0)
    resid = a0 - w @ gamma
    q_f = float(resid @ _apply(f, resid))

    e = fw @ _solve_spd(wtfw, np.eye(wtfw.shape[0]))
    diag_f = f if f.ndim == 1 else np.diag(f)
    p_diag = diag_f - np.einsum("ij,ij->i", e, fw)

    # per-cluster pieces of Var(a0g_hat): sum_i b_gi^2 (tau2 + v2_gi) + Z Omega Z'
    b2v = np.empty(m)
    pos = 0
    for g, size in enumerate(sizes):
        b = level2.b_weights[g]
        b2v[g] = float((b * b) @ (tau2 + v2[pos:pos + size]))
        pos += size
    if z.size:
        zoz = np.einsum("gi,ij,gj->g", z, omega_known, z)
    else:
        zoz = np.zeros(m)

    p_sum = float(p_diag.sum())
    omega2_raw = (q_f - float(p_diag @ (b2v + zoz))) / p_sum
    omega2_hat = max(omega2_raw, 0.0)

    var_a0 = b2v + zoz + omega2_hat
    mid = fw.T @ (var_a0[:, None] * fw)
    cov_gamma = _solve_spd(wtfw, _solve_spd(wtfw, mid).T)
    se_gamma = np.sqrt(np.diag(cov_gamma))

    return Level3Fit(gamma_hat=gamma, q_f=q_f, p_diag=p_diag, omega2_hat=omega2_hat,
                     omega2_raw=omega2_raw, se_gamma=se_gamma, var_a0_uncond=var_a0)


def delta_interval(
    fit: Level3Fit,
    m: int,
    crit: str = "t",
    alpha: float = 0.05,
) -> tuple[float, float]:
    """Interval for the overall effect: point estimate +- c * SE.

    crit='normal' uses the standard normal quantile, crit='t' the
    t-distribution with M-1 degrees of freedom.
    """
    delta = float(fit.gamma_hat[0])
    se = float(fit.se_gamma[0])
    if crit == "normal":
        c = float(_norm.ppf(1.0 - alpha / 2.0))
    elif crit == "t":
        c = float(_t.ppf(1.0 - alpha / 2.0, m - 1))
    else:
        raise ValueError(f"crit must be 'normal' or 't', got {crit!r}")
    return (delta - c * se, delta + c * se)


def _c_matrix(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Dense C = A(I - H_A); symmetric by the projection identity."""
    h = np.asarray(x, float) @ _solve_spd(
        np.asarray(x, float).T @ _apply(np.asarray(a, float), np.asarray(x, float)),
        _apply(np.asarray(a, float), np.asarray(x, float)).T,
    )
    a_full = np.diag(a) if np.asarray(a).ndim == 1 else np.asarray(a, float)
    c = a_full @ (np.eye(a_full.shape[0]) - h)
    return 0.5 * (c + c.T)


def fit_moment(
    ds: model.Dataset,
    weights: model.WeightSpec | None = None,
    alpha: float = 0.05,
    variance_cis: bool = True,
    validated: bool = False,
) -> MomentFit:
    """Run the full SSW pipeline on a dataset.

    With the default weights the level-2 matrix is diag(ntilde_gi) and the
    level-3 matrix diag(ntilde_g).  variance_cis=False skips the Q-profile
    intervals for tau2 and omega2 (they dominate the runtime).
    """
    if not validated:
        ds = model.validate(ds)
    d = model.design(ds)
    if weights is None:
        a = d.n_tilde
        f = d.n_tilde_g
    else:
        a = np.asarray(weights.level2, float)
        f = np.asarray(weights.level3, float)

    l2 = fit_level2(d.t, d.x, a, d.v2, d.sizes)
    l3 = fit_level3(l2, d.w, d.z, f, d.omega, l2.tau2_hat, d.v2, d.sizes)

    ci_n = delta_interval(l3, d.m, "normal", alpha)
    ci_t = delta_interval(l3, d.m, "t", alpha)

    # Heterogeneity tests: level-2 statistic under tau2 = 0, level-3 under
    # omega2 = 0 with tau2_hat and v2 plugged into Var(a0g_hat).
    p = d.x.shape[1] - d.m
    blocks = d.sizes if (np.asarray(a).ndim == 1 and p == 0) else None
    c_mat = _c_matrix(a, d.x)
    lam_qa = qform.het_test_lambdas(c_mat, d.v2, 0.0, blocks=blocks)
    p_qa = qform.het_test(l2.q_a, lam_qa)

    # null variance diagonal for Q_F: everything in Var(a0g_hat) except omega2
    base_var_a0 = l3.var_a0_uncond - l3.omega2_hat
    p_mat = _c_matrix(f, d.w)
    lam_qf = qform.het_test_lambdas(p_mat, base_var_a0, 0.0)
    p_qf = qform.het_test(l3.q_f, lam_qf)

    ci_tau2 = None
    ci_omega2 = None
    if variance_cis:
        if blocks is not None and np.all(d.sizes == d.sizes[0]):
            k = int(d.sizes[0])
            c_blocks = np.empty((d.m, k, k))
            for g in range(d.m):
                c_blocks[g] = c_mat[g * k:(g + 1) * k, g * k:(g + 1) * k]
            v2_2d = d.v2.reshape(d.m, k)
            lam_tau = lambda th: qform.block_lambdas(c_blocks, v2_2d, th)
        else:
            lam_tau = lambda th: qform.het_test_lambdas(c_mat, d.v2, th, blocks=blocks)
        p_stack = p_mat[None, :, :]
        var_stack = base_var_a0[None, :]
        lam_omega = lambda th: qform.block_lambdas(p_stack, var_stack, th)
        ci_tau2 = qform.invert_ci(l2.q_a, lam_tau, alpha)
        ci_omega2 = qform.invert_ci(l3.q_f, lam_omega, alpha)

    return MomentFit(
        level2=l2,
        level3=l3,
        m=d.m,
        alpha=alpha,
        delta_hat=float(l3.gamma_hat[0]),
        se_delta=float(l3.se_gamma[0]),
        ci_delta_normal=ci_n,
        ci_delta_t=ci_t,
        p_qa=p_qa,
        p_qf=p_qf,
        ci_tau2=ci_tau2,
        ci_omega2=ci_omega2,
    )
