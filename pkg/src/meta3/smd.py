"""Standardized-mean-difference math: small-sample correction, variance
estimation, and noncentral-t sampling for two-arm studies.

A two-arm study with arm sizes (n_c, n_t) has effective sample size
ntilde = n_c*n_t/(n_c+n_t) and m = n_c+n_t-2 degrees of freedom.  The
uncorrected SMD is t/sqrt(ntilde) for a noncentral-t variable t; multiplying
by the correction factor J(m) makes the estimate unbiased for the true
standardized difference.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegreesOfFreedomTooSmall

__all__ = ["SmdMeta", "hedges_j", "smd_variance", "smd_variance_true", "sample_g"]


@dataclass(frozen=True)
class SmdMeta:
    """Per-study sampling constants: df, correction factor, noncentrality scale."""

    m: int
    j: float
    lambda_scale: float


def _check_arms(n_c: int, n_t: int) -> int:
    if n_c < 2 or n_t < 2:
        raise DegreesOfFreedomTooSmall(
            f"both arms need at least 2 observations, got ({n_c}, {n_t})"
        )
    return n_c + n_t - 2


def hedges_j(m: int) -> float:
    """Small-sample correction factor J(m) = Gamma(m/2) / (sqrt(m/2) Gamma((m-1)/2)).

    Evaluated through log-gamma so large m does not overflow.  Strictly
    increasing in m, approaching 1 from below.
    """
    if m < 2:
        raise DegreesOfFreedomTooSmall(f"correction factor needs m >= 2, got {m}")
    return math.exp(math.lgamma(m / 2.0) - math.lgamma((m - 1) / 2.0)) / math.sqrt(m / 2.0)


def smd_variance(g: float, n_c: int, n_t: int) -> float:
    """Unbiased variance estimate for a bias-corrected SMD.

    v2 = 1/ntilde + g^2 * (1 - (m-2)/(m*J(m)^2)); plugging in the observed g
    makes E[v2] equal the true sampling variance.
    """
    m = _check_arms(n_c, n_t)
    ntilde = n_c * n_t / (n_c + n_t)
    j = hedges_j(m)
    return 1.0 / ntilde + g * g * (1.0 - (m - 2) / (m * j * j))


def smd_variance_true(theta: float, n_c: int, n_t: int) -> float:
    """Exact sampling variance of the corrected SMD at true effect theta.

    Var(g) = J^2 * [m(1+lam^2)/(m-2) - lam^2/J^2] / ntilde with
    lam = sqrt(ntilde)*theta.  Used as an oracle in tests; requires m > 2
    for the noncentral-t variance to exist.
    """
    m = _check_arms(n_c, n_t)
    if m <= 2:
        raise DegreesOfFreedomTooSmall("variance of the t ratio needs m > 2")
    ntilde = n_c * n_t / (n_c + n_t)
    j = hedges_j(m)
    lam2 = ntilde * theta * theta
    var_t = m * (1.0 + lam2) / (m - 2) - lam2 / (j * j)
    return j * j * var_t / ntilde


def smd_meta(n_c: int, n_t: int) -> SmdMeta:
    m = _check_arms(n_c, n_t)
    return SmdMeta(m=m, j=hedges_j(m), lambda_scale=math.sqrt(n_c * n_t / (n_c + n_t)))


def sample_g(
    theta: float | np.ndarray,
    n_c: int,
    n_t: int,
    rng: np.random.Generator,
) -> float | np.ndarray:
    """Draw bias-corrected SMD values at true effect(s) theta.

    Builds the noncentral t as (Z + lam)/sqrt(chi2_m/m) with lam =
    sqrt(ntilde)*theta, then scales by J(m)/sqrt(ntilde).  Accepts a scalar
    or an array of thetas; one draw per theta.  Draw order (normals first,
    then chi-squares) is part of the reproducibility contract.
    """
    meta = smd_meta(n_c, n_t)
    theta = np.asarray(theta, dtype=float)
    lam = meta.lambda_scale * theta
    z = rng.standard_normal(theta.shape)
    chi2 = rng.chisquare(meta.m, theta.shape)
    t_star = (z + lam) / np.sqrt(chi2 / meta.m)
    g = meta.j * t_star / meta.lambda_scale
    if g.ndim == 0:
        return float(g)
    return g
