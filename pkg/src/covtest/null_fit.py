"""Null-model fitting: OLS for independent data, REML for random intercepts.

Exposes the fitted coefficients, variance estimates, residuals, the marginal
covariance V, and the REML projection matrix P = V^-1 - V^-1 X (X'V^-1 X)^-1 X'V^-1
required by the score and cumulative-sum tests.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .data_io import Dataset
from .errors import ConfigError, DegenerateFitError, ModelError, NumericalError
from .spline_basis import DesignMatrices

__all__ = [
    "NullFit",
    "RemlProjection",
    "fit_ols",
    "fit_reml_random_intercept",
    "reml_projection",
    "marginal_loglik",
    "restricted_loglik",
]

# Separates genuine near-zero noise (sigma ~ 1e-12 gives rss/yty ~ 1e-24)
# from pure float roundoff of an exact fit (~ (eps * cond)^2 ~ 1e-27).
_PERFECT_FIT_REL = 1e-25


@dataclass(frozen=True)
class NullFit:
    """Fitted null polynomial model.

    ``sigma2_b`` is 0 for independent data; V is the estimated marginal
    covariance sigma2_eps * I + sigma2_b * ZZ'.
    """

    beta: np.ndarray
    sigma2_eps: float
    sigma2_b: float
    V: np.ndarray
    loglik: float
    restricted_loglik: float
    fitted: np.ndarray
    residuals: np.ndarray
    cluster: np.ndarray | None
    method: str

    @property
    def n(self) -> int:
        return self.fitted.shape[0]

    @property
    def n_units(self) -> int:
        if self.cluster is None:
            return self.n
        return int(self.cluster.max()) + 1


@dataclass(frozen=True)
class RemlProjection:
    """Symmetric projection with PX = 0 and PVP = P."""

    P: np.ndarray


def _gls(y: np.ndarray, X: np.ndarray, V_inv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    XtVi = X.T @ V_inv
    beta = np.linalg.solve(XtVi @ X, XtVi @ y)
    return beta, y - X @ beta


def marginal_loglik(y: np.ndarray, X: np.ndarray, V: np.ndarray, beta: np.ndarray) -> float:
    """Gaussian marginal log-likelihood at (beta, V)."""
    n = y.shape[0]
    r = y - X @ beta
    sign, logdet = np.linalg.slogdet(V)
    if sign <= 0:
        raise NumericalError("covariance matrix is not positive definite")
    return float(-0.5 * (n * math.log(2 * math.pi) + logdet + r @ np.linalg.solve(V, r)))


def restricted_loglik(y: np.ndarray, X: np.ndarray, V: np.ndarray) -> float:
    """Restricted (REML) log-likelihood at V, with fixed effects profiled out."""
    n, p = X.shape
    sign, logdet = np.linalg.slogdet(V)
    if sign <= 0:
        raise NumericalError("covariance matrix is not positive definite")
    V_inv = np.linalg.inv(V)
    beta, r = _gls(y, X, V_inv)
    s2, logdet_x = np.linalg.slogdet(X.T @ V_inv @ X)
    if s2 <= 0:
        raise ModelError("X'V^-1 X is singular")
    quad = r @ V_inv @ r
    return float(-0.5 * ((n - p) * math.log(2 * math.pi) + logdet + logdet_x + quad))


def fit_ols(dataset: Dataset, design: DesignMatrices, variance: str = "reml") -> NullFit:
    """Ordinary least squares fit of the null polynomial model.

    The error variance uses the REML-type divisor n - p - d - 1 by default
    (``variance="ml"`` divides by n instead). A perfect fit is rejected:
    every downstream statistic divides by the residual variance.
    """
    X = dataset_design_matrix(dataset, design)
    y = dataset.y
    n, p_fixed = X.shape
    if n <= p_fixed:
        raise ModelError(f"need n > {p_fixed} rows to fit {p_fixed} coefficients, got n = {n}")
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    fitted = X @ beta
    resid = y - fitted
    rss = float(resid @ resid)
    if rss <= _PERFECT_FIT_REL * float(y @ y):
        raise DegenerateFitError(
            "residuals are numerically zero; error variance is not estimable"
        )
    if variance == "reml":
        sigma2 = rss / (n - p_fixed)
    elif variance == "ml":
        sigma2 = rss / n
    else:
        raise ConfigError(f"variance must be 'reml' or 'ml', got {variance!r}")
    V = sigma2 * np.eye(n)
    return NullFit(
        beta=beta,
        sigma2_eps=sigma2,
        sigma2_b=0.0,
        V=V,
        loglik=marginal_loglik(y, X, V, beta),
        restricted_loglik=restricted_loglik(y, X, V),
        fitted=fitted,
        residuals=resid,
        cluster=dataset.cluster,
        method="ols",
    )


def dataset_design_matrix(dataset: Dataset, design: DesignMatrices) -> np.ndarray:
    if design.X.shape[0] != dataset.n:
        raise ConfigError(
            f"design has {design.X.shape[0]} rows but dataset has {dataset.n}"
        )
    return design.X


def _cluster_indicator(cluster: np.ndarray) -> np.ndarray:
    m = int(cluster.max()) + 1
    Z = np.zeros((cluster.shape[0], m))
    Z[np.arange(cluster.shape[0]), cluster] = 1.0
    return Z


def _golden_section(fun, lo: float, hi: float, tol: float = 1e-10, max_iter: int = 200):
    """Minimise a unimodal scalar function on [lo, hi] by golden section."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(max_iter):
        if b - a < tol * (1.0 + abs(a) + abs(b)):
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(d)
    x = c if fc < fd else d
    return x, min(fc, fd)


def fit_reml_random_intercept(
    dataset: Dataset, design: DesignMatrices, variance: str = "reml"
) -> NullFit:
    """REML fit of the null model with a Gaussian random intercept per cluster.

    The variance pair is found by profiling the restricted likelihood over the
    ratio sigma2_b / sigma2_eps: a log-spaced grid over [1e-8, 1e8] followed by
    golden-section refinement. The boundary estimate sigma2_b = 0 is a valid
    result, not an error. ``variance="ml"`` maximises the unrestricted
    likelihood instead.
    """
    if dataset.cluster is None:
        raise ConfigError("random-intercept fit requires cluster labels")
    if variance not in ("reml", "ml"):
        raise ConfigError(f"variance must be 'reml' or 'ml', got {variance!r}")
    X = dataset_design_matrix(dataset, design)
    y = dataset.y
    n, p_fixed = X.shape
    cluster = dataset.cluster
    n_clusters = int(cluster.max()) + 1
    if n_clusters < 2:
        raise ConfigError(f"random-intercept fit needs >= 2 clusters, got {n_clusters}")
    if n <= p_fixed:
        raise ModelError(f"need n > {p_fixed} rows to fit {p_fixed} coefficients, got n = {n}")

    sizes = np.bincount(cluster, minlength=n_clusters)
    Z = _cluster_indicator(cluster)
    if sizes.max() == 1:
        warnings.warn(
            "every cluster has a single row; the intercept variance is "
            "unidentifiable and is set to 0",
            stacklevel=2,
        )
        ratio_hat = 0.0
    else:
        # Rotate to the eigenbasis of ZZ' so each ratio evaluation is O(n p^2).
        lam, Q = np.linalg.eigh(Z @ Z.T)
        lam = np.clip(lam, 0.0, None)
        yt = Q.T @ y
        Xt = Q.T @ X

        def neg_profile(log_ratio: float) -> float:
            ratio = math.exp(log_ratio)
            w = 1.0 / (1.0 + ratio * lam)
            XtW = Xt * w[:, None]
            XtWX = XtW.T @ Xt
            beta = np.linalg.solve(XtWX, XtW.T @ yt)
            resid = yt - Xt @ beta
            rss = float(w @ resid**2)
            logdet_w = float(np.log1p(ratio * lam).sum())
            if variance == "reml":
                sign, logdet_x = np.linalg.slogdet(XtWX)
                crit = (n - p_fixed) * math.log(rss) + logdet_w + logdet_x
            else:
                crit = n * math.log(rss) + logdet_w
            if not math.isfinite(crit):
                raise NumericalError(
                    f"restricted likelihood not finite at variance ratio {ratio:.3e}"
                )
            return 0.5 * crit

        grid = np.log(np.logspace(-8, 8, 81))
        values = np.array([neg_profile(g) for g in grid])
        best = int(np.argmin(values))
        corner = neg_profile(math.log(1e-12))  # effectively ratio = 0
        if corner <= values[best]:
            ratio_hat = 0.0
        else:
            lo = grid[max(best - 1, 0)]
            hi = grid[min(best + 1, grid.size - 1)]
            log_ratio, refined = _golden_section(neg_profile, lo, hi)
            ratio_hat = math.exp(log_ratio) if refined < corner else 0.0

    W = np.eye(n) + ratio_hat * (Z @ Z.T)
    W_inv = np.linalg.inv(W)
    beta, resid = _gls(y, X, W_inv)
    rss = float(resid @ W_inv @ resid)
    if rss <= _PERFECT_FIT_REL * float(y @ y):
        raise DegenerateFitError(
            "residuals are numerically zero; error variance is not estimable"
        )
    dof = (n - p_fixed) if variance == "reml" else n
    sigma2_eps = rss / dof
    sigma2_b = ratio_hat * sigma2_eps
    V = sigma2_eps * W
    return NullFit(
        beta=beta,
        sigma2_eps=sigma2_eps,
        sigma2_b=sigma2_b,
        V=V,
        loglik=marginal_loglik(y, X, V, beta),
        restricted_loglik=restricted_loglik(y, X, V),
        fitted=X @ beta,
        residuals=resid,
        cluster=cluster,
        method="reml-random-intercept",
    )


def reml_projection(fit: NullFit, X: np.ndarray) -> RemlProjection:
    """P = V^-1 - V^-1 X (X'V^-1 X)^-1 X'V^-1 for the fitted covariance.

    Symmetric, annihilates the columns of X, and satisfies P V P = P.
    """
    V = fit.V
    cond = np.linalg.cond(V)
    if cond > 1e12:
        raise NumericalError(f"fitted covariance is ill-conditioned (cond = {cond:.3e})")
    V_inv = np.linalg.inv(V)
    ViX = V_inv @ X
    P = V_inv - ViX @ np.linalg.solve(X.T @ ViX, ViX.T)
    return RemlProjection(P=0.5 * (P + P.T))
