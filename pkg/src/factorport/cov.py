"""Factor-model fitting and static/dynamic covariance assembly.

All covariance estimators produce N x N monthly-return covariances tagged
with their specification. Factor-implied estimators impose a diagonal
residual covariance (exact factor structure); dynamic variants let exactly
one ingredient vary over time and use the value at the requested date
(default: the final in-window date).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import (
    AssemblyError,
    CollinearityError,
    DegenerateInputError,
    InsufficientDataError,
    ParameterError,
    ShapeError,
)
from .volatility import DccFit, Garch11Fit, dcc_fit  # noqa: F401 (re-exported)

COV_SPECS = ("sample", "static", "dyn_beta", "dyn_factor", "dyn_error")


@dataclass
class FactorModelFit:
    """Per-asset least-squares fit of returns on a common factor block."""

    intercepts: np.ndarray
    loadings: np.ndarray  # K x N
    residuals: np.ndarray  # T x N, NaN where the return was missing
    factor_means: np.ndarray

    @property
    def n_assets(self) -> int:
        return self.loadings.shape[1]

    @property
    def n_factors(self) -> int:
        return self.loadings.shape[0]


@dataclass
class CovarianceEstimate:
    """Symmetric N x N covariance with its specification tag."""

    matrix: np.ndarray
    spec: str
    asof: str | None = None

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ShapeError("covariance matrix must be square")
        if self.spec not in COV_SPECS:
            raise ValueError(f"unknown covariance spec {self.spec!r}")
        self.matrix = (m + m.T) / 2.0

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix)[0])


@dataclass
class StructureComparison:
    """Total-covariation ratio, magnitude gap and same-sign fraction."""

    eig: float
    mag: float
    dir: float


def _clip_psd(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(m)
    if vals[0] >= 0:
        return m
    vals = np.clip(vals, 0.0, None)
    out = (vecs * vals) @ vecs.T
    return (out + out.T) / 2.0


def ols_fit(r: np.ndarray, f: np.ndarray) -> FactorModelFit:
    """Per-asset OLS of returns on factors with an intercept.

    Missing returns are allowed: each asset is fit on its present rows and
    residuals stay NaN where the return was missing. The factor block must
    be complete and non-collinear.
    """
    r = np.asarray(r, dtype=float)
    f = np.asarray(f, dtype=float)
    if r.ndim == 1:
        r = r[:, None]
    if f.ndim == 1:
        f = f[:, None]
    t, n = r.shape
    if f.shape[0] != t:
        raise ShapeError("returns and factors must share the time axis")
    k = f.shape[1]
    if t <= k + 1:
        raise InsufficientDataError(f"need T > K + 1, got T={t}, K={k}")
    if not np.all(np.isfinite(f)):
        raise ShapeError("factor matrix contains non-finite values")

    design = np.column_stack([np.ones(t), f]) if k else np.ones((t, 1))
    sv = np.linalg.svd(design, compute_uv=False)
    if sv[-1] <= 1e-10 * sv[0]:
        raise CollinearityError("factor matrix is rank deficient (with intercept)")

    intercepts = np.empty(n)
    loadings = np.empty((k, n))
    residuals = np.full((t, n), np.nan)

    complete = np.all(np.isfinite(r))
    if complete:
        coef, *_ = np.linalg.lstsq(design, r, rcond=None)
        intercepts = coef[0]
        loadings = coef[1:]
        residuals = r - design @ coef
    else:
        for i in range(n):
            mask = np.isfinite(r[:, i])
            if mask.sum() <= k + 1:
                raise InsufficientDataError(f"asset column {i} has too few present returns")
            coef, *_ = np.linalg.lstsq(design[mask], r[mask, i], rcond=None)
            intercepts[i] = coef[0]
            loadings[:, i] = coef[1:]
            residuals[mask, i] = r[mask, i] - design[mask] @ coef

    return FactorModelFit(
        intercepts=intercepts,
        loadings=loadings,
        residuals=residuals,
        factor_means=f.mean(axis=0) if k else np.zeros(0),
    )


def sample_cov(r: np.ndarray, asof: str | None = None) -> CovarianceEstimate:
    """Unbiased sample covariance, pairwise-complete over missing cells."""
    r = np.asarray(r, dtype=float)
    if r.ndim == 1:
        r = r[:, None]
    t = r.shape[0]
    if t < 2:
        raise InsufficientDataError("need at least two observations")
    if np.all(np.isfinite(r)):
        m = np.atleast_2d(np.cov(r.T, ddof=1))
    else:
        m = pd.DataFrame(r).cov(min_periods=2).to_numpy()
        if not np.all(np.isfinite(m)):
            raise InsufficientDataError("some asset pair has fewer than two common observations")
        m = _clip_psd(m)
    return CovarianceEstimate(matrix=m, spec="sample", asof=asof)


def factor_cov(f: np.ndarray) -> np.ndarray:
    """Sample covariance of a complete factor block (K x K, possibly 0 x 0)."""
    f = np.asarray(f, dtype=float)
    if f.ndim != 2:
        raise ShapeError("factor block must be 2-d")
    if f.shape[1] == 0:
        return np.zeros((0, 0))
    return np.atleast_2d(np.cov(f.T, ddof=1))


def residual_variances(residuals: np.ndarray) -> np.ndarray:
    """Per-asset residual sample variances, complete-case with divisor T-1."""
    u = np.asarray(residuals, dtype=float)
    out = np.empty(u.shape[1])
    for i in range(u.shape[1]):
        col = u[np.isfinite(u[:, i]), i]
        if col.size < 2:
            raise InsufficientDataError(f"residual column {i} has fewer than two observations")
        out[i] = np.var(col, ddof=1)
    return out


def static_factor_cov(fit: FactorModelFit, f: np.ndarray, asof: str | None = None) -> CovarianceEstimate:
    """Static exact-factor covariance B' Sigma_f B + diag(Sigma_u)."""
    sigma_f = factor_cov(f)
    if sigma_f.shape[0] != fit.n_factors:
        raise ShapeError("factor block width does not match the fit")
    sigma_u = residual_variances(fit.residuals)
    b = fit.loadings
    m = b.T @ sigma_f @ b + np.diag(sigma_u)
    return CovarianceEstimate(matrix=m, spec="static", asof=asof)


def dynamic_betas(
    r_i: np.ndarray,
    f: np.ndarray,
    fix_dcc: tuple[float, float] | None = None,
    factor_marginals: list[Garch11Fit] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Dynamic conditional betas of one asset on the factor block.

    Fits a (K+1)-variate DCC on the stacked (factors, return) series and
    returns beta_t = Sigma_f,t^{-1} sigma_fr,t plus the implied intercept
    path rbar - beta_t' Fbar. Singular factor blocks fall back to a ridge
    (1e-8) solve with a warning. Precomputed factor GARCH fits can be
    passed so per-asset calls only fit the asset's own marginal.
    """
    r_i = np.asarray(r_i, dtype=float).ravel()
    f = np.asarray(f, dtype=float)
    if f.ndim != 2 or f.shape[0] != r_i.shape[0]:
        raise ShapeError("factors must be T x K aligned with the return series")
    k = f.shape[1]
    if k < 1:
        raise ShapeError("dynamic betas need at least one factor")

    joint = np.column_stack([f, r_i])
    pre = list(factor_marginals) + [None] if factor_marginals is not None else None
    fit = dcc_fit(joint, fix_ab=fix_dcc, marginals=pre)
    h = fit.cov_path  # T x (K+1) x (K+1)
    sf = h[:, :k, :k]
    sfr = h[:, :k, k]
    try:
        betas = np.linalg.solve(sf, sfr[..., None])[..., 0]
    except np.linalg.LinAlgError:
        warnings.warn("singular conditional factor covariance; using ridge 1e-8", RuntimeWarning)
        ridge = 1e-8 * np.eye(k)
        betas = np.linalg.solve(sf + ridge, sfr[..., None])[..., 0]
    intercepts = r_i.mean() - betas @ f.mean(axis=0)
    return betas, intercepts


def assemble_dynamic(
    spec: str,
    *,
    loadings: np.ndarray | None = None,
    beta_path: np.ndarray | None = None,
    factor_cov_static: np.ndarray | None = None,
    factor_cov_path: np.ndarray | None = None,
    resid_var: np.ndarray | None = None,
    resid_var_path: np.ndarray | None = None,
    t: int = -1,
    asof: str | None = None,
) -> CovarianceEstimate:
    """Assemble a dynamic covariance with exactly one time-varying block.

    dyn_beta uses beta_path[t] with static factor and residual covariances;
    dyn_factor uses factor_cov_path[t]; dyn_error uses resid_var_path[t].
    The default t=-1 picks the final in-window value, which is what
    portfolio formation consumes.
    """

    def need(value, name):
        if value is None:
            raise AssemblyError(f"{spec} assembly requires {name}")
        return np.asarray(value, dtype=float)

    if spec == "dyn_beta":
        bt = need(beta_path, "beta_path")[t]
        sf = need(factor_cov_static, "factor_cov_static")
        su = need(resid_var, "resid_var")
        m = bt.T @ sf @ bt + np.diag(su) if bt.ndim == 2 else np.diag(su)
    elif spec == "dyn_factor":
        b = need(loadings, "loadings")
        sf = need(factor_cov_path, "factor_cov_path")[t]
        su = need(resid_var, "resid_var")
        m = b.T @ sf @ b + np.diag(su)
    elif spec == "dyn_error":
        b = need(loadings, "loadings")
        sf = need(factor_cov_static, "factor_cov_static")
        su = need(resid_var_path, "resid_var_path")[t]
        m = b.T @ sf @ b + np.diag(su)
    else:
        raise AssemblyError(f"unknown dynamic spec {spec!r}")
    return CovarianceEstimate(matrix=m, spec=spec, asof=asof)


def compare_structure(sigma, s) -> StructureComparison:
    """Compare a covariance estimate against a benchmark estimate.

    eig  = sqrt(tr(Sigma' Sigma) / tr(S' S)), the ratio of total covariation;
    mag  = sum |S - Sigma| / sum |S|, elementwise magnitude gap;
    dir  = fraction of entries whose product S_ij * Sigma_ij is strictly
           positive (zero products count as sign disagreement).
    """
    a = sigma.matrix if isinstance(sigma, CovarianceEstimate) else np.asarray(sigma, dtype=float)
    b = s.matrix if isinstance(s, CovarianceEstimate) else np.asarray(s, dtype=float)
    if a.shape != b.shape:
        raise ShapeError("matrices must have identical shapes")
    denom_eig = np.trace(b.T @ b)
    denom_mag = np.abs(b).sum()
    if denom_eig <= 0 or denom_mag <= 0:
        raise DegenerateInputError("benchmark covariance is numerically zero")
    eig = float(np.sqrt(np.trace(a.T @ a) / denom_eig))
    mag = float(np.abs(b - a).sum() / denom_mag)
    direction = float(np.mean((a * b) > 0))
    return StructureComparison(eig=eig, mag=mag, dir=direction)


def bootstrap_structure_pvalue(
    series_a: np.ndarray,
    series_b: np.ndarray,
    block_length: int = 12,
    n_resamples: int = 2000,
    seed: int = 0,
) -> float:
    """Circular-block-bootstrap p-value for equal means of two measure series.

    The paired difference series is centered and resampled in circular
    blocks; the two-sided p-value uses the (1 + count) / (B + 1) convention.
    """
    a = np.asarray(series_a, dtype=float).ravel()
    b = np.asarray(series_b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ParameterError("series must have equal lengths")
    t = a.shape[0]
    if block_length < 1:
        raise ParameterError("block_length must be >= 1")
    if block_length > t:
        raise ParameterError(f"block_length {block_length} exceeds series length {t}")

    diff = a - b
    observed = diff.mean()
    centered = diff - observed
    rng = np.random.default_rng(seed)
    n_blocks = int(np.ceil(t / block_length))
    count = 0
    offsets = np.arange(block_length)
    for _ in range(n_resamples):
        starts = rng.integers(0, t, size=n_blocks)
        idx = ((starts[:, None] + offsets[None, :]) % t).ravel()[:t]
        if abs(centered[idx].mean()) >= abs(observed):
            count += 1
    return (1.0 + count) / (n_resamples + 1.0)


def covariance_to_csv(est: CovarianceEstimate, assets: list[str], path) -> None:
    """Write an N x N covariance with asset ids as the header row."""
    header = ",".join(assets)
    np.savetxt(path, est.matrix, delimiter=",", header=header, comments="")
