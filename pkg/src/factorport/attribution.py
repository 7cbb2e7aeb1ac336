"""Relating latent factors to observed proxies and classifying regimes.

Covers HAC regressions with Bartlett-kernel standard errors, zero-out
variable importance, a coordinate-descent lasso, group aggregation and a
two-state Gaussian Markov-switching model estimated by EM over the
Hamilton filter/smoother.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import CollinearityError, FitError, InsufficientDataError, MappingError


@dataclass
class RegressionReport:
    """OLS estimates with HAC t-statistics; slot for scaled importances."""

    intercept: float
    coefficients: np.ndarray
    tstats: np.ndarray  # intercept first, then slopes
    r2: float
    adj_r2: float
    importances: np.ndarray | None = None


@dataclass
class RegimePath:
    """Filtered two-state volatility-regime classification."""

    p_low: np.ndarray  # filtered probability of the low-volatility state
    mu: np.ndarray  # state means, low-vol state first
    sigma: np.ndarray  # state standard deviations, low-vol state first
    high: np.ndarray  # boolean mask, True where the market is high-vol
    transition: np.ndarray
    loglik: float
    n_iter: int
    loglik_path: np.ndarray | None = None


def _design(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return x


def ols_nw(y: np.ndarray, x: np.ndarray, lags: int = 12) -> RegressionReport:
    """OLS with intercept and Bartlett-kernel (Newey-West) standard errors.

    lags = 0 reduces to the heteroskedasticity-robust sandwich without
    autocorrelation terms.
    """
    y = np.asarray(y, dtype=float).ravel()
    x = _design(x)
    t, k = x.shape
    if t <= k + 1:
        raise InsufficientDataError(f"need T > k + 1, got T={t}, k={k}")
    if lags < 0:
        raise ValueError("lags must be nonnegative")

    d = np.column_stack([np.ones(t), x])
    sv = np.linalg.svd(d, compute_uv=False)
    if sv[-1] <= 1e-10 * sv[0]:
        raise CollinearityError("regressors are collinear (with intercept)")

    beta, *_ = np.linalg.lstsq(d, y, rcond=None)
    resid = y - d @ beta

    xe = d * resid[:, None]
    meat = xe.T @ xe / t
    for j in range(1, min(lags, t - 1) + 1):
        w = 1.0 - j / (lags + 1.0)
        gamma = xe[j:].T @ xe[:-j] / t
        meat += w * (gamma + gamma.T)
    bread = np.linalg.inv(d.T @ d / t)
    vcov = bread @ meat @ bread / t
    se = np.sqrt(np.diag(vcov))
    tstats = beta / se

    sst = float(np.sum((y - y.mean()) ** 2))
    ssr = float(resid @ resid)
    r2 = 1.0 - ssr / sst if sst > 0 else 0.0
    adj = 1.0 - (1.0 - r2) * (t - 1) / (t - k - 1)
    return RegressionReport(
        intercept=float(beta[0]),
        coefficients=beta[1:],
        tstats=tstats,
        r2=r2,
        adj_r2=adj,
    )


def _plain_r2(y: np.ndarray, x: np.ndarray) -> float:
    t = y.shape[0]
    d = np.column_stack([np.ones(t), x])
    beta, *_ = np.linalg.lstsq(d, y, rcond=None)
    resid = y - d @ beta
    sst = float(np.sum((y - y.mean()) ** 2))
    return 1.0 - float(resid @ resid) / sst if sst > 0 else 0.0


def variable_importance_zero(y: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Drop in R^2 from zeroing each regressor, clipped and scaled to 100."""
    y = np.asarray(y, dtype=float).ravel()
    x = _design(x)
    full = _plain_r2(y, x)
    raw = np.empty(x.shape[1])
    for j in range(x.shape[1]):
        xz = x.copy()
        xz[:, j] = 0.0
        raw[j] = full - _plain_r2(y, xz)
    raw = np.clip(raw, 0.0, None)
    total = raw.sum()
    return raw * (100.0 / total) if total > 0 else raw


def lasso_fit(
    y: np.ndarray,
    x: np.ndarray,
    lam: float,
    tol: float = 1e-7,
    max_passes: int = 100_000,
) -> tuple[float, np.ndarray]:
    """Lasso by cyclical coordinate descent on standardized regressors.

    Minimizes (1/2T) ||y - b0 - X b||^2 + lam ||b||_1 with X standardized
    internally; returns (intercept, coefficients) on the original scale.
    All coefficients are zero once lam >= max_j |X_j'(y - ybar)| / T on the
    standardized scale.
    """
    y = np.asarray(y, dtype=float).ravel()
    x = _design(x)
    t, p = x.shape
    if lam < 0:
        raise ValueError("lam must be nonnegative")

    mx = x.mean(axis=0)
    sx = x.std(axis=0)
    sx_safe = np.where(sx > 0, sx, 1.0)
    xs = (x - mx) / sx_safe
    my = y.mean()
    yc = y - my

    b = np.zeros(p)
    resid = yc.copy()
    for _ in range(max_passes):
        max_delta = 0.0
        for j in range(p):
            if sx[j] == 0:
                continue
            bj = b[j]
            rho = (xs[:, j] @ resid) / t + bj  # column variance is 1
            new = np.sign(rho) * max(abs(rho) - lam, 0.0)
            if new != bj:
                resid += xs[:, j] * (bj - new)
                b[j] = new
                max_delta = max(max_delta, abs(new - bj))
        if max_delta <= tol:
            break

    coef = b / sx_safe
    coef[sx == 0] = 0.0
    intercept = my - float(mx @ coef)
    return intercept, coef


def load_grouping_csv(path) -> dict[str, str]:
    """Read a `variable,group` map (one header row, UTF-8)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:2]] != ["variable", "group"]:
            raise MappingError(f"{path}: expected header `variable,group`")
        out = {}
        for row in reader:
            if len(row) < 2 or not row[0].strip():
                continue
            out[row[0].strip()] = row[1].strip()
    return out


def group_importance(importances: dict[str, float], grouping: dict[str, str]) -> dict[str, float]:
    """Sum per-variable importances within groups and rescale to 100."""
    sums: dict[str, float] = {g: 0.0 for g in dict.fromkeys(grouping.values())}
    for var, value in importances.items():
        if var not in grouping:
            raise MappingError(f"variable {var!r} has no group assignment")
        sums[grouping[var]] += float(value)
    total = sum(sums.values())
    if total > 0:
        sums = {g: v * 100.0 / total for g, v in sums.items()}
    return sums


def five_number_summary(values: np.ndarray) -> tuple[float, float, float, float, float]:
    """Min, lower quartile, median, upper quartile, max (boxplot data)."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise InsufficientDataError("empty sample")
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return float(v.min()), float(q1), float(med), float(q3), float(v.max())


def median_split(series: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Masks (high, low): value > median is high, ties go to low."""
    x = np.asarray(series, dtype=float).ravel()
    if x.size == 0:
        raise InsufficientDataError("empty series")
    med = np.median(x)
    high = x > med
    return high, ~high


def _hamilton_pass(x, mu, sigma2, p_trans, pi0):
    """Filter + smoother; returns (loglik, filtered, smoothed, pairwise)."""
    t = x.shape[0]
    dens = np.empty((t, 2))
    for s in range(2):
        dens[:, s] = np.exp(-0.5 * (x - mu[s]) ** 2 / sigma2[s]) / np.sqrt(2.0 * np.pi * sigma2[s])
    dens = np.clip(dens, 1e-300, None)

    filtered = np.empty((t, 2))
    predicted = np.empty((t, 2))
    ll = 0.0
    prev = pi0
    for i in range(t):
        pred = p_trans.T @ prev
        joint = dens[i] * pred
        norm = joint.sum()
        ll += np.log(norm)
        filt = joint / norm
        predicted[i] = pred
        filtered[i] = filt
        prev = filt

    smoothed = np.empty((t, 2))
    smoothed[-1] = filtered[-1]
    pairwise = np.zeros((2, 2))
    for i in range(t - 2, -1, -1):
        ratio = smoothed[i + 1] / np.clip(predicted[i + 1], 1e-300, None)
        smoothed[i] = filtered[i] * (p_trans @ ratio)
        pairwise += filtered[i][:, None] * p_trans * ratio[None, :]
    return ll, filtered, smoothed, pairwise


def _kmeans2_squares(sq, rng):
    """Two-cluster Lloyd iteration on squared deviations; returns a mask."""
    lo, hi = np.percentile(sq, [25, 75])
    if hi <= lo:
        hi = lo + 1.0
    centers = np.array([lo, hi]) * rng.uniform(0.8, 1.2, size=2)
    for _ in range(50):
        assign = np.abs(sq[:, None] - centers[None, :]).argmin(axis=1)
        new = np.array([sq[assign == c].mean() if (assign == c).any() else centers[c] for c in (0, 1)])
        if np.allclose(new, centers):
            break
        centers = new
    return assign == np.argmax(centers)  # True = high-variance cluster


def markov_switching_fit(
    series: np.ndarray,
    max_iter: int = 500,
    tol: float = 1e-8,
    n_restarts: int = 5,
    seed: int = 0,
    min_obs: int = 100,
) -> RegimePath:
    """Two-state Gaussian mean/variance Markov-switching model via EM.

    States are ordered so index 0 carries the lower volatility; a date is
    labeled high-volatility when the filtered probability of the low-vol
    state falls below one half. Initialization comes from a 2-means split
    of squared demeaned returns with random restarts; the best converged
    likelihood wins. Raises FitError with the likelihood trace if no
    restart converges within max_iter EM steps.
    """
    x = np.asarray(series, dtype=float).ravel()
    if x.size < min_obs:
        raise InsufficientDataError(f"need at least {min_obs} observations, got {x.size}")
    rng = np.random.default_rng(seed)
    sq = (x - x.mean()) ** 2

    best = None
    traces = []
    for restart in range(n_restarts):
        high_mask = _kmeans2_squares(sq, rng)
        if high_mask.all() or (~high_mask).all():
            half = sq > np.median(sq)
            high_mask = half if half.any() and not half.all() else np.arange(x.size) % 2 == 0

        mu = np.array([x[~high_mask].mean(), x[high_mask].mean()])
        sigma2 = np.array([max(x[~high_mask].var(), 1e-10), max(x[high_mask].var(), 1e-10)])
        stay = 0.9 if restart == 0 else rng.uniform(0.7, 0.98)
        p_trans = np.array([[stay, 1 - stay], [1 - stay, stay]])
        pi0 = np.array([0.5, 0.5])

        prev_ll = -np.inf
        ll_hist = []
        converged = False
        for _ in range(max_iter):
            ll, filtered, smoothed, pairwise = _hamilton_pass(x, mu, sigma2, p_trans, pi0)
            ll_hist.append(ll)
            if not np.isfinite(ll):
                break
            weight = smoothed.sum(axis=0)
            mu = smoothed.T @ x / weight
            for s in range(2):
                sigma2[s] = max(float(smoothed[:, s] @ (x - mu[s]) ** 2 / weight[s]), 1e-12)
            rowsum = pairwise.sum(axis=1, keepdims=True)
            p_trans = pairwise / np.clip(rowsum, 1e-300, None)
            pi0 = smoothed[0]
            if abs(ll - prev_ll) <= tol * (1.0 + abs(ll)):
                converged = True
                break
            prev_ll = ll
        traces.append(ll_hist)
        if converged and (best is None or ll_hist[-1] > best[0]):
            best = (ll_hist[-1], mu.copy(), sigma2.copy(), p_trans.copy(), pi0.copy(), ll_hist)

    if best is None:
        raise FitError(f"EM failed to converge in {max_iter} iterations; traces: {traces}")

    ll, mu, sigma2, p_trans, pi0, ll_hist = best
    n_iter = len(ll_hist)
    order = np.argsort(sigma2)  # low-volatility state first
    mu = mu[order]
    sigma2 = sigma2[order]
    p_trans = p_trans[np.ix_(order, order)]
    pi0 = pi0[order]
    _, filtered, _, _ = _hamilton_pass(x, mu, sigma2, p_trans, pi0)
    p_low = filtered[:, 0]
    return RegimePath(
        p_low=p_low,
        mu=mu,
        sigma=np.sqrt(sigma2),
        high=p_low < 0.5,
        transition=p_trans,
        loglik=ll,
        n_iter=n_iter,
        loglik_path=np.asarray(ll_hist),
    )
