"""Univariate GARCH(1,1) and DCC correlation dynamics.

Both estimators are Gaussian quasi-maximum-likelihood with parameter
transforms enforcing positivity and stationarity, optimized by Nelder-Mead.
The time recursions are JIT-compiled when numba is available and fall back
to the same pure-Python code otherwise.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from .errors import FitError, InputError, InsufficientDataError

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def deco(func):
            return func

        return deco


VAR_FLOOR = 1e-30
CORR_RIDGE = 1e-10


@dataclass
class Garch11Fit:
    """GARCH(1,1) estimates and the filtered conditional-variance path."""

    omega: float
    alpha: float
    beta: float
    cond_var: np.ndarray
    mean: float = 0.0
    loglik: float = np.nan

    def __post_init__(self):
        if self.omega <= 0:
            raise ValueError("omega must be positive")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be nonnegative")
        if self.alpha + self.beta >= 1:
            raise ValueError("alpha + beta must be below 1")

    @property
    def unconditional_variance(self) -> float:
        return self.omega / (1.0 - self.alpha - self.beta)


@dataclass
class DccFit:
    """Two-step DCC estimates: marginal GARCH fits plus (a, b) dynamics."""

    marginals: list[Garch11Fit]
    a: float
    b: float
    qbar: np.ndarray
    corr_path: np.ndarray
    cov_path: np.ndarray
    loglik: float = np.nan
    boundary: bool = False


@njit(cache=True)
def _garch_recursion(e, s0, omega, alpha, beta):
    t = e.shape[0]
    sig2 = np.empty(t)
    s = s0
    for i in range(t):
        if s < VAR_FLOOR:
            s = VAR_FLOOR
        sig2[i] = s
        s = omega + alpha * e[i] * e[i] + beta * s
    return sig2


@njit(cache=True)
def _garch_nll(e, s0, omega, alpha, beta):
    t = e.shape[0]
    s = s0
    nll = 0.0
    for i in range(t):
        if s < VAR_FLOOR:
            s = VAR_FLOOR
        nll += np.log(s) + e[i] * e[i] / s
        s = omega + alpha * e[i] * e[i] + beta * s
    return 0.5 * nll


@njit(cache=True)
def _chol_solve_logdet(r, x):
    """Cholesky of r (in place safe copy); returns (quad form x'r^-1 x, logdet, ok)."""
    d = r.shape[0]
    lo = np.zeros((d, d))
    logdet = 0.0
    for i in range(d):
        for j in range(i + 1):
            acc = r[i, j]
            for m in range(j):
                acc -= lo[i, m] * lo[j, m]
            if i == j:
                if acc <= 0.0:
                    return 0.0, 0.0, False
                lo[i, j] = np.sqrt(acc)
                logdet += 2.0 * np.log(lo[i, j])
            else:
                lo[i, j] = acc / lo[j, j]
    # forward substitution L y = x, quad = ||y||^2
    quad = 0.0
    y = np.zeros(d)
    for i in range(d):
        acc = x[i]
        for m in range(i):
            acc -= lo[i, m] * y[m]
        y[i] = acc / lo[i, i]
        quad += y[i] * y[i]
    return quad, logdet, True


@njit(cache=True)
def _dcc_nll(eps, qbar, a, b):
    t, d = eps.shape
    q = qbar.copy()
    r = np.zeros((d, d))
    nll = 0.0
    for i in range(t):
        for j in range(d):
            for m in range(d):
                r[j, m] = q[j, m] / np.sqrt(q[j, j] * q[m, m])
            r[j, j] = 1.0 + CORR_RIDGE
        quad, logdet, ok = _chol_solve_logdet(r, eps[i])
        if not ok:
            return 1e100
        nll += logdet + quad
        for j in range(d):
            for m in range(d):
                q[j, m] = (1.0 - a - b) * qbar[j, m] + a * eps[i, j] * eps[i, m] + b * q[j, m]
    return 0.5 * nll


@njit(cache=True)
def _dcc_corr_path(eps, qbar, a, b):
    t, d = eps.shape
    q = qbar.copy()
    path = np.zeros((t, d, d))
    for i in range(t):
        for j in range(d):
            for m in range(d):
                path[i, j, m] = q[j, m] / np.sqrt(q[j, j] * q[m, m])
        for j in range(d):
            for m in range(d):
                q[j, m] = (1.0 - a - b) * qbar[j, m] + a * eps[i, j] * eps[i, m] + b * q[j, m]
    return path


@njit(cache=True)
def _garch_nll_theta(theta, e, s0):
    """GARCH NLL on the unconstrained scale (log omega, logit s, logit r)."""
    omega = np.exp(theta[0])
    s = 1.0 / (1.0 + np.exp(-theta[1]))
    r = 1.0 / (1.0 + np.exp(-theta[2]))
    return _garch_nll(e, s0, omega, s * r, s * (1.0 - r))


@njit(cache=True)
def _dcc_nll_theta(theta, eps, qbar):
    s = 1.0 / (1.0 + np.exp(-theta[0]))
    r = 1.0 / (1.0 + np.exp(-theta[1]))
    return _dcc_nll(eps, qbar, s * r, s * (1.0 - r))


@njit(cache=True)
def _nm_garch(theta0, e, s0, xatol, fatol, maxiter):
    """Nelder-Mead (reflection/expansion/contraction/shrink) for the GARCH NLL."""
    n = theta0.shape[0]
    simplex = np.empty((n + 1, n))
    fvals = np.empty(n + 1)
    simplex[0] = theta0
    for i in range(n):
        simplex[i + 1] = theta0
        if theta0[i] != 0.0:
            simplex[i + 1, i] = theta0[i] * 1.05
        else:
            simplex[i + 1, i] = 0.00025
    for i in range(n + 1):
        fvals[i] = _garch_nll_theta(simplex[i], e, s0)

    it = 0
    while it < maxiter:
        order = np.argsort(fvals)
        simplex = simplex[order]
        fvals = fvals[order]
        spread_x = 0.0
        spread_f = 0.0
        for i in range(1, n + 1):
            spread_f = max(spread_f, abs(fvals[i] - fvals[0]))
            for j in range(n):
                spread_x = max(spread_x, abs(simplex[i, j] - simplex[0, j]))
        if spread_x <= xatol and spread_f <= fatol:
            break
        it += 1

        centroid = np.zeros(n)
        for i in range(n):
            centroid += simplex[i]
        centroid /= n

        xr = centroid + (centroid - simplex[n])
        fr = _garch_nll_theta(xr, e, s0)
        if fr < fvals[0]:
            xe = centroid + 2.0 * (centroid - simplex[n])
            fe = _garch_nll_theta(xe, e, s0)
            if fe < fr:
                simplex[n] = xe
                fvals[n] = fe
            else:
                simplex[n] = xr
                fvals[n] = fr
        elif fr < fvals[n - 1]:
            simplex[n] = xr
            fvals[n] = fr
        else:
            if fr < fvals[n]:
                xc = centroid + 0.5 * (xr - centroid)
            else:
                xc = centroid + 0.5 * (simplex[n] - centroid)
            fc = _garch_nll_theta(xc, e, s0)
            if fc < min(fr, fvals[n]):
                simplex[n] = xc
                fvals[n] = fc
            else:
                for i in range(1, n + 1):
                    simplex[i] = simplex[0] + 0.5 * (simplex[i] - simplex[0])
                    fvals[i] = _garch_nll_theta(simplex[i], e, s0)

    spread_f = 0.0
    for i in range(1, n + 1):
        spread_f = max(spread_f, abs(fvals[i] - fvals[0]))
    best = int(np.argmin(fvals))
    return simplex[best], fvals[best], it < maxiter, spread_f


@njit(cache=True)
def _nm_dcc(theta0, eps, qbar, xatol, fatol, maxiter):
    """Nelder-Mead specialization for the DCC correlation NLL."""
    n = theta0.shape[0]
    simplex = np.empty((n + 1, n))
    fvals = np.empty(n + 1)
    simplex[0] = theta0
    for i in range(n):
        simplex[i + 1] = theta0
        if theta0[i] != 0.0:
            simplex[i + 1, i] = theta0[i] * 1.05
        else:
            simplex[i + 1, i] = 0.00025
    for i in range(n + 1):
        fvals[i] = _dcc_nll_theta(simplex[i], eps, qbar)

    it = 0
    while it < maxiter:
        order = np.argsort(fvals)
        simplex = simplex[order]
        fvals = fvals[order]
        spread_x = 0.0
        spread_f = 0.0
        for i in range(1, n + 1):
            spread_f = max(spread_f, abs(fvals[i] - fvals[0]))
            for j in range(n):
                spread_x = max(spread_x, abs(simplex[i, j] - simplex[0, j]))
        if spread_x <= xatol and spread_f <= fatol:
            break
        it += 1

        centroid = np.zeros(n)
        for i in range(n):
            centroid += simplex[i]
        centroid /= n

        xr = centroid + (centroid - simplex[n])
        fr = _dcc_nll_theta(xr, eps, qbar)
        if fr < fvals[0]:
            xe = centroid + 2.0 * (centroid - simplex[n])
            fe = _dcc_nll_theta(xe, eps, qbar)
            if fe < fr:
                simplex[n] = xe
                fvals[n] = fe
            else:
                simplex[n] = xr
                fvals[n] = fr
        elif fr < fvals[n - 1]:
            simplex[n] = xr
            fvals[n] = fr
        else:
            if fr < fvals[n]:
                xc = centroid + 0.5 * (xr - centroid)
            else:
                xc = centroid + 0.5 * (simplex[n] - centroid)
            fc = _dcc_nll_theta(xc, eps, qbar)
            if fc < min(fr, fvals[n]):
                simplex[n] = xc
                fvals[n] = fc
            else:
                for i in range(1, n + 1):
                    simplex[i] = simplex[0] + 0.5 * (simplex[i] - simplex[0])
                    fvals[i] = _dcc_nll_theta(simplex[i], eps, qbar)

    spread_f = 0.0
    for i in range(1, n + 1):
        spread_f = max(spread_f, abs(fvals[i] - fvals[0]))
    best = int(np.argmin(fvals))
    return simplex[best], fvals[best], it < maxiter, spread_f


def conditional_variance_path(e: np.ndarray, omega: float, alpha: float, beta: float) -> np.ndarray:
    """Filtered sigma^2_t path seeded with the sample variance of e."""
    e = np.asarray(e, dtype=float)
    s0 = float(np.var(e, ddof=1))
    return _garch_recursion(e, s0, omega, alpha, beta)


def garch11_fit(series: np.ndarray, min_obs: int = 100, persistence_tol: float = 3.0) -> Garch11Fit:
    """Gaussian QML fit of GARCH(1,1) with variance-targeting initialization.

    The series is demeaned internally; sigma^2_1 equals the sample variance.
    Parameters are optimized through transforms that force omega > 0,
    alpha, beta >= 0 and alpha + beta < 1. When alpha is effectively zero
    the likelihood is flat in beta, so a fit that beats the constant-variance
    model by fewer than `persistence_tol` log-likelihood units collapses to
    (omega, 0, 0); set persistence_tol=0 to disable the guard.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise InputError("series must be one-dimensional")
    if not np.all(np.isfinite(x)):
        raise InputError("series contains non-finite values")
    if x.shape[0] < min_obs:
        raise InsufficientDataError(f"need at least {min_obs} observations, got {x.shape[0]}")

    mean = float(x.mean())
    e = x - mean
    var = float(np.var(e, ddof=1))
    if var <= 0:
        raise InputError("series is constant")

    def unpack(theta):
        omega = np.exp(theta[0])
        s = expit(theta[1])
        r = expit(theta[2])
        return float(omega), float(s * r), float(s * (1.0 - r))

    starts = [(0.05, 0.90), (0.10, 0.80), (0.02, 0.50)]
    best_theta, best_fun, any_success = None, np.inf, False
    for alpha0, beta0 in starts:
        s0 = alpha0 + beta0
        theta0 = np.array([np.log(var * (1.0 - s0)), logit(s0), logit(alpha0 / s0)])
        theta, fun, success, f_spread = _nm_garch(theta0, e, var, 1e-8, 1e-8, 2000)
        success = success or f_spread <= 1e-6  # flat likelihood ridge: optimum reached
        if fun < best_fun:
            best_theta, best_fun = theta, fun
        any_success = any_success or success
        if success:
            break
    if best_theta is None or not np.isfinite(best_fun):
        raise FitError("GARCH optimization produced no finite likelihood")
    if not any_success:
        raise FitError("GARCH simplex search hit its iteration cap from every start")

    omega, alpha, beta = unpack(best_theta)
    omega_const = float(np.mean(e**2))
    if persistence_tol > 0 and _garch_nll(e, var, omega_const, 0.0, 0.0) - best_fun < persistence_tol:
        omega, alpha, beta = omega_const, 0.0, 0.0
    sig2 = _garch_recursion(e, var, omega, alpha, beta)
    loglik = -0.5 * float(np.sum(np.log(2.0 * np.pi * sig2) + e**2 / sig2))
    return Garch11Fit(omega=omega, alpha=alpha, beta=beta, cond_var=sig2, mean=mean, loglik=loglik)


def dcc_fit(
    series: np.ndarray,
    fix_ab: tuple[float, float] | None = None,
    min_obs: int = 100,
    marginals: list[Garch11Fit | None] | None = None,
) -> DccFit:
    """Two-step DCC: GARCH(1,1) marginals, then (a, b) on standardized residuals.

    Q_t = (1-a-b) Qbar + a eps eps' + b Q_{t-1} started at the unconditional
    correlation Qbar; R_t normalizes Q_t and the covariance path is D R D.
    A solution with a + b near one is flagged as boundary, not fatal. Pass
    fix_ab to pin the dynamics instead of estimating them, and `marginals`
    to reuse already-fitted univariate models (None entries are fit here).
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 2 or x.shape[1] < 2:
        raise InputError("series must be T x d with d >= 2")
    if x.shape[0] < min_obs:
        raise InsufficientDataError(f"need at least {min_obs} observations, got {x.shape[0]}")

    t, d = x.shape
    if marginals is None:
        marginals = [None] * d
    if len(marginals) != d:
        raise InputError("marginals list length must match the number of columns")
    marginals = [
        m if m is not None else garch11_fit(x[:, j], min_obs=min_obs)
        for j, m in enumerate(marginals)
    ]
    sig = np.column_stack([np.sqrt(m.cond_var) for m in marginals])
    eps = np.column_stack([(x[:, j] - marginals[j].mean) for j in range(d)]) / sig

    qraw = eps.T @ eps / t
    scale = np.sqrt(np.diag(qraw))
    qbar = qraw / np.outer(scale, scale)

    if fix_ab is not None:
        a, b = float(fix_ab[0]), float(fix_ab[1])
        if a < 0 or b < 0 or a + b >= 1:
            raise InputError("fixed (a, b) must satisfy a, b >= 0 and a + b < 1")
        nll_val = _dcc_nll(eps, qbar, a, b)
    else:
        theta0 = np.array([logit(0.95), logit(0.05 / 0.95)])
        theta, nll_val, success, f_spread = _nm_dcc(theta0, eps, qbar, 1e-8, 1e-8, 2000)
        if not np.isfinite(nll_val):
            raise FitError("DCC optimization produced no finite likelihood")
        if not success and f_spread > 1e-6:
            raise FitError("DCC simplex search hit its iteration cap")
        s = expit(theta[0])
        r = expit(theta[1])
        a, b = float(s * r), float(s * (1.0 - r))

    boundary = a + b > 0.998
    if boundary:
        warnings.warn("DCC (a, b) estimate is at the stationarity boundary", RuntimeWarning)

    corr_path = _dcc_corr_path(eps, qbar, a, b)
    cov_path = corr_path * sig[:, :, None] * sig[:, None, :]
    return DccFit(
        marginals=marginals,
        a=a,
        b=b,
        qbar=qbar,
        corr_path=corr_path,
        cov_path=cov_path,
        loglik=-float(nll_val),
        boundary=boundary,
    )


def simulate_garch11(
    omega: float,
    alpha: float,
    beta: float,
    n: int,
    seed: int = 0,
    burn: int = 500,
) -> np.ndarray:
    """Simulate a Gaussian GARCH(1,1) series of length n."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(n + burn)
    out = np.empty(n + burn)
    s = omega / (1.0 - alpha - beta)
    for i in range(n + burn):
        out[i] = np.sqrt(s) * z[i]
        s = omega + alpha * out[i] ** 2 + beta * s
    return out[burn:]


def simulate_dcc(
    garch_params: list[tuple[float, float, float]],
    qbar: np.ndarray,
    a: float,
    b: float,
    n: int,
    seed: int = 0,
    burn: int = 500,
) -> np.ndarray:
    """Simulate a DCC-GARCH system with Gaussian shocks."""
    rng = np.random.default_rng(seed)
    d = len(garch_params)
    qbar = np.asarray(qbar, dtype=float)
    total = n + burn
    z = rng.standard_normal((total, d))
    x = np.empty((total, d))
    s = np.array([om / (1.0 - al - be) for om, al, be in garch_params])
    q = qbar.copy()
    for i in range(total):
        scale = np.sqrt(np.outer(np.diag(q), np.diag(q)))
        r = q / scale
        np.fill_diagonal(r, 1.0)
        lo = np.linalg.cholesky(r + CORR_RIDGE * np.eye(d))
        eps = lo @ z[i]
        x[i] = np.sqrt(s) * eps
        q = (1.0 - a - b) * qbar + a * np.outer(eps, eps) + b * q
        for j, (om, al, be) in enumerate(garch_params):
            s[j] = om + al * x[i, j] ** 2 + be * s[j]
    return x[burn:]
