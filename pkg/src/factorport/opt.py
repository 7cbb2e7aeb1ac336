"""Minimum-variance solvers: long-only, unconstrained and turnover-penalized.

The inequality-constrained problems run through a primal active-set
quadratic program started from a feasible point, with ties in constraint
selection broken by lowest index so solutions are deterministic. Covariances
are PSD-repaired (eigenvalue clip plus 1e-10 diagonal jitter) before
solving; factor-implied matrices can be numerically rank deficient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cov import CovarianceEstimate
from .errors import ConditioningError, FitError, InputError, ParameterError

DEFAULT_KAPPA = 0.0005  # 5 bps proportional trading penalty


@dataclass
class PortfolioWeights:
    """Solved weight vector with solver diagnostics."""

    weights: np.ndarray
    asof: str | None = None
    iterations: int = 0
    kkt_residual: float = 0.0

    def __post_init__(self):
        total = float(np.sum(self.weights))
        if abs(total - 1.0) > 1e-8:
            raise ValueError(f"weights sum to {total}, expected 1")


def _as_matrix(sigma) -> tuple[np.ndarray, str | None]:
    if isinstance(sigma, CovarianceEstimate):
        return np.asarray(sigma.matrix, dtype=float), sigma.asof
    return np.asarray(sigma, dtype=float), None


def _psd_repair(m: np.ndarray) -> np.ndarray:
    """Symmetrize, clip negative eigenvalues at zero, add 1e-10 jitter."""
    m = (m + m.T) / 2.0
    vals, vecs = np.linalg.eigh(m)
    if vals[0] < 0:
        m = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
        m = (m + m.T) / 2.0
    return m + 1e-10 * np.eye(m.shape[0])


def _active_set_qp(
    h: np.ndarray,
    g: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    x0: np.ndarray,
    max_iter: int | None = None,
    tol: float = 1e-11,
) -> tuple[np.ndarray, int]:
    """Minimize 0.5 x'Hx + g'x subject to Ax = b, x >= 0.

    H must be positive definite on the feasible subspace; x0 must be
    feasible. Uses a working set of active bounds with add/drop steps.
    """
    n = h.shape[0]
    m = a.shape[0]
    x = x0.astype(float).copy()
    active = x <= tol
    x[active] = 0.0
    if max_iter is None:
        max_iter = 50 * n + 100

    for it in range(1, max_iter + 1):
        free = np.nonzero(~active)[0]
        grad = h @ x + g
        nf = free.size

        if nf:
            kkt = np.zeros((nf + m, nf + m))
            kkt[:nf, :nf] = h[np.ix_(free, free)]
            kkt[:nf, nf:] = a[:, free].T
            kkt[nf:, :nf] = a[:, free]
            rhs = np.concatenate([-grad[free], np.zeros(m)])
            sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
            p_free = sol[:nf]
        else:
            p_free = np.zeros(0)

        p = np.zeros(n)
        p[free] = p_free
        scale = max(1.0, float(np.abs(x).max()))
        stationary = nf == 0 or float(np.abs(p_free).max()) <= 1e-12 * scale

        if stationary:
            # stationary on the working set; check bound multipliers
            if nf:
                nu, *_ = np.linalg.lstsq(a[:, free].T, grad[free], rcond=None)
            else:
                nu, *_ = np.linalg.lstsq(a.T, grad, rcond=None)
            mu = grad - a.T @ nu
            act_idx = np.nonzero(active)[0]
            if act_idx.size == 0:
                return x, it
            mu_act = mu[act_idx]
            worst = np.argmin(mu_act)  # argmin returns the lowest index on ties
            gtol = 1e-10 * max(1.0, float(np.abs(grad).max()))
            if mu_act[worst] >= -gtol:
                return x, it
            active[act_idx[worst]] = False
            continue

        # ratio test against the bounds that p decreases
        alpha = 1.0
        blocking = -1
        for i in free:
            if p[i] < -1e-14:
                ratio = x[i] / (-p[i])
                if ratio < alpha - 1e-15:
                    alpha = ratio
                    blocking = i
        x = x + alpha * p
        x[active] = 0.0
        if blocking >= 0:
            x[blocking] = 0.0
            active[blocking] = True

    raise FitError("active-set solver exceeded its iteration budget")


def _kkt_residual(h, g, a, b, x) -> float:
    """Max violation over stationarity, primal feasibility and complementarity."""
    grad = h @ x + g
    free = x > 1e-10
    if free.any():
        nu, *_ = np.linalg.lstsq(a[:, free].T, grad[free], rcond=None)
    else:
        nu, *_ = np.linalg.lstsq(a.T, grad, rcond=None)
    mu = grad - a.T @ nu
    res = max(
        float(np.max(np.abs(a @ x - b))),
        float(max(0.0, -x.min())) if x.size else 0.0,
        float(np.max(np.abs(mu[free]))) if free.any() else 0.0,
        float(max(0.0, -mu[~free].min())) if (~free).any() else 0.0,
        float(np.max(np.abs(mu * x))),
    )
    return res


def minvar_long_only(sigma, asof: str | None = None) -> PortfolioWeights:
    """Minimize w' Sigma w subject to sum(w) = 1, w >= 0."""
    m, tag = _as_matrix(sigma)
    if not np.all(np.isfinite(m)):
        raise InputError("covariance contains non-finite entries")
    n = m.shape[0]
    h = 2.0 * _psd_repair(m)
    g = np.zeros(n)
    a = np.ones((1, n))
    b = np.array([1.0])
    x0 = np.full(n, 1.0 / n)
    x, iters = _active_set_qp(h, g, a, b, x0)
    x = np.clip(x, 0.0, None)
    x /= x.sum()
    return PortfolioWeights(
        weights=x,
        asof=asof or tag,
        iterations=iters,
        kkt_residual=_kkt_residual(h, g, a, b, x),
    )


def minvar_unconstrained(sigma, asof: str | None = None, max_condition: float = 1e12) -> PortfolioWeights:
    """Closed-form w = Sigma^{-1} 1 / (1' Sigma^{-1} 1)."""
    m, tag = _as_matrix(sigma)
    if not np.all(np.isfinite(m)):
        raise InputError("covariance contains non-finite entries")
    m = (m + m.T) / 2.0
    cond = np.linalg.cond(m)
    if not np.isfinite(cond) or cond > max_condition:
        raise ConditioningError(f"covariance condition number {cond:.3e} exceeds {max_condition:.1e}")
    ones = np.ones(m.shape[0])
    y = np.linalg.solve(m, ones)
    w = y / (ones @ y)
    return PortfolioWeights(weights=w, asof=asof or tag, iterations=0, kkt_residual=0.0)


def minvar_turnover_penalized(
    sigma,
    omega0: np.ndarray,
    kappa: float = DEFAULT_KAPPA,
    asof: str | None = None,
) -> PortfolioWeights:
    """Minimize w' Sigma w + kappa ||w - w0||_1 over the long-only simplex.

    The l1 term is split as w - w0 = u - v with u, v >= 0, giving a smooth
    quadratic program in (w, u, v). kappa = 0 reduces exactly to the plain
    long-only problem.
    """
    m, tag = _as_matrix(sigma)
    if not np.all(np.isfinite(m)):
        raise InputError("covariance contains non-finite entries")
    if kappa < 0:
        raise ParameterError("kappa must be nonnegative")
    omega0 = np.asarray(omega0, dtype=float).ravel()
    n = m.shape[0]
    if omega0.shape[0] != n:
        raise ParameterError("omega0 length does not match the covariance dimension")
    if abs(omega0.sum() - 1.0) > 1e-6:
        raise ParameterError(f"omega0 sums to {omega0.sum()}, expected 1 within 1e-6")
    if kappa == 0.0:
        return minvar_long_only(sigma, asof=asof)

    sig = _psd_repair(m)
    h = np.zeros((3 * n, 3 * n))
    h[:n, :n] = 2.0 * sig
    h[n:, n:] = 1e-12 * np.eye(2 * n)  # keeps the KKT blocks nonsingular
    g = np.concatenate([np.zeros(n), np.full(2 * n, kappa)])

    a = np.zeros((n + 1, 3 * n))
    a[0, :n] = 1.0
    a[1:, :n] = np.eye(n)
    a[1:, n : 2 * n] = -np.eye(n)
    a[1:, 2 * n :] = np.eye(n)
    b = np.concatenate([[1.0], omega0])

    w_start = np.clip(omega0, 0.0, None)
    total = w_start.sum()
    w_start = np.full(n, 1.0 / n) if total <= 0 else w_start / total
    u0 = np.clip(w_start - omega0, 0.0, None)
    v0 = np.clip(omega0 - w_start, 0.0, None)
    x0 = np.concatenate([w_start, u0, v0])

    x, iters = _active_set_qp(h, g, a, b, x0)
    w = np.clip(x[:n], 0.0, None)
    w /= w.sum()
    return PortfolioWeights(
        weights=w,
        asof=asof or tag,
        iterations=iters,
        kkt_residual=_kkt_residual(h, g, a, b, x),
    )
