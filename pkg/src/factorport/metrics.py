"""Out-of-sample performance and significance statistics.

Everything here works in decimal monthly units; scaling to percent (and
basis points for breakeven costs) belongs to the reporting layer. VaR and
CVaR follow the Gaussian quantile formulas; the difference tests use a
paired circular block bootstrap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .errors import InsufficientDataError, ParameterError, UndefinedError


@dataclass
class PerfSummary:
    """First-pass performance numbers for one excess-return series."""

    mean: float
    sd: float
    sr: float
    mad: float


def perf_summary(excess: np.ndarray) -> PerfSummary:
    """Mean, standard deviation (divisor T-1), Sharpe ratio and MAD."""
    x = np.asarray(excess, dtype=float).ravel()
    if x.size < 2:
        raise InsufficientDataError("need at least two observations")
    mean = float(x.mean())
    sd = float(np.std(x, ddof=1))
    if sd <= 0:
        raise UndefinedError("Sharpe ratio is undefined for a constant series")
    mad = float(np.abs(x - mean).mean())
    return PerfSummary(mean=mean, sd=sd, sr=mean / sd, mad=mad)


def _phi(z: float) -> float:
    return float(np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi))


def var_cvar(mean: float, sd: float, a: float = 0.95) -> tuple[float, float]:
    """Gaussian VaR and CVaR of losses at confidence a.

    VaR = -z_a sd - mean and CVaR = phi(z_a) sd / (1 - a) - mean with
    z_a the (1 - a) standard-normal quantile.
    """
    if sd < 0:
        raise ParameterError("sd must be nonnegative")
    if not 0.0 < a < 1.0:
        raise ParameterError("a must lie in (0, 1)")
    z = float(ndtri(1.0 - a))
    var = -z * sd - mean
    cvar = _phi(z) * sd / (1.0 - a) - mean
    return var, cvar


def cer(excess: np.ndarray, gamma: float) -> float:
    """Certainty equivalent return mean - 0.5 gamma variance (divisor T-1)."""
    x = np.asarray(excess, dtype=float).ravel()
    if x.size < 2:
        raise InsufficientDataError("need at least two observations")
    return float(x.mean() - 0.5 * gamma * np.var(x, ddof=1))


def cer_from_moments(mean: float, sd: float, gamma: float) -> float:
    return mean - 0.5 * gamma * sd * sd


def delta_cer(strategy: np.ndarray, benchmark: np.ndarray, gamma: float) -> float:
    """CER difference of a strategy against a benchmark series."""
    return cer(strategy, gamma) - cer(benchmark, gamma)


def breakeven_cost(sr_p: float, sr_bench: float, to_p: float, to_bench: float) -> float:
    """Breakeven transaction cost in basis points.

    Turnover inputs are monthly percentages (the table convention); the
    result is (delta SR / delta TO) scaled to basis points.
    """
    dto = to_p - to_bench
    if dto == 0:
        raise UndefinedError("breakeven cost is undefined when turnovers are equal")
    return (sr_p - sr_bench) / dto * 1e4


def _statistic(name: str, x: np.ndarray, gamma: float) -> float:
    if name == "sd":
        return float(np.std(x, ddof=1))
    if name == "sr":
        sd = float(np.std(x, ddof=1))
        if sd <= 0:
            raise UndefinedError("Sharpe ratio undefined on a constant resample")
        return float(x.mean()) / sd
    if name == "cer":
        return float(x.mean() - 0.5 * gamma * np.var(x, ddof=1))
    raise ParameterError(f"unknown statistic {name!r}")


def bootstrap_diff_test(
    series_a: np.ndarray,
    series_b: np.ndarray,
    statistic: str = "sd",
    block_length: int = 12,
    n_resamples: int = 2000,
    seed: int = 0,
    gamma: float = 5.0,
) -> float:
    """Two-sided p-value for equality of a statistic across paired series.

    Circular block bootstrap with shared block indices, so the pairing
    (common market months) survives resampling. Requires series of length
    at least 4 x block_length.
    """
    a = np.asarray(series_a, dtype=float).ravel()
    b = np.asarray(series_b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ParameterError("series must have equal lengths")
    t = a.size
    if block_length < 1:
        raise ParameterError("block_length must be >= 1")
    if t < 4 * block_length:
        raise ParameterError(f"need length >= {4 * block_length}, got {t}")

    observed = _statistic(statistic, a, gamma) - _statistic(statistic, b, gamma)
    rng = np.random.default_rng(seed)
    n_blocks = int(np.ceil(t / block_length))
    offsets = np.arange(block_length)
    count = 0
    for _ in range(n_resamples):
        starts = rng.integers(0, t, size=n_blocks)
        idx = ((starts[:, None] + offsets[None, :]) % t).ravel()[:t]
        boot = _statistic(statistic, a[idx], gamma) - _statistic(statistic, b[idx], gamma)
        if abs(boot - observed) >= abs(observed):
            count += 1
    return (1.0 + count) / (n_resamples + 1.0)
