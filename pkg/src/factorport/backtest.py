"""Rolling-window engine: tuning, covariance assembly, optimization, bookkeeping.

Each window filters the universe, rank-transforms the in-window returns,
tunes hyperparameters on a training/validation split scored by realized
validation portfolio variance, refits on the full window, assembles the
requested covariance specification and solves for weights. Every quantity
used at a rebalance is computable from data dated no later than the window
end; the only forward look is the documented next-month-return universe
filter.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import autoenc, dimred
from .cov import (
    CovarianceEstimate,
    FactorModelFit,
    assemble_dynamic,
    compare_structure,
    dynamic_betas,
    factor_cov,
    ols_fit,
    residual_variances,
    sample_cov,
    static_factor_cov,
)
from .errors import (
    ConfigError,
    FactorportError,
    ParameterError,
    TuningError,
    UniverseError,
)
from .opt import DEFAULT_KAPPA, minvar_long_only, minvar_turnover_penalized, minvar_unconstrained
from .panel import (
    FactorSeries,
    ReturnsPanel,
    UniverseRules,
    WindowSpec,
    filter_universe,
    rank_transform,
    split_train_validation,
)
from .volatility import dcc_fit, garch11_fit

LATENT_METHODS = ("pca", "pls", "spca", "spls", "aen1", "aen2", "aen3", "aen4")
OBSERVED_METHODS = ("market", "ff3")
ALL_METHODS = ("ew", "sample") + OBSERVED_METHODS + LATENT_METHODS
COV_SPECS = ("static", "dyn_beta", "dyn_factor", "dyn_error")
OPTIMIZERS = ("long_only", "unconstrained", "turnover_penalized")

DEFAULT_K_GRID = (1, 2, 3, 4, 5)
DEFAULT_LAMBDA1_GRID = tuple(float(v) for v in np.logspace(-4, 0, 6))
DEFAULT_ETA_GRID = (0.0, 0.2, 0.4, 0.6, 0.8)


@dataclass
class StrategySpec:
    """One strategy: factor method x covariance spec x optimizer."""

    method: str
    cov_spec: str = "static"
    optimizer: str = "long_only"
    kappa: float = DEFAULT_KAPPA
    k_grid: tuple[int, ...] = DEFAULT_K_GRID
    lambda1_grid: tuple[float, ...] = DEFAULT_LAMBDA1_GRID
    lambda2: float = 1e-4
    eta_grid: tuple[float, ...] = DEFAULT_ETA_GRID
    ae_options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in ALL_METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if self.cov_spec not in COV_SPECS:
            raise ConfigError(f"unknown covariance spec {self.cov_spec!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.kappa < 0:
            raise ConfigError("kappa must be nonnegative")

    @property
    def name(self) -> str:
        if self.method in ("ew", "sample"):
            base = self.method
        else:
            base = f"{self.method}_{self.cov_spec}"
        if self.optimizer != "long_only" and self.method != "ew":
            base += f"_{self.optimizer}"
        return base

    def hyper_grid(self) -> list[dict]:
        if self.method in ("ew", "sample") + OBSERVED_METHODS:
            return [{}]
        if self.method == "spca":
            return [{"k": k, "lambda1": l1} for k in self.k_grid for l1 in self.lambda1_grid]
        if self.method == "spls":
            return [{"k": k, "eta": e} for k in self.k_grid for e in self.eta_grid]
        return [{"k": k} for k in self.k_grid]


@dataclass
class BacktestResult:
    """Per-rebalance records plus the realized out-of-sample return series."""

    strategy: str
    dates: list[str]
    universes: list[list[str]]
    weights: list[np.ndarray]
    returns: np.ndarray
    hyperparams: list[dict]
    turnover: np.ndarray  # aligned to dates[1:]
    structure: np.ndarray | None  # M x 3 (eig, mag, dir) vs the sample estimator
    gaps: list[str]
    seed: int
    config_hash: str


class _BasisTransformer:
    def __init__(self, basis: dimred.FactorBasis):
        self.basis = basis
        self.k = basis.n_components

    def transform(self, x: np.ndarray) -> np.ndarray:
        return dimred.project(x, self.basis)


class _AeTransformer:
    def __init__(self, params: autoenc.AutoencoderParams):
        self.params = params
        self.k = params.code_dim

    def transform(self, x: np.ndarray) -> np.ndarray:
        return autoenc.encode(self.params, x)


def _fill(x: np.ndarray, value: float | None = None) -> np.ndarray:
    """Replace NaN by a constant (default 0) or by column means."""
    out = np.array(x, dtype=float)
    mask = ~np.isfinite(out)
    if not mask.any():
        return out
    if value is None:
        means = np.nanmean(out, axis=0)
        out[mask] = np.take(means, np.nonzero(mask)[1])
    else:
        out[mask] = value
    return out


def _fit_transformer(
    method: str,
    x: np.ndarray,
    r: np.ndarray,
    hyper: dict,
    strategy: StrategySpec,
    seed: int,
    monitor: np.ndarray | None = None,
):
    """Fit one extractor; x and r must be complete matrices."""
    k = int(hyper.get("k", 1))
    if method == "pca":
        return _BasisTransformer(dimred.pca_fit(x, k))
    if method == "pls":
        return _BasisTransformer(dimred.simpls_fit(x, r, k))
    if method == "spca":
        params = dimred.SparsityParams(lambda1=float(hyper["lambda1"]), lambda2=strategy.lambda2)
        return _BasisTransformer(dimred.spca_fit(x, k, params))
    if method == "spls":
        return _BasisTransformer(dimred.spls_fit(x, r, k, float(hyper["eta"])))
    if method.startswith("aen"):
        depth = int(method[3:])
        options = {
            "activity_l1": 1e-5,
            "activity_l2": 1e-5,
            "max_epochs": 200,
            "patience": 10,
        }
        options.update(strategy.ae_options)
        spec = autoenc.AutoencoderSpec(
            input_dim=x.shape[1], code_dim=k, depth=depth, seed=seed, **options
        )
        stop = monitor if monitor is not None else x
        return _AeTransformer(autoenc.train(spec, x, stop))
    raise ConfigError(f"method {method!r} is not a latent extractor")


def _sparsity_of(hyper: dict) -> float:
    return float(hyper.get("lambda1", hyper.get("eta", 0.0)))


def validate_select(
    r_window: np.ndarray,
    x_window: np.ndarray,
    method: str,
    grid: list[dict],
    strategy: StrategySpec,
    validation_fraction: float = 0.2,
    seed: int = 0,
) -> dict:
    """Choose hyperparameters by realized validation portfolio variance.

    For each grid point the extractor and loadings are fit on the training
    block and scored by w' Sigma_V w, where Sigma_V combines a
    validation-refit basis and loadings with the full sample covariance of
    the residuals that the training-fit parameters produce on the
    validation observations. Ties break toward smaller K, then the larger
    sparsity penalty.
    """
    if not grid:
        raise ConfigError("hyperparameter grid is empty")
    t0 = r_window.shape[0]
    train_idx, val_idx = split_train_validation(list(range(t0)), validation_fraction)
    r_j, r_v = r_window[train_idx], r_window[val_idx]
    x_j, x_v = x_window[train_idx], x_window[val_idx]

    scored = []
    failures = []
    for hyper in grid:
        try:
            tr_j = _fit_transformer(method, x_j, r_j, hyper, strategy, seed, monitor=x_v)
            f_j = tr_j.transform(x_j)
            fit_j = ols_fit(r_j, f_j)
            sigma_j = static_factor_cov(fit_j, f_j)
            w = minvar_long_only(sigma_j).weights

            tr_v = _fit_transformer(method, x_v, r_v, hyper, strategy, seed, monitor=x_v)
            f_v = tr_v.transform(x_v)
            fit_v = ols_fit(r_v, f_v)
            sigma_f_v = factor_cov(f_v)
            f_j_on_v = tr_j.transform(x_v)
            resid_v = r_v - (fit_j.intercepts + f_j_on_v @ fit_j.loadings)
            # full covariance of the out-of-sample residuals: a diagonal here
            # would let diversification hide misattributed common variance
            # and systematically favor too few factors
            sigma_u_v = sample_cov(resid_v).matrix
            sigma_v = fit_v.loadings.T @ sigma_f_v @ fit_v.loadings + sigma_u_v
            score = float(w @ sigma_v @ w)
            scored.append((score, int(hyper.get("k", 0)), -_sparsity_of(hyper), hyper))
        except FactorportError as exc:
            failures.append(f"{hyper}: {type(exc).__name__}: {exc}")
    if not scored:
        raise TuningError("every grid point failed:\n  " + "\n  ".join(failures))
    scored.sort(key=lambda item: item[:3])
    return scored[0][3]


def _strategy_hash(strategy: StrategySpec, window: WindowSpec, rules: UniverseRules, seed: int) -> str:
    payload = json.dumps(
        {
            "strategy": {
                "method": strategy.method,
                "cov_spec": strategy.cov_spec,
                "optimizer": strategy.optimizer,
                "kappa": strategy.kappa,
                "k_grid": list(strategy.k_grid),
                "lambda1_grid": list(strategy.lambda1_grid),
                "lambda2": strategy.lambda2,
                "eta_grid": list(strategy.eta_grid),
                "ae_options": strategy.ae_options,
            },
            "window": [window.length, window.step, window.validation_fraction],
            "rules": [
                rules.min_history_fraction,
                rules.min_price,
                rules.top_n_by_cap,
                rules.require_next_return,
            ],
            "seed": seed,
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


class _MethodProducts:
    """Per-window artifacts shared by every covariance spec of one method."""

    def __init__(self, transformer, factors, fit: FactorModelFit, hyper: dict):
        self.transformer = transformer
        self.factors = factors  # T0 x K
        self.fit = fit
        self.hyper = hyper
        self._resid_var = None
        self._factor_cov = None

    @property
    def resid_var(self):
        if self._resid_var is None:
            self._resid_var = residual_variances(self.fit.residuals)
        return self._resid_var

    @property
    def factor_cov(self):
        if self._factor_cov is None:
            self._factor_cov = factor_cov(self.factors)
        return self._factor_cov


def _compute_method(
    method: str,
    strategy: StrategySpec,
    r_win: np.ndarray,
    x_filled: np.ndarray,
    r_filled: np.ndarray,
    f_observed: np.ndarray | None,
    validation_fraction: float,
    seed: int,
) -> _MethodProducts:
    if method in OBSERVED_METHODS:
        fit = ols_fit(r_win, f_observed)
        return _MethodProducts(None, f_observed, fit, {})

    grid = strategy.hyper_grid()
    if len(grid) == 1:
        chosen = grid[0]
    else:
        chosen = validate_select(
            r_filled, x_filled, method, grid, strategy, validation_fraction, seed
        )
    t0 = x_filled.shape[0]
    _, val_idx = split_train_validation(list(range(t0)), validation_fraction)
    transformer = _fit_transformer(
        method, x_filled, r_filled, chosen, strategy, seed, monitor=x_filled[val_idx]
    )
    factors = transformer.transform(x_filled)
    fit = ols_fit(r_win, factors)
    return _MethodProducts(transformer, factors, fit, chosen)


def _build_covariance(
    products: _MethodProducts,
    cov_spec: str,
    r_filled: np.ndarray,
    asof: str,
    dcc_cache: dict,
) -> CovarianceEstimate:
    fit, f = products.fit, products.factors
    if cov_spec == "static":
        return static_factor_cov(fit, f, asof=asof)
    if cov_spec == "dyn_factor":
        t, k = f.shape
        if k == 1:
            g = garch11_fit(f[:, 0])
            path = g.cond_var.reshape(t, 1, 1)
        else:
            path = dcc_fit(f).cov_path
        return assemble_dynamic(
            "dyn_factor",
            loadings=fit.loadings,
            factor_cov_path=path,
            resid_var=products.resid_var,
            asof=asof,
        )
    if cov_spec == "dyn_error":
        u = _fill(fit.residuals, 0.0)
        path = np.column_stack([garch11_fit(u[:, i]).cond_var for i in range(u.shape[1])])
        return assemble_dynamic(
            "dyn_error",
            loadings=fit.loadings,
            factor_cov_static=products.factor_cov,
            resid_var_path=path,
            asof=asof,
        )
    if cov_spec == "dyn_beta":
        k, n = fit.loadings.shape
        factor_marginals = dcc_cache.setdefault(
            "factor_marginals", [garch11_fit(f[:, j]) for j in range(k)]
        )
        t = f.shape[0]
        beta_path = np.empty((t, k, n))
        for i in range(n):
            betas, _ = dynamic_betas(r_filled[:, i], f, factor_marginals=factor_marginals)
            beta_path[:, :, i] = betas
        return assemble_dynamic(
            "dyn_beta",
            beta_path=beta_path,
            factor_cov_static=products.factor_cov,
            resid_var=products.resid_var,
            asof=asof,
        )
    raise ConfigError(f"unknown covariance spec {cov_spec!r}")


def _drift_weights(
    prev: dict[str, float],
    panel: ReturnsPanel,
    start: int,
    end: int,
) -> dict[str, float]:
    """Drift-adjust holdings from date index `start` through `end` inclusive."""
    drifted = {}
    total = 0.0
    for asset, w in prev.items():
        col = panel.asset_loc(asset)
        growth = 1.0
        for t in range(start, end + 1):
            r = panel.returns[t, col]
            if np.isfinite(r):
                growth *= 1.0 + r
        value = w * growth
        drifted[asset] = value
        total += value
    if total <= 0:
        return dict(prev)
    return {a: v / total for a, v in drifted.items()}


def run_backtests(
    panel: ReturnsPanel,
    strategies: list[StrategySpec],
    window: WindowSpec | None = None,
    rules: UniverseRules | None = None,
    factor_series: FactorSeries | None = None,
    seed: int = 0,
    progress=None,
    rank_within: str = "cross_section",
) -> dict[str, BacktestResult]:
    """Run several strategies over one pass of the rolling windows.

    Factor extraction, tuning and model fits are shared across strategies
    with the same method, so adding covariance specifications is cheap.
    Windows with an insufficient universe are skipped and logged as gaps,
    never filled. rank_within selects the predictor rank transform:
    "cross_section" (default) ranks within each date, "time_series" within
    each asset's window.
    """
    window = window or WindowSpec()
    rules = rules or UniverseRules()
    if rank_within not in ("cross_section", "time_series"):
        raise ConfigError(f"rank_within must be cross_section or time_series, got {rank_within!r}")
    rank_axis = 1 if rank_within == "cross_section" else 0
    names = [s.name for s in strategies]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate strategy names: {sorted(names)}")
    for s in strategies:
        if s.method in OBSERVED_METHODS and factor_series is None:
            raise ConfigError(f"strategy {s.name} needs a factor series input")

    t_total = panel.n_dates
    if t_total < window.length + 1:
        raise ConfigError(
            f"panel has {t_total} dates; need at least window length + 1 = {window.length + 1}"
        )

    state: dict[str, dict] = {
        s.name: {
            "dates": [],
            "universes": [],
            "weights": [],
            "returns": [],
            "hyper": [],
            "structure": [],
            "turnover": [],
            "gaps": [],
            "prev": None,  # (dict asset -> weight, date index)
        }
        for s in strategies
    }

    ends = range(window.length - 1, t_total - 1, window.step)
    for w_idx, e in enumerate(ends):
        date_e = panel.dates[e]
        try:
            universe = filter_universe(panel, date_e, rules, window.length)
        except UniverseError:
            for s in strategies:
                state[s.name]["gaps"].append(date_e)
            continue

        cols = [panel.asset_loc(a) for a in universe]
        start = e - window.length + 1
        r_win = panel.returns[np.ix_(range(start, e + 1), cols)]
        r_next = panel.returns[e + 1, cols]
        x_win = rank_transform(r_win, axis=rank_axis)
        x_filled = _fill(x_win, 0.0)
        r_filled = _fill(r_win, None)
        window_seed = seed * 100_003 + w_idx

        sample_est = None
        method_cache: dict[str, _MethodProducts] = {}
        cov_cache: dict[tuple[str, str], CovarianceEstimate] = {}
        dcc_cache: dict[str, dict] = {}

        def get_sample():
            nonlocal sample_est
            if sample_est is None:
                sample_est = sample_cov(r_win, asof=date_e)
            return sample_est

        for s in strategies:
            rec = state[s.name]
            try:
                if s.method == "ew":
                    n = len(universe)
                    weights = np.full(n, 1.0 / n)
                    sigma = None
                    hyper = {}
                elif s.method == "sample":
                    sigma = get_sample()
                    hyper = {}
                else:
                    if s.method not in method_cache:
                        f_obs = None
                        if s.method in OBSERVED_METHODS:
                            n_cols = 1 if s.method == "market" else 3
                            f_obs = factor_series.rows_for(panel.dates[start : e + 1], n_cols)
                        method_cache[s.method] = _compute_method(
                            s.method,
                            s,
                            r_win,
                            x_filled,
                            r_filled,
                            f_obs,
                            window.validation_fraction,
                            window_seed,
                        )
                    products = method_cache[s.method]
                    hyper = products.hyper
                    key = (s.method, s.cov_spec)
                    if key not in cov_cache:
                        cov_cache[key] = _build_covariance(
                            products,
                            s.cov_spec,
                            r_filled,
                            date_e,
                            dcc_cache.setdefault(s.method, {}),
                        )
                    sigma = cov_cache[key]

                if s.method != "ew":
                    weights = _solve(s, sigma, rec, universe, panel, e)
            except FactorportError as exc:
                raise FactorportError(f"window {date_e}, strategy {s.name}: {exc}") from exc

            realized = float(np.nansum(weights * np.where(np.isfinite(r_next), r_next, 0.0)))

            if rec["prev"] is not None:
                prev_w, prev_e = rec["prev"]
                drifted = _drift_weights(prev_w, panel, prev_e + 1, e)
                held = sorted(set(drifted) | set(universe))  # fixed order keeps float sums reproducible
                new_w = dict(zip(universe, weights))
                to = sum(abs(new_w.get(a, 0.0) - drifted.get(a, 0.0)) for a in held)
                rec["turnover"].append(to)

            if s.method in ("ew", "sample"):
                rec["structure"].append(None)
            else:
                comp = compare_structure(sigma, get_sample())
                rec["structure"].append((comp.eig, comp.mag, comp.dir))

            rec["dates"].append(date_e)
            rec["universes"].append(list(universe))
            rec["weights"].append(weights)
            rec["returns"].append(realized)
            rec["hyper"].append(dict(hyper))
            rec["prev"] = (dict(zip(universe, weights)), e)

        if progress is not None:
            progress(w_idx, date_e)

    results = {}
    for s in strategies:
        rec = state[s.name]
        structure = None
        if any(v is not None for v in rec["structure"]):
            structure = np.array([v for v in rec["structure"] if v is not None])
        results[s.name] = BacktestResult(
            strategy=s.name,
            dates=rec["dates"],
            universes=rec["universes"],
            weights=rec["weights"],
            returns=np.array(rec["returns"]),
            hyperparams=rec["hyper"],
            turnover=np.array(rec["turnover"]),
            structure=structure,
            gaps=rec["gaps"],
            seed=seed,
            config_hash=_strategy_hash(s, window, rules, seed),
        )
    return results


def _solve(strategy, sigma, rec, universe, panel, e) -> np.ndarray:
    if strategy.optimizer == "unconstrained":
        return minvar_unconstrained(sigma).weights
    if strategy.optimizer == "turnover_penalized" and rec["prev"] is not None:
        prev_w, prev_e = rec["prev"]
        drifted = _drift_weights(prev_w, panel, prev_e + 1, e)
        omega0 = np.array([drifted.get(a, 0.0) for a in universe])
        total = omega0.sum()
        omega0 = np.full(len(universe), 1.0 / len(universe)) if total <= 0 else omega0 / total
        return minvar_turnover_penalized(sigma, omega0, kappa=strategy.kappa).weights
    return minvar_long_only(sigma).weights


def run_backtest(
    panel: ReturnsPanel,
    strategy: StrategySpec,
    window: WindowSpec | None = None,
    rules: UniverseRules | None = None,
    factor_series: FactorSeries | None = None,
    seed: int = 0,
) -> BacktestResult:
    """Single-strategy wrapper over run_backtests."""
    return run_backtests(panel, [strategy], window, rules, factor_series, seed)[strategy.name]


def turnover_series(result: BacktestResult, panel: ReturnsPanel) -> tuple[list[str], np.ndarray]:
    """Turnover per rebalance after the first: ||w_t+1 - drift(w_t)||_1.

    Pre-rebalance weights drift with realized returns between consecutive
    rebalances; exited assets count as fully sold and entrants as fully
    bought.
    """
    if len(result.dates) < 2:
        return [], np.zeros(0)
    out = []
    for k in range(1, len(result.dates)):
        prev_w = dict(zip(result.universes[k - 1], result.weights[k - 1]))
        prev_e = panel.date_loc(result.dates[k - 1])
        cur_e = panel.date_loc(result.dates[k])
        drifted = _drift_weights(prev_w, panel, prev_e + 1, cur_e)
        new_w = dict(zip(result.universes[k], result.weights[k]))
        held = sorted(set(drifted) | set(new_w))
        out.append(sum(abs(new_w.get(a, 0.0) - drifted.get(a, 0.0)) for a in held))
    return result.dates[1:], np.array(out)


def apply_transaction_costs(returns: np.ndarray, turnover: np.ndarray, c: float) -> np.ndarray:
    """Net returns (1 + r)(1 - c TO) - 1, elementwise."""
    r = np.asarray(returns, dtype=float).ravel()
    to = np.asarray(turnover, dtype=float).ravel()
    if c < 0:
        raise ParameterError("cost rate must be nonnegative")
    if r.shape != to.shape:
        raise ParameterError("returns and turnover must have equal lengths")
    if c == 0:
        return r.copy()
    return (1.0 + r) * (1.0 - c * to) - 1.0


@dataclass
class WeightStats:
    """Averages over rebalances of the weight-vector diagnostics."""

    max_weight: float
    sd: float
    mad_ew: float
    avg_turnover: float


def weight_stats(result: BacktestResult) -> WeightStats:
    """Average MAX, cross-sectional SD, MAD from equal weights and turnover."""
    if not result.weights:
        raise ParameterError("empty weight history")
    maxes, sds, mads = [], [], []
    for w in result.weights:
        n = w.shape[0]
        maxes.append(float(w.max()))
        sds.append(float(np.std(w, ddof=1)) if n > 1 else 0.0)
        mads.append(float(np.abs(w - 1.0 / n).mean()))
    avg_to = float(result.turnover.mean()) if result.turnover.size else 0.0
    return WeightStats(
        max_weight=float(np.mean(maxes)),
        sd=float(np.mean(sds)),
        mad_ew=float(np.mean(mads)),
        avg_turnover=avg_to,
    )
