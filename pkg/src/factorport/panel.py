"""Return-panel loading, universe filtering, transforms and synthetic data.

A panel is a dated T x N matrix of simple monthly returns in decimal units,
with NaN marking missing cells. Prices and market caps ride along as optional
same-shaped matrices and drive the universe filters.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import PanelParseError, SplitError, UniverseError

DATE_FORMAT = "YYYY-MM"


@dataclass
class WindowSpec:
    """Rolling-window geometry: 240-month windows stepping one month."""

    length: int = 240
    step: int = 1
    validation_fraction: float = 0.2

    def __post_init__(self):
        if self.length < 2:
            raise ValueError("window length must be >= 2")
        if self.step < 1:
            raise ValueError("step must be >= 1")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in (0, 1)")


@dataclass
class UniverseRules:
    """Eligibility filters applied at each rebalance date."""

    min_history_fraction: float = 0.975
    min_price: float = 5.0
    top_n_by_cap: int = 100
    require_next_return: bool = True

    def __post_init__(self):
        if not 0.0 < self.min_history_fraction <= 1.0:
            raise ValueError("min_history_fraction must lie in (0, 1]")
        if self.top_n_by_cap < 1:
            raise ValueError("top_n_by_cap must be >= 1")


@dataclass
class ReturnsPanel:
    """Long-form return data pivoted to a dense date x asset layout.

    dates are YYYY-MM strings, strictly increasing; returns[t, i] is the
    simple return of assets[i] over month dates[t], NaN when missing.
    """

    dates: list[str]
    assets: list[str]
    returns: np.ndarray
    prices: np.ndarray | None = None
    market_caps: np.ndarray | None = None
    _date_index: dict[str, int] = field(init=False, repr=False)
    _asset_index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if list(self.dates) != sorted(set(self.dates)):
            raise ValueError("dates must be strictly increasing and unique")
        t, n = self.returns.shape
        if t != len(self.dates) or n != len(self.assets):
            raise ValueError("returns shape does not match dates/assets")
        present = self.returns[np.isfinite(self.returns)]
        if present.size and present.min() <= -1.0:
            raise ValueError("simple returns must exceed -1")
        self._date_index = {d: i for i, d in enumerate(self.dates)}
        self._asset_index = {a: i for i, a in enumerate(self.assets)}

    @property
    def n_dates(self) -> int:
        return len(self.dates)

    @property
    def n_assets(self) -> int:
        return len(self.assets)

    def date_loc(self, date: str) -> int:
        try:
            return self._date_index[date]
        except KeyError:
            raise KeyError(f"date {date!r} not in panel") from None

    def asset_loc(self, asset: str) -> int:
        try:
            return self._asset_index[asset]
        except KeyError:
            raise KeyError(f"asset {asset!r} not in panel") from None

    def to_csv(self, path) -> None:
        """Write the panel back to the long-form CSV schema."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            cols = ["date", "asset", "return"]
            if self.prices is not None:
                cols.append("price")
            if self.market_caps is not None:
                cols.append("market_cap")
            writer.writerow(cols)
            for t, date in enumerate(self.dates):
                for i, asset in enumerate(self.assets):
                    row = [date, asset, _fmt(self.returns[t, i])]
                    if self.prices is not None:
                        row.append(_fmt(self.prices[t, i]))
                    if self.market_caps is not None:
                        row.append(_fmt(self.market_caps[t, i]))
                    if row[2] == "" and all(v == "" for v in row[3:]):
                        continue
                    writer.writerow(row)


def _fmt(x: float) -> str:
    return "" if not np.isfinite(x) else repr(float(x))


DEFAULT_SCHEMA = {
    "date": "date",
    "asset": "asset",
    "return": "return",
    "price": "price",
    "market_cap": "market_cap",
}


def load_panel(path, schema: dict[str, str] | None = None) -> ReturnsPanel:
    """Read a long-form CSV (`date,asset,return[,price,market_cap]`).

    Missing values are empty fields and stay missing; rows are sorted by
    date then asset. Raises PanelParseError with the offending line number
    for malformed rows and for duplicate (date, asset) pairs.
    """
    colmap = dict(DEFAULT_SCHEMA)
    if schema:
        colmap.update(schema)

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PanelParseError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        idx = {}
        for key in ("date", "asset", "return"):
            name = colmap[key]
            if name not in header:
                raise PanelParseError(f"{path}: required column {name!r} missing")
            idx[key] = header.index(name)
        for key in ("price", "market_cap"):
            name = colmap[key]
            idx[key] = header.index(name) if name in header else None

        records: dict[tuple[str, str], tuple] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(header):
                raise PanelParseError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            date = row[idx["date"]].strip()
            asset = row[idx["asset"]].strip()
            if not date or not asset:
                raise PanelParseError(f"{path}:{lineno}: empty date or asset")
            key = (date, asset)
            if key in records:
                raise PanelParseError(f"{path}:{lineno}: duplicate (date, asset) pair {key}")
            try:
                ret = _parse_cell(row[idx["return"]])
                price = _parse_cell(row[idx["price"]]) if idx["price"] is not None else np.nan
                cap = _parse_cell(row[idx["market_cap"]]) if idx["market_cap"] is not None else np.nan
            except ValueError as exc:
                raise PanelParseError(f"{path}:{lineno}: {exc}") from None
            records[key] = (ret, price, cap)

    if not records:
        raise PanelParseError(f"{path}: no data rows")

    dates = sorted({d for d, _ in records})
    assets = sorted({a for _, a in records})
    t, n = len(dates), len(assets)
    returns = np.full((t, n), np.nan)
    prices = np.full((t, n), np.nan)
    caps = np.full((t, n), np.nan)
    drow = {d: i for i, d in enumerate(dates)}
    acol = {a: j for j, a in enumerate(assets)}
    for (d, a), (ret, price, cap) in records.items():
        returns[drow[d], acol[a]] = ret
        prices[drow[d], acol[a]] = price
        caps[drow[d], acol[a]] = cap

    has_price = np.isfinite(prices).any()
    has_cap = np.isfinite(caps).any()
    return ReturnsPanel(
        dates=dates,
        assets=assets,
        returns=returns,
        prices=prices if has_price else None,
        market_caps=caps if has_cap else None,
    )


def _parse_cell(text: str) -> float:
    text = text.strip()
    if not text:
        return np.nan
    return float(text)


def filter_universe(
    panel: ReturnsPanel,
    window_end: str,
    rules: UniverseRules,
    window_length: int = 240,
) -> list[str]:
    """Assets eligible at `window_end` for a window of `window_length` months.

    An asset must have at least min_history_fraction of in-window returns,
    a price strictly above min_price at the window end and, when
    require_next_return is on, a return the month after. Survivors are
    ranked by market cap at the window end (ties broken by asset id) and
    truncated to top_n_by_cap. Output ordering follows that ranking, so it
    does not depend on the panel's asset ordering.
    """
    end = panel.date_loc(window_end)
    start = end - window_length + 1
    if start < 0:
        raise UniverseError(f"window_end {window_end} has fewer than {window_length} dates of history")

    window = panel.returns[start : end + 1]
    history = np.isfinite(window).sum(axis=0) / float(window_length)
    ok = history >= rules.min_history_fraction

    if panel.prices is not None:
        price = panel.prices[end]
        ok &= np.isfinite(price) & (price > rules.min_price)

    if rules.require_next_return:
        if end + 1 >= panel.n_dates:
            ok &= False
        else:
            ok &= np.isfinite(panel.returns[end + 1])

    eligible = [i for i in np.nonzero(ok)[0]]
    if panel.market_caps is not None:
        cap = panel.market_caps[end]
        # NaN caps sort last; asset id breaks exact ties deterministically
        eligible.sort(key=lambda i: (-(cap[i] if np.isfinite(cap[i]) else -np.inf), panel.assets[i]))
        eligible = eligible[: rules.top_n_by_cap]
    else:
        eligible.sort(key=lambda i: panel.assets[i])

    if len(eligible) < 2:
        raise UniverseError(
            f"only {len(eligible)} assets survive the filters at {window_end}; need at least 2"
        )
    return [panel.assets[i] for i in eligible]


def rank_transform(x: np.ndarray, axis: int = 1) -> np.ndarray:
    """Replace each slice's present values by rank/count - 0.5.

    With the default axis=1 the transform is cross-sectional: within each
    date, values become average ranks divided by the number of present
    values, shifted to (-0.5, 0.5]. Missing cells stay missing and a
    strictly monotone transform of the inputs leaves the output unchanged.
    Pass axis=0 to rank within each asset's time series instead.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValueError("expected a 2-d matrix")
    moved = np.moveaxis(x, axis, -1)
    counts = np.isfinite(moved).sum(axis=-1, keepdims=True)
    if (counts == 0).any():
        bad = int(np.nonzero(counts[:, 0] == 0)[0][0])
        raise ValueError(f"slice {bad} has no present values")
    ranks = rankdata(moved, method="average", axis=-1, nan_policy="omit")
    return np.moveaxis(ranks / counts - 0.5, -1, axis)


def split_train_validation(dates: list, fraction: float) -> tuple[list, list]:
    """Split a window's dates into contiguous training and validation blocks.

    The validation block is the final ceil(fraction * T0) dates; both blocks
    must be nonempty.
    """
    if not 0.0 < fraction < 1.0:
        raise SplitError(f"fraction must lie strictly inside (0, 1), got {fraction}")
    t0 = len(dates)
    n_val = math.ceil(fraction * t0)
    n_train = t0 - n_val
    if n_train < 1 or n_val < 1:
        raise SplitError(f"split of {t0} dates at fraction {fraction} leaves an empty block")
    return list(dates[:n_train]), list(dates[n_train:])


@dataclass
class FactorSeries:
    """Observed factor returns: dates x named columns, NaN for missing."""

    dates: list[str]
    names: list[str]
    values: np.ndarray
    _date_index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if list(self.dates) != sorted(set(self.dates)):
            raise ValueError("dates must be strictly increasing and unique")
        if self.values.shape != (len(self.dates), len(self.names)):
            raise ValueError("values shape does not match dates/names")
        self._date_index = {d: i for i, d in enumerate(self.dates)}

    def rows_for(self, dates: list[str], n_cols: int) -> np.ndarray:
        """First n_cols columns aligned to the requested dates; all complete."""
        if n_cols > len(self.names):
            raise ValueError(f"factor series has {len(self.names)} columns, need {n_cols}")
        missing = [d for d in dates if d not in self._date_index]
        if missing:
            raise KeyError(f"factor series missing dates {missing[:3]}{'...' if len(missing) > 3 else ''}")
        rows = [self._date_index[d] for d in dates]
        block = self.values[np.ix_(rows, range(n_cols))]
        if not np.all(np.isfinite(block)):
            raise ValueError("factor series has missing values on the requested dates")
        return block


def load_factor_series(path) -> FactorSeries:
    """Read a factor CSV: `date,<factor1>,<factor2>,...`, empty = missing."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PanelParseError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(header) < 2 or header[0] != "date":
            raise PanelParseError(f"{path}: expected header `date,<factor>,...`")
        names = header[1:]
        rows = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise PanelParseError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            date = row[0].strip()
            if date in rows:
                raise PanelParseError(f"{path}:{lineno}: duplicate date {date}")
            try:
                rows[date] = [_parse_cell(c) for c in row[1:]]
            except ValueError as exc:
                raise PanelParseError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise PanelParseError(f"{path}: no data rows")
    dates = sorted(rows)
    values = np.array([rows[d] for d in dates], dtype=float)
    return FactorSeries(dates=dates, names=names, values=values)


def generate_synthetic(
    n_assets: int,
    n_dates: int,
    k_true: int,
    noise_scale: float = 0.02,
    seed: int = 0,
    garch_noise: bool = False,
) -> ReturnsPanel:
    """Factor-structured synthetic panel with prices and caps attached.

    Returns are loadings @ factors + diagonal Gaussian noise; the first
    factor acts market-like (positive-mean loadings) and idiosyncratic
    volatilities are dispersed across assets so minimum-variance structure
    is present. With garch_noise the idiosyncratic shocks are conditionally
    Gaussian with GARCH(1,1) volatility (still cross-sectionally
    independent, so the exact-factor structure is preserved). Deterministic
    for a fixed seed.
    """
    if k_true > n_assets:
        raise ValueError("k_true must not exceed n_assets")
    rng = np.random.default_rng(seed)

    loadings = rng.normal(0.0, 0.6, size=(k_true, n_assets))
    if k_true >= 1:
        loadings[0] = rng.normal(1.0, 0.35, size=n_assets)
    factor_vol = 0.035 * np.exp(rng.normal(0.0, 0.25, size=k_true))
    factors = rng.normal(0.0, 1.0, size=(n_dates, k_true)) * factor_vol
    factors[:, 0] += 0.004

    idio_vol = noise_scale * rng.uniform(0.5, 1.5, size=n_assets)
    z = rng.normal(0.0, 1.0, size=(n_dates, n_assets))
    if garch_noise and noise_scale > 0:
        alpha, beta = 0.25, 0.65
        var_t = np.ones(n_assets)
        noise = np.empty((n_dates, n_assets))
        for t in range(n_dates):
            noise[t] = idio_vol * np.sqrt(var_t) * z[t]
            shock = noise[t] / idio_vol
            var_t = (1.0 - alpha - beta) + alpha * shock**2 + beta * var_t
    else:
        noise = z * idio_vol
    returns = factors @ loadings + noise
    returns = np.clip(returns, -0.95, None)

    start_price = rng.uniform(10.0, 200.0, size=n_assets)
    growth = np.cumprod(1.0 + returns, axis=0)
    prices = start_price * growth
    shares = rng.lognormal(mean=3.0, sigma=1.0, size=n_assets)
    caps = prices * shares

    year0, month0 = 1990, 1
    dates = []
    for t in range(n_dates):
        y, m = divmod(month0 - 1 + t, 12)
        dates.append(f"{year0 + y:04d}-{m + 1:02d}")
    assets = [f"A{i:04d}" for i in range(n_assets)]
    return ReturnsPanel(dates=dates, assets=assets, returns=returns, prices=prices, market_caps=caps)
