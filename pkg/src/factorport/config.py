"""Flat key-value run configuration.

The file format is one `key = value` pair per line with `#` comments, no
nesting. Strategies are comma-separated tokens `method[:cov_spec]`, e.g.
`pca:dyn_error`; the optimizer applies run-wide. Validation collects every
violation before raising so a bad file reports all problems at once.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from .backtest import (
    DEFAULT_ETA_GRID,
    DEFAULT_K_GRID,
    DEFAULT_LAMBDA1_GRID,
    OBSERVED_METHODS,
    OPTIMIZERS,
    StrategySpec,
)
from .errors import ConfigError
from .opt import DEFAULT_KAPPA
from .panel import UniverseRules, WindowSpec

CONFIG_KEYS = {
    "panel",
    "factors",
    "groups",
    "out_dir",
    "seed",
    "window_length",
    "window_step",
    "validation_fraction",
    "min_history_fraction",
    "min_price",
    "top_n_by_cap",
    "require_next_return",
    "strategies",
    "rank_within",
    "optimizer",
    "kappa",
    "k_grid",
    "lambda1_grid",
    "lambda2",
    "eta_grid",
    "ae_max_epochs",
    "ae_patience",
    "ae_batch_size",
    "ae_learning_rate",
    "gammas",
    "var_level",
    "cost_bps",
    "bootstrap_block",
    "bootstrap_resamples",
}


@dataclass
class RunConfig:
    """Validated run settings ready to hand to the engine."""

    panel_path: str
    out_dir: str
    seed: int
    strategies: list[StrategySpec]
    window: WindowSpec
    rules: UniverseRules
    factors_path: str | None = None
    groups_path: str | None = None
    rank_within: str = "cross_section"
    gammas: tuple[float, ...] = (2.0, 5.0, 10.0)
    var_level: float = 0.95
    cost_bps: tuple[float, ...] = ()
    bootstrap_block: int = 12
    bootstrap_resamples: int = 2000
    raw_text: str = field(default="", repr=False)


def parse_kv(text: str) -> dict[str, str]:
    """Parse `key = value` lines; `#` starts a comment anywhere."""
    out: dict[str, str] = {}
    errors = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            errors.append(f"line {lineno}: expected `key = value`, got {stripped!r}")
            continue
        key, value = stripped.split("=", 1)
        key = key.strip()
        if key in out:
            errors.append(f"line {lineno}: duplicate key {key!r}")
            continue
        out[key] = value.strip()
    if errors:
        raise ConfigError("config syntax errors:\n  " + "\n  ".join(errors))
    return out


def _parse_strategy_token(token: str, optimizer: str, kappa: float, grids: dict) -> StrategySpec:
    parts = [p.strip() for p in token.split(":") if p.strip()]
    if not parts:
        raise ConfigError(f"empty strategy token in {token!r}")
    method = parts[0]
    cov_spec = parts[1] if len(parts) > 1 else "static"
    opt = parts[2] if len(parts) > 2 else optimizer
    return StrategySpec(
        method=method,
        cov_spec=cov_spec,
        optimizer=opt,
        kappa=kappa,
        **grids,
    )


def load_config(path: str) -> RunConfig:
    """Read and validate a run configuration file.

    Raises ConfigError whose message lists every violation found.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None

    kv = parse_kv(text)
    errors: list[str] = []

    unknown = sorted(set(kv) - CONFIG_KEYS)
    if unknown:
        errors.append(f"unknown keys: {', '.join(unknown)}")

    def take(key, cast, default=None, required=False):
        if key not in kv or kv[key] == "":
            if required:
                errors.append(f"missing required key {key!r}")
            return default
        try:
            return cast(kv[key])
        except (ValueError, ConfigError) as exc:
            errors.append(f"{key}: {exc}")
            return default

    def as_bool(v):
        low = v.lower()
        if low in ("true", "on", "yes", "1"):
            return True
        if low in ("false", "off", "no", "0"):
            return False
        raise ValueError(f"expected a boolean, got {v!r}")

    def float_list(v):
        return tuple(float(p) for p in v.split(",") if p.strip())

    def int_list(v):
        return tuple(int(p) for p in v.split(",") if p.strip())

    panel_path = take("panel", str, required=True)
    factors_path = take("factors", str)
    groups_path = take("groups", str)
    out_dir = take("out_dir", str, default="runs/out")
    seed = take("seed", int, required=True)

    window_kwargs = {}
    for key, name, cast in (
        ("window_length", "length", int),
        ("window_step", "step", int),
        ("validation_fraction", "validation_fraction", float),
    ):
        value = take(key, cast)
        if value is not None:
            window_kwargs[name] = value
    try:
        window = WindowSpec(**window_kwargs)
    except ValueError as exc:
        errors.append(str(exc))
        window = WindowSpec()

    rules_kwargs = {}
    for key, name, cast in (
        ("min_history_fraction", "min_history_fraction", float),
        ("min_price", "min_price", float),
        ("top_n_by_cap", "top_n_by_cap", int),
        ("require_next_return", "require_next_return", as_bool),
    ):
        value = take(key, cast)
        if value is not None:
            rules_kwargs[name] = value
    try:
        rules = UniverseRules(**rules_kwargs)
    except ValueError as exc:
        errors.append(str(exc))
        rules = UniverseRules()

    rank_within = take("rank_within", str, default="cross_section")
    if rank_within not in ("cross_section", "time_series"):
        errors.append(f"rank_within must be cross_section or time_series, got {rank_within!r}")
        rank_within = "cross_section"

    optimizer = take("optimizer", str, default="long_only")
    if optimizer not in OPTIMIZERS:
        errors.append(f"optimizer must be one of {OPTIMIZERS}, got {optimizer!r}")
        optimizer = "long_only"
    kappa = take("kappa", float, default=DEFAULT_KAPPA)

    grids = {
        "k_grid": take("k_grid", int_list, default=DEFAULT_K_GRID),
        "lambda1_grid": take("lambda1_grid", float_list, default=DEFAULT_LAMBDA1_GRID),
        "lambda2": take("lambda2", float, default=1e-4),
        "eta_grid": take("eta_grid", float_list, default=DEFAULT_ETA_GRID),
    }
    ae_options = {}
    for key, name in (
        ("ae_max_epochs", "max_epochs"),
        ("ae_patience", "patience"),
        ("ae_batch_size", "batch_size"),
        ("ae_learning_rate", "learning_rate"),
    ):
        value = take(key, float if name == "learning_rate" else int)
        if value is not None:
            ae_options[name] = value
    grids["ae_options"] = ae_options

    strategies: list[StrategySpec] = []
    tokens = take("strategies", str, required=True)
    if tokens:
        for token in tokens.split(","):
            token = token.strip()
            if not token:
                continue
            try:
                strategies.append(_parse_strategy_token(token, optimizer, kappa, grids))
            except ConfigError as exc:
                errors.append(f"strategy {token!r}: {exc}")
    if tokens and not strategies and not errors:
        errors.append("strategies list is empty")

    names = [s.name for s in strategies]
    if len(set(names)) != len(names):
        errors.append(f"duplicate strategies after normalization: {names}")

    gammas = take("gammas", float_list, default=(2.0, 5.0, 10.0))
    var_level = take("var_level", float, default=0.95)
    if var_level is not None and not 0.0 < var_level < 1.0:
        errors.append("var_level must lie in (0, 1)")
    cost_bps = take("cost_bps", float_list, default=())
    bootstrap_block = take("bootstrap_block", int, default=12)
    bootstrap_resamples = take("bootstrap_resamples", int, default=2000)

    if panel_path and not os.path.exists(panel_path):
        errors.append(f"panel file does not exist: {panel_path}")
    needs_factors = any(s.method in OBSERVED_METHODS for s in strategies)
    if needs_factors and not factors_path:
        errors.append("a factors file is required for market/ff3 strategies")
    if factors_path and not os.path.exists(factors_path):
        errors.append(f"factors file does not exist: {factors_path}")
    if groups_path and not os.path.exists(groups_path):
        errors.append(f"groups file does not exist: {groups_path}")

    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))

    return RunConfig(
        panel_path=panel_path,
        out_dir=out_dir,
        seed=seed,
        strategies=strategies,
        window=window,
        rules=rules,
        factors_path=factors_path or None,
        groups_path=groups_path or None,
        rank_within=rank_within,
        gammas=gammas,
        var_level=var_level,
        cost_bps=cost_bps,
        bootstrap_block=bootstrap_block,
        bootstrap_resamples=bootstrap_resamples,
        raw_text=text,
    )
