"""Engine configuration: one JSON document, one section per module."""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

from .backtest import ExecutionRules
from .indicators import IndicatorConfig
from .market_data import DEFAULT_CUTOFF, DEFAULT_INTERVAL, HistoryEndpoint
from .rnn import Hyperparameters
from .strategies import STRATEGY_NAMES, StrategyConfig
from .validation import CvConfig

CONFIG_ENV_VAR = "ENGINE_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    pair: str = "BTC/USDT"
    interval: int = DEFAULT_INTERVAL
    cutoff: str = DEFAULT_CUTOFF
    endpoint: dict = field(default_factory=dict)  # overrides for HistoryEndpoint fields
    candles: Optional[str] = None  # default candle CSV for cross-validate/sweep/predict/backtest

    def history_endpoint(self) -> HistoryEndpoint:
        known = {f.name for f in fields(HistoryEndpoint)}
        unknown = set(self.endpoint) - known
        if unknown:
            raise ConfigError(f"data.endpoint: unknown key(s) {sorted(unknown)}")
        kw = dict(self.endpoint)
        if "records_path" in kw:
            kw["records_path"] = tuple(kw["records_path"])
        return HistoryEndpoint(**kw)


@dataclass
class StrategySection(StrategyConfig):
    name: str = "rsi"

    def __post_init__(self):
        super().__post_init__()
        if self.name not in STRATEGY_NAMES:
            raise ConfigError(f"strategy.name must be one of {STRATEGY_NAMES}")

    def strategy_config(self) -> StrategyConfig:
        kw = {f.name: getattr(self, f.name) for f in fields(StrategyConfig)}
        return StrategyConfig(**kw)


@dataclass
class BacktestSection:
    initial_quote: float = 10_000.0
    start_fraction: float = 0.8
    rf_annual: float = 0.02
    sharpe_window_days: float = 30.0


SECTIONS = {
    "data": DataConfig,
    "indicators": IndicatorConfig,
    "hyperparameters": Hyperparameters,
    "cv": CvConfig,
    "strategy": StrategySection,
    "rules": ExecutionRules,
    "backtest": BacktestSection,
}


@dataclass
class EngineConfig:
    data: DataConfig = field(default_factory=DataConfig)
    indicators: IndicatorConfig = field(default_factory=IndicatorConfig)
    hyperparameters: Hyperparameters = field(default_factory=Hyperparameters)
    cv: CvConfig = field(default_factory=CvConfig)
    strategy: StrategySection = field(default_factory=StrategySection)
    rules: ExecutionRules = field(default_factory=ExecutionRules)
    backtest: BacktestSection = field(default_factory=BacktestSection)
    seed: int = 0

    def __post_init__(self):
        # the top-level seed drives every random source
        if self.hyperparameters.seed != self.seed:
            self.hyperparameters = Hyperparameters(**{**asdict(self.hyperparameters), "seed": self.seed})

    @classmethod
    def from_dict(cls, doc: dict) -> "EngineConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(doc) - set(SECTIONS) - {"seed"}
        if unknown:
            raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
        kw = {}
        for name, klass in SECTIONS.items():
            section = doc.get(name, {})
            if not isinstance(section, dict):
                raise ConfigError(f"config section '{name}' must be an object")
            allowed = {f.name for f in fields(klass)}
            bad = set(section) - allowed
            if bad:
                raise ConfigError(f"unknown key(s) in section '{name}': {sorted(bad)}")
            try:
                kw[name] = klass(**section)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"section '{name}': {exc}") from None
        seed = doc.get("seed", 0)
        if not isinstance(seed, int):
            raise ConfigError("seed must be an integer")
        return cls(**kw, seed=seed)

    def to_dict(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in SECTIONS} | {"seed": self.seed}

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def provenance(self) -> dict:
        return {"config_sha256": self.sha256, "seed": self.seed, "config": self.to_dict()}

    def with_seed(self, seed: int) -> "EngineConfig":
        doc = self.to_dict()
        doc["seed"] = seed
        doc["hyperparameters"]["seed"] = seed
        return EngineConfig.from_dict(doc)


def load_config(path: Optional[str] = None) -> EngineConfig:
    """Read ``path``, else ``$ENGINE_CONFIG``, else defaults."""
    path = path or os.environ.get(CONFIG_ENV_VAR)
    if not path:
        return EngineConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from None
    return EngineConfig.from_dict(doc)
