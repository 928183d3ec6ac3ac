"""Training configuration: defaults, flat-key JSON files and overrides."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path

from .data import SplitSpec
from .errors import ConfigError

# short names accepted on the command line and in config files
ALIASES = {"lambda": "lam", "t1": "T1", "t2": "T2", "d_C": "d_c", "dc": "d_c"}
SWEEPABLE = ("alpha", "beta", "lam", "gamma", "eta", "T1", "T2", "R", "d_c")


@dataclass
class TrainConfig:
    # objective weights
    alpha: float = 0.1
    beta: float = 0.004
    lam: float = 0.001
    gamma: float = 0.1
    eta: float = 0.001
    T1: float = 10.0
    T2: float = 5.0
    # architecture
    d_c: int = 3
    hidden: int = 128
    slope: float = 0.01
    init_gain: float = 1.0
    # representatives
    R: int = 3
    kmeans_max_iter: int = 50
    kmeans_tol: float = 1e-6
    # optimisation
    epochs: int = 1000
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grl_lambda: float = 1.0
    batch_size: int = 0  # 0 = full batch
    seed: int = 0
    # data
    ratio: str = "1:10"
    stratified: bool = True
    normalize: bool = True
    # ablation switches
    use_weighting: bool = True
    use_plr: bool = True
    use_sn: bool = True
    use_si: bool = True
    literal_paper_normalization: bool = False
    # bookkeeping
    checkpoint_every: int = 100
    monitor_tu: bool = False

    def validate(self) -> "TrainConfig":
        for name in ("alpha", "beta", "lam", "gamma", "eta", "lr", "grl_lambda"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.T1 <= 0 or self.T2 <= 0:
            raise ConfigError("temperatures must be positive")
        if not 0.0 < self.slope < 1.0:
            raise ConfigError(f"slope must lie in (0, 1), got {self.slope}")
        for name in ("d_c", "hidden", "R", "epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not (self.use_sn or self.use_si):
            raise ConfigError("at least one source domain must be enabled")
        if self.batch_size < 0:
            raise ConfigError("batch_size must be >= 0")
        try:
            SplitSpec.parse(self.ratio)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def replace(self, **changes) -> "TrainConfig":
        return apply_overrides(self, changes)


def _field_types() -> dict[str, type]:
    defaults = TrainConfig()
    return {f.name: type(getattr(defaults, f.name)) for f in fields(TrainConfig)}


def _coerce(key: str, value, typ: type):
    if isinstance(value, str):
        text = value.strip()
        if typ is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
        try:
            if typ is int:
                as_float = float(text)
                if not as_float.is_integer():
                    raise ValueError
                return int(as_float)
            if typ is float:
                return float(text)
        except ValueError:
            raise ConfigError(f"{key}: expected {typ.__name__}, got {value!r}") from None
        return text
    if typ is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if typ is int and isinstance(value, float) and value.is_integer():
        return int(value)
    if typ is bool and not isinstance(value, bool):
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if typ in (int, float) and isinstance(value, bool):
        raise ConfigError(f"{key}: expected {typ.__name__}, got {value!r}")
    if not isinstance(value, typ):
        raise ConfigError(f"{key}: expected {typ.__name__}, got {value!r}")
    return value


def canonical_key(key: str) -> str:
    key = key.strip()
    return ALIASES.get(key, ALIASES.get(key.lower(), key))


def apply_overrides(cfg: TrainConfig, overrides: dict) -> TrainConfig:
    types = _field_types()
    changes = {}
    for raw_key, value in overrides.items():
        key = canonical_key(raw_key)
        if key not in types:
            raise ConfigError(f"unknown config key {raw_key!r}")
        changes[key] = _coerce(key, value, types[key])
    return dataclasses.replace(cfg, **changes).validate()


def parse_assignments(items: list[str]) -> dict[str, str]:
    """Parse ``key=value`` strings from the command line."""
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = v
    return out


def load_config(path: str | Path | None, overrides: dict | None = None) -> TrainConfig:
    cfg = TrainConfig()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"{path}: config file not found")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: expected a flat JSON object")
        cfg = apply_overrides(cfg, raw)
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg.validate()


def save_config(cfg: TrainConfig, path: str | Path, extra: dict | None = None) -> None:
    doc = cfg.to_dict()
    if extra:
        doc = {**doc, **{f"_{k}": v for k, v in extra.items()}}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_echo(path: str | Path) -> TrainConfig:
    """Load an echoed config, ignoring provenance keys (prefixed with '_')."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return apply_overrides(TrainConfig(), {k: v for k, v in raw.items() if not k.startswith("_")})
