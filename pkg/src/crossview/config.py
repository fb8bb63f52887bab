"""Run configuration stored as a ``key = value`` text file.

Blank lines and ``#`` comments are ignored. Every key maps to one field of
:class:`RunConfig`; unknown keys and unparsable values raise ConfigError.
Model keys (``img_size``, ``enc_dim``, ``decoder``, ...) share the file with
optimizer, data and output settings.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError, DataError
from .model import ModelConfig

_MODEL_KEYS = tuple(f.name for f in fields(ModelConfig))


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig.tiny)
    seed: int = 0
    out: str = "runs/default"
    # pre-training
    manifest: str = ""
    steps: int = 500
    batch_size: int = 4
    lr: float = 2e-3
    warmup_lr: float = 1e-6
    warmup_frac: float = 0.05
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.95
    clip_norm: float = 1.0  # global gradient norm cap; 0 disables
    checkpoint_every: int = 100
    swap_views: bool = True
    # flow fine-tuning
    flow_dir: str = ""
    flow_steps: int = 1200
    flow_lr: float = 1e-3
    flow_batch: int = 8

    def validate(self) -> None:
        self.model.validate()
        for key in ("steps", "batch_size", "checkpoint_every", "flow_steps", "flow_batch"):
            if getattr(self, key) <= 0:
                raise ConfigError(f"{key} must be positive, got {getattr(self, key)}")
        for key in ("lr", "flow_lr", "warmup_lr"):
            if not getattr(self, key) > 0:
                raise ConfigError(f"{key} must be positive, got {getattr(self, key)}")
        if not 0.0 <= self.warmup_frac < 1.0:
            raise ConfigError(f"warmup_frac must lie in [0, 1), got {self.warmup_frac}")
        if self.clip_norm < 0:
            raise ConfigError(f"clip_norm must be non-negative, got {self.clip_norm}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be non-negative, got {self.weight_decay}")
        for key in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, key) < 1.0:
                raise ConfigError(f"{key} must lie in [0, 1), got {getattr(self, key)}")

    @property
    def warmup_steps(self) -> int:
        return int(self.warmup_frac * self.steps)

    def items(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "model"}
        d.update(self.model.to_dict())
        return d

    def dumps(self) -> str:
        lines = [f"{k} = {_format(v)}" for k, v in sorted(self.items().items())]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _types() -> dict[str, type]:
    kinds = {f.name: type(getattr(ModelConfig(), f.name)) for f in fields(ModelConfig)}
    defaults = RunConfig()
    kinds.update({f.name: type(getattr(defaults, f.name)) for f in fields(RunConfig) if f.name != "model"})
    return kinds


def _coerce(key: str, raw: str, kind: type):
    try:
        if kind is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from None


def parse_overrides(pairs: dict[str, str], base: RunConfig | None = None) -> RunConfig:
    """Apply string-valued overrides to ``base`` (defaults when None) and validate."""
    kinds = _types()
    cur = (base or RunConfig()).items()
    for key, raw in pairs.items():
        if key not in kinds:
            raise ConfigError(f"unknown config key {key!r}")
        cur[key] = _coerce(key, raw, kinds[key])
    model = ModelConfig(**{k: cur.pop(k) for k in _MODEL_KEYS})
    cfg = RunConfig(model=model, **cur)
    cfg.validate()
    return cfg


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in pairs:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        pairs[key] = value
    return parse_overrides(pairs, base)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise DataError(f"{path}: cannot read config ({e.strerror})") from e
    return parse_config_text(text)
