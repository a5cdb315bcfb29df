"""Run configuration: model hyperparameters plus pipeline knobs.

Configs come from a flat `key = value` text file overridden by CLI flags;
the fully resolved config is embedded in every artifact for provenance.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

from .errors import ConfigError

VARIANTS = ("full", "variant1", "variant2", "variant3")
PRECISIONS = ("float32", "float64")


@dataclass(frozen=True)
class Hyperparams:
    """Everything the model and training loop need to be reproducible."""

    n_train: int = 16
    n_eval: int = 128
    k_shot: int = 3
    t_steps: int = 2
    dim: int = 100
    learning_rate: float = 1e-3
    epochs: int = 30
    episodes_per_epoch: int = 100
    patience: int = 5
    seed: int = 0
    variant: str = "full"
    precision: str = "float32"

    def validate(self) -> None:
        if self.n_eval < 2:
            raise ConfigError(f"n_eval must be >= 2, got {self.n_eval}")
        if self.n_train < 2:
            raise ConfigError(f"n_train must be >= 2, got {self.n_train}")
        if self.k_shot < 1:
            raise ConfigError(f"k_shot must be >= 1, got {self.k_shot}")
        if self.t_steps < 0:
            raise ConfigError(f"t_steps must be >= 0, got {self.t_steps}")
        if self.dim < 1:
            raise ConfigError(f"dim must be >= 1, got {self.dim}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 0 or self.episodes_per_epoch < 1 or self.patience < 0:
            raise ConfigError("epochs must be >= 0, episodes_per_epoch >= 1, patience >= 0")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.precision not in PRECISIONS:
            raise ConfigError(f"precision must be one of {PRECISIONS}, got {self.precision!r}")

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, values: dict) -> "Hyperparams":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown hyperparameter keys: {sorted(unknown)}")
        hyper = cls(**values)
        hyper.validate()
        return hyper


@dataclass(frozen=True)
class RunConfig:
    """Hyperparams plus data/pipeline/IO settings, one flat namespace."""

    hyper: Hyperparams = field(default_factory=Hyperparams)
    data: str = ""
    out: str = "out"
    checkpoint: str = ""
    embeddings: str = ""
    max_prefix_len: int = 50
    cold_fraction: float = 0.2
    ratio_train: float = 0.7
    ratio_valid: float = 0.1
    ratio_test: float = 0.2
    eval_seeds: int = 3
    eval_query_limit: int = 0
    valid_query_limit: int = 150
    synth_clusters: int = 8
    synth_items_per_cluster: int = 64
    synth_sequences: int = 6000
    synth_len_min: int = 4
    synth_len_max: int = 12
    synth_within_prob: float = 0.9
    synth_markov_prob: float = 0.75
    synth_niche_clusters: int = 2
    synth_niche_share: float = 0.15
    synth_hub_items: int = 0
    eval_split: str = "test"
    scorer: str = "model"
    export_items: int = 4
    export_queries: int = 100
    train_seeds: int = 3

    @property
    def ratios(self) -> tuple[float, float, float]:
        return (self.ratio_train, self.ratio_valid, self.ratio_test)

    def validate(self) -> None:
        self.hyper.validate()
        if self.max_prefix_len < 1:
            raise ConfigError(f"max_prefix_len must be >= 1, got {self.max_prefix_len}")
        if not 0.0 < self.cold_fraction < 1.0:
            raise ConfigError(f"cold_fraction must be in (0, 1), got {self.cold_fraction}")
        if self.eval_seeds < 1:
            raise ConfigError(f"eval_seeds must be >= 1, got {self.eval_seeds}")
        if self.eval_query_limit < 0 or self.valid_query_limit < 0:
            raise ConfigError("query limits must be >= 0 (0 disables the limit)")
        if self.eval_split not in ("train", "valid", "test"):
            raise ConfigError(f"eval_split must be train, valid, or test, got {self.eval_split!r}")
        if self.scorer not in ("model", "random", "oracle"):
            raise ConfigError(f"scorer must be model, random, or oracle, got {self.scorer!r}")
        if self.export_items < 1 or self.export_queries < 1:
            raise ConfigError("export_items and export_queries must be >= 1")
        if self.train_seeds < 1:
            raise ConfigError(f"train_seeds must be >= 1, got {self.train_seeds}")

    def as_flat_dict(self) -> dict:
        flat = dict(self.hyper.as_dict())
        for f in fields(self):
            if f.name != "hyper":
                flat[f.name] = getattr(self, f.name)
        return flat


_HYPER_FIELDS = {f.name: f.type for f in fields(Hyperparams)}
_RUN_FIELDS = {f.name: f.type for f in fields(RunConfig) if f.name != "hyper"}

_FIELD_PARSERS = {
    "int": int,
    "float": float,
    "str": str,
}


def _coerce(key: str, text: str, type_name: str):
    base = type_name.split("|")[0].strip()
    parser = _FIELD_PARSERS.get(base)
    if parser is None:
        raise ConfigError(f"config key {key!r} has unsupported type {type_name!r}")
    try:
        return parser(text)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {text!r} as {base}") from None


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse flat `key = value` lines; '#' starts a comment."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def build_config(raw: dict[str, str]) -> RunConfig:
    """Typed RunConfig from string key/value pairs."""
    hyper_kwargs = {}
    run_kwargs = {}
    for key, text in raw.items():
        if key in _HYPER_FIELDS:
            hyper_kwargs[key] = _coerce(key, text, _HYPER_FIELDS[key])
        elif key in _RUN_FIELDS:
            run_kwargs[key] = _coerce(key, text, _RUN_FIELDS[key])
        else:
            raise ConfigError(f"unknown config key {key!r}")
    config = RunConfig(hyper=Hyperparams(**hyper_kwargs), **run_kwargs)
    config.validate()
    return config


def load_config(path: str | None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Config file merged with flag overrides (overrides win)."""
    raw: dict[str, str] = {}
    if path:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = parse_config_text(fh.read(), source=path)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from None
    if overrides:
        raw.update({k: str(v) for k, v in overrides.items()})
    return build_config(raw)


def format_config(config: RunConfig) -> str:
    """Canonical `key = value` rendering of the resolved config."""
    flat = config.as_flat_dict()
    return "".join(f"{key} = {flat[key]}\n" for key in sorted(flat))


def with_hyper(config: RunConfig, **changes) -> RunConfig:
    """Copy of ``config`` with hyperparameter fields replaced."""
    return replace(config, hyper=replace(config.hyper, **changes))
