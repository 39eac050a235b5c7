"""Experiment configuration: one dataclass tree, JSON round-trip, presets.

Configs are strict: an unknown field anywhere in the tree raises a
ConfigurationError naming the offending key, so typos never silently fall
back to defaults. Dotted-path overrides (section.key=value) let the CLI
adjust single knobs on top of a preset or config file.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields

from .contracts import AccuracyCurveParams, MarketModel, QualityParams
from .errors import ConfigurationError
from .simulation import TimingParams


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "synthetic"
    # IDX file paths, used when kind == "mnist"; None falls back to $MNIST_DIR
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    subset: int | None = None
    test_subset: int | None = None
    # synthetic blob settings, used when kind == "synthetic"
    classes: int = 10
    dim: int = 64
    train_count: int = 4000
    test_count: int = 1000
    spread: float = 0.13

    def __post_init__(self):
        if self.kind not in ("synthetic", "mnist"):
            raise ConfigurationError(
                f"dataset.kind must be 'synthetic' or 'mnist', got {self.kind!r}")


@dataclass(frozen=True)
class PartitionConfig:
    num_clients: int = 20
    zipf_exponent: float = 1.0
    dirichlet_alpha: float = 0.1
    max_classes_per_client: int = 4
    val_fraction: float = 0.1


@dataclass(frozen=True)
class MarketConfig:
    levels: int = 10
    xi: float = 2.0
    c: float = 5.0
    f: float = 1.0
    t_com: float = 10.0
    e_com: float = 20.0
    lambda1: float = 5e6
    lambda2: float = 4e5
    t_max: float = 1e5

    def to_market(self) -> MarketModel:
        return MarketModel.uniform(
            self.levels, xi=self.xi, c=self.c, f=self.f, t_com=self.t_com,
            e_com=self.e_com, lambda1=self.lambda1, lambda2=self.lambda2,
            t_max=self.t_max)


@dataclass(frozen=True)
class QualityConfig:
    gamma1: float = 10.559
    gamma2: float = 1.803
    gamma3: float = 70.0
    gamma4: float = 0.155

    def to_params(self) -> QualityParams:
        return QualityParams(self.gamma1, self.gamma2, self.gamma3, self.gamma4)


@dataclass(frozen=True)
class CurveConfig:
    beta1: float = 0.459
    beta2: float = 0.432
    beta3: float = 0.459
    beta4: float = 0.009
    beta5: float = 2.436

    def to_params(self) -> AccuracyCurveParams:
        return AccuracyCurveParams(self.beta1, self.beta2, self.beta3,
                                   self.beta4, self.beta5)


@dataclass(frozen=True)
class TimingConfig:
    delay_lo: float = 0.5
    delay_hi: float = 2.0
    delta_t: float = 1.0


@dataclass(frozen=True)
class TrainingConfig:
    lr: float = 0.01
    batch_size: int = 20
    hidden1: int = 64
    hidden2: int = 32


@dataclass(frozen=True)
class GateConfig:
    a: float = 0.5
    epsilon: float = 2.0
    phi: float = 3.0


@dataclass(frozen=True)
class AttackConfig:
    count: int = 0
    flip_fraction: float = 0.5


@dataclass(frozen=True)
class BaselineConfig:
    local_epochs: int = 10
    prox_mu: float = 0.01


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    rounds: int = 30
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    market: MarketConfig = field(default_factory=MarketConfig)
    quality: QualityConfig = field(default_factory=QualityConfig)
    curve: CurveConfig = field(default_factory=CurveConfig)
    timing: TimingConfig = field(default_factory=TimingConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    gate: GateConfig = field(default_factory=GateConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigurationError(f"rounds must be >= 1, got {self.rounds}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_timing(self) -> TimingParams:
        return TimingParams.from_market(
            self.market.to_market(), delay_lo=self.timing.delay_lo,
            delay_hi=self.timing.delay_hi, delta_t=self.timing.delta_t)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        sections = {f.name: f.type for f in fields(cls)}
        unknown = set(d) - set(sections)
        if unknown:
            raise ConfigurationError(f"unknown config field {sorted(unknown)[0]!r}")
        kwargs = {}
        for f in fields(cls):
            if f.name not in d:
                continue
            value = d[f.name]
            if f.name in ("seed", "rounds"):
                kwargs[f.name] = _coerce_scalar(value, "int", f.name)
            else:
                section_cls = _SECTION_CLASSES[f.name]
                kwargs[f.name] = _build_section(section_cls, value, f.name)
        return cls(**kwargs)


_SECTION_CLASSES = {
    "dataset": DatasetConfig,
    "partition": PartitionConfig,
    "market": MarketConfig,
    "quality": QualityConfig,
    "curve": CurveConfig,
    "timing": TimingConfig,
    "training": TrainingConfig,
    "gate": GateConfig,
    "attack": AttackConfig,
    "baseline": BaselineConfig,
}


_SCALAR_KINDS = {
    "int": "an integer",
    "float": "a number",
    "str": "a string",
    "int | None": "an integer or null",
    "str | None": "a string or null",
}


def _coerce_scalar(value, annotation: str, path: str):
    # Overrides and JSON files deliver untyped values; reject mismatches here
    # so a string learning rate fails at parse time, not mid-training.
    base = annotation.split(" |")[0]
    if value is None and annotation.endswith("None"):
        return None
    if not isinstance(value, bool):  # bool passes isinstance(int) checks
        if base == "float" and isinstance(value, (int, float)):
            return float(value)
        if base == "int":
            if isinstance(value, int):
                return value
            if isinstance(value, float) and value.is_integer():
                return int(value)
    if base == "str" and isinstance(value, str):
        return value
    raise ConfigurationError(
        f"config field {path!r} expects {_SCALAR_KINDS[annotation]}, got {value!r}")


def _build_section(section_cls, value, path: str):
    if not isinstance(value, dict):
        raise ConfigurationError(f"config section {path!r} must be an object")
    annotations = {f.name: f.type for f in fields(section_cls)}
    unknown = set(value) - set(annotations)
    if unknown:
        raise ConfigurationError(f"unknown config field {path}.{sorted(unknown)[0]}")
    clean = {k: _coerce_scalar(v, annotations[k], f"{path}.{k}")
             for k, v in value.items()}
    try:
        return section_cls(**clean)
    except TypeError as exc:
        raise ConfigurationError(f"bad config section {path!r}: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    """Read a JSON config file; errors name the malformed field."""
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError(f"config file {path} must hold a JSON object")
    return ExperimentConfig.from_dict(raw)


def apply_overrides(cfg: ExperimentConfig, overrides: list[str]) -> ExperimentConfig:
    """Apply 'section.key=value' (or 'seed=7') strings on top of a config."""
    d = cfg.to_dict()
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not of the form key=value")
        path, _, raw = item.partition("=")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw  # bare strings are allowed unquoted
        parts = path.split(".")
        node = d
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigurationError(f"override path {path!r} does not exist")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigurationError(f"override path {path!r} does not exist")
        node[parts[-1]] = value
    return ExperimentConfig.from_dict(d)


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

def preset_desk() -> ExperimentConfig:
    """Minutes-scale comparative run on synthetic blobs, 20 clients.

    Quality and accuracy-curve parameters are recalibrated for shards of
    50..1000 samples: the full-scale defaults assume thousands of samples
    per client and would floor every desk client to the minimum quality
    score (and push optimal efforts far past anything a small shard can
    use). Five contract levels keep several clients per level so the
    per-level admission statistics stay meaningful.
    """
    return ExperimentConfig(
        seed=0,
        rounds=30,
        dataset=DatasetConfig(kind="synthetic", classes=10, dim=64,
                              train_count=4000, test_count=1000, spread=0.25),
        partition=PartitionConfig(num_clients=20, max_classes_per_client=10),
        market=MarketConfig(levels=5),
        quality=QualityConfig(gamma1=1.68, gamma2=0.114, gamma3=20.0, gamma4=0.5),
        curve=CurveConfig(beta4=1.0),
        timing=TimingConfig(delta_t=16.0),
        training=TrainingConfig(lr=0.15, batch_size=10),
    )


def preset_paper_noattack() -> ExperimentConfig:
    """Full-scale run: 100 clients on MNIST, no attackers."""
    return ExperimentConfig(
        seed=0,
        rounds=300,
        dataset=DatasetConfig(kind="mnist"),
        partition=PartitionConfig(num_clients=100),
        timing=TimingConfig(delta_t=1.0),
    )


def preset_paper_attack30() -> ExperimentConfig:
    """Full-scale run with 30 label-flipping clients."""
    cfg = preset_paper_noattack()
    return dataclasses.replace(cfg, attack=AttackConfig(count=30, flip_fraction=0.5))


PRESETS = {
    "desk": preset_desk,
    "paper-noattack": preset_paper_noattack,
    "paper-attack30": preset_paper_attack30,
}


def resolve_config(preset: str | None, config_path: str | None,
                   overrides: list[str] | None = None) -> ExperimentConfig:
    """Combine preset, config file, and overrides (later wins)."""
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigurationError(
                f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        cfg = PRESETS[preset]()
        if config_path is not None:
            base = cfg.to_dict()
            with open(config_path) as fh:
                try:
                    patch = json.load(fh)
                except json.JSONDecodeError as exc:
                    raise ConfigurationError(
                        f"config file {config_path} is not valid JSON: {exc}") from exc
            _deep_update(base, patch, "")
            cfg = ExperimentConfig.from_dict(base)
    elif config_path is not None:
        cfg = load_config(config_path)
    else:
        cfg = preset_desk()
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg


def _deep_update(base: dict, patch: dict, path: str) -> None:
    for key, value in patch.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigurationError(f"unknown config field {where}")
        if isinstance(value, dict) and isinstance(base[key], dict):
            _deep_update(base[key], value, where)
        else:
            base[key] = value
