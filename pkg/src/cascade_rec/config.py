"""Flat ``key=value`` experiment configuration.

Keys are ``section.name``; sections map to dataclass fields::

    trainer.epochs=10
    trainer.learning_rate=1.0
    sampler.pool_size=100
    data.num_users=2000
    eval.retrieve_k=50

``#`` starts a comment. Unknown keys are errors.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .strategies import KL_STRATEGIES, NEGATIVE_STRATEGIES


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 128
    learning_rate: float = 1.0
    # item-embedding tables step with learning_rate * embedding_lr_scale
    embedding_lr_scale: float = 20.0
    weight_decay: float = 1e-5
    dim: int = 16
    hidden: int = 0  # 0 -> 2 * dim
    activation: str = "logistic"
    pool_size: int = 100
    num_samples: int = 20
    temperature: float = 1.0
    proposal: str = "uniform"
    popularity_exponent: float = 0.75
    kl_weight: float = 1.0
    ranker_negative_strategy: str = "resample"
    kl_item_strategy: str = "resample"
    global_top: int = 500
    local_pool: int = 100
    # False: draw samples straight from the static proposal (no resampling)
    adaptive: bool = True
    update_retriever: bool = True
    update_ranker: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.embedding_lr_scale < 0:
            raise ConfigError("embedding_lr_scale must be >= 0")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if not 1 <= self.num_samples <= self.pool_size:
            raise ConfigError("need 1 <= num_samples <= pool_size")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if self.kl_weight < 0:
            raise ConfigError("kl_weight must be >= 0")
        if self.ranker_negative_strategy not in NEGATIVE_STRATEGIES:
            raise ConfigError(f"unknown ranker_negative_strategy {self.ranker_negative_strategy!r}")
        if self.kl_item_strategy not in KL_STRATEGIES:
            raise ConfigError(f"unknown kl_item_strategy {self.kl_item_strategy!r}")
        if self.activation not in ("logistic", "tanh"):
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.proposal not in ("uniform", "popularity"):
            raise ConfigError(f"unknown proposal {self.proposal!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")


@dataclass(frozen=True)
class DataConfig:
    path: str = ""  # empty -> synthetic
    num_users: int = 2000
    num_items: int = 500
    latent_dim: int = 16
    min_len: int = 8
    max_len: int = 20
    sharpness: float = 3.0
    curvature: float = 0.0
    interests: int = 1
    seed: int = 0
    min_interactions: int = 5
    max_seq_len: int = 20


@dataclass(frozen=True)
class EvalSection:
    k: int = 20
    retrieve_k: int = 500
    exclude_interacted: bool = True


@dataclass(frozen=True)
class ExperimentSpec:
    data: DataConfig = field(default_factory=DataConfig)
    trainer: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSection = field(default_factory=EvalSection)
    seeds: tuple[int, ...] = (0,)
    output_dir: str = "runs"


# sampler.* keys are stored on TrainConfig
_SECTION_ALIASES = {"sampler": "trainer", "model": "trainer", "strategy": "trainer"}
_SAMPLER_KEYS = {"pool_size", "num_samples", "temperature", "proposal", "popularity_exponent"}


def _coerce(raw: str, typ):
    if typ in (bool, "bool"):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {raw!r}")
    if typ in (int, "int"):
        return int(raw)
    if typ in (float, "float"):
        return float(raw)
    return raw.strip()


def parse_lines(lines) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_flat(path: str | Path) -> dict[str, str]:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_lines(fh)
    except OSError as exc:
        raise ConfigError(str(exc)) from None


def build_spec(flat: dict[str, str], base: ExperimentSpec | None = None) -> ExperimentSpec:
    spec = base or ExperimentSpec()
    sections = {"data": {}, "trainer": {}, "eval": {}}
    top = {}
    for key, raw in flat.items():
        if "." not in key:
            if key == "seeds":
                top["seeds"] = tuple(int(s) for s in raw.replace(",", " ").split())
            elif key == "output_dir":
                top["output_dir"] = raw
            else:
                raise ConfigError(f"unknown key {key!r}")
            continue
        section, name = key.split(".", 1)
        section = _SECTION_ALIASES.get(section, section)
        if section not in sections:
            raise ConfigError(f"unknown section in {key!r}")
        sections[section][name] = raw
    try:
        updated = {}
        for section, values in sections.items():
            current = getattr(spec, section)
            types = {f.name: f.type for f in fields(current)}
            for name in values:
                if name not in types:
                    raise ConfigError(f"unknown key {section}.{name}")
            updated[section] = replace(current, **{n: _coerce(v, types[n]) for n, v in values.items()})
        spec = replace(spec, **updated, **top)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    if not spec.seeds:
        raise ConfigError("seed list must be non-empty")
    return spec


def dump_flat(spec: ExperimentSpec) -> str:
    lines = [f"seeds={','.join(str(s) for s in spec.seeds)}"]
    for section in ("data", "trainer", "eval"):
        obj = getattr(spec, section)
        for f in fields(obj):
            value = getattr(obj, f.name)
            prefix = "sampler" if section == "trainer" and f.name in _SAMPLER_KEYS else section
            lines.append(f"{prefix}.{f.name}={value}")
    return "\n".join(lines) + "\n"
