"""TOML run configuration with range checks and unknown-key rejection."""
from __future__ import annotations

import dataclasses
import json
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

from .experts import RetrievalBudget
from .mmapo import TrainConfig
from .rewards import DEFAULT_COSTS, CostModel
from .synth import SynthConfig


class ConfigError(ValueError):
    """Malformed or out-of-range configuration."""


@dataclass
class DataPaths:
    dir: str = "data"
    triples: str = "triples.tsv"
    entities: str = "entities.jsonl"
    relations: str = "relations.jsonl"
    item_map: str = "item_map.tsv"
    items: str = "items.jsonl"
    train: str = "train.jsonl"
    eval: str = "eval.jsonl"

    def path(self, name: str) -> Path:
        p = Path(getattr(self, name))
        return p if p.is_absolute() else Path(self.dir) / p


@dataclass
class EncoderConfig:
    kind: str = "hash"  # hash | remote
    dim: int = 512
    seed: int = 0
    sublinear: bool = True
    idf: bool = True
    model: str = "sentence-transformers/all-MiniLM-L6-v2"
    endpoint: str = ""  # falls back to GKG_EMBED_URL
    cache: str = ""


@dataclass
class RewardConfig:
    alpha: float = 0.2
    eta: float = 0.005
    costs: tuple = DEFAULT_COSTS
    prob_floor: float = 1e-8


@dataclass
class RouterConfig:
    mode: str = "learned"  # learned | random | fixed
    fixed_expert: int = 0


@dataclass
class RecommenderConfig:
    scorer_scale: float = 20.0
    use_llm: bool = False
    temperature: float = 0.8
    n_samples: int = 8


@dataclass
class GeneratorConfig:
    endpoint: str = ""  # falls back to GKG_LLM_URL
    model: str = "default"
    align_with_llm: bool = False


@dataclass
class LoraConfig:
    """Fine-tuning settings for an external backbone; recorded, not used by the surrogate."""
    r: int = 16
    alpha: int = 32
    dropout: float = 0.1
    int8: bool = True
    fp16: bool = True


@dataclass
class EvalConfig:
    seed: int = 1
    history_len: int = 10
    n_candidates: int = 20


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    domain: str = "movie"  # movie | music
    data: DataPaths = field(default_factory=DataPaths)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    retrieval: RetrievalBudget = field(default_factory=RetrievalBudget)
    reward: RewardConfig = field(default_factory=RewardConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    router: RouterConfig = field(default_factory=RouterConfig)
    recommender: RecommenderConfig = field(default_factory=RecommenderConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    lora: LoraConfig = field(default_factory=LoraConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def __post_init__(self):
        validate(self)

    def train_config(self) -> TrainConfig:
        """Training settings with the run seed and reward weights folded in."""
        return dataclasses.replace(self.train, seed=self.seed, alpha=self.reward.alpha,
                                   eta=self.reward.eta)

    def cost_model(self) -> CostModel:
        return CostModel(tuple(self.reward.costs))

    def synth_config(self) -> SynthConfig:
        return dataclasses.replace(self.synth, seed=self.seed)

    def to_dict(self) -> dict:
        """Effective settings: shadowed section keys show the values actually used."""
        d = _to_dict(self)
        d["train"] = _to_dict(self.train_config())
        d["synth"]["seed"] = self.seed
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


# sections whose keys are owned elsewhere in the file
_SHADOWED = {"train": {"seed", "alpha", "eta"}, "synth": {"seed"}}


def _to_dict(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_dict(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, tuple):
        return [_to_dict(x) for x in obj]
    return obj


def _coerce(name: str, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{name}: expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{name}: expected a list, got {value!r}")
        return tuple(value)
    return value


def _section(cls, name: str, table: dict):
    if not isinstance(table, dict):
        raise ConfigError(f"[{name}] must be a table")
    proto = cls()
    known = {f.name for f in fields(cls) if f.init} - _SHADOWED.get(name, set())
    unknown = sorted(set(table) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(unknown)}")
    kwargs = {k: _coerce(f"{name}.{k}", v, getattr(proto, k)) for k, v in table.items()}
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


_SECTIONS = {f.name: f for f in fields(RunConfig) if dataclasses.is_dataclass(f.default_factory)}


def from_dict(raw: dict) -> RunConfig:
    top = {k: v for k, v in raw.items() if k not in _SECTIONS}
    unknown = sorted(set(top) - {"seed", "out_dir", "domain"})
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    base = RunConfig.__new__(RunConfig)
    defaults = RunConfig.__dataclass_fields__
    for k in ("seed", "out_dir", "domain"):
        default = defaults[k].default
        setattr(base, k, _coerce(k, top[k], default) if k in top else default)
    for name, f in _SECTIONS.items():
        table = raw.get(name, {})
        setattr(base, name, _section(f.default_factory, name, table) if table else f.default_factory())
    validate(base)
    return base


def load_config(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(raw)


def validate(cfg: RunConfig):
    bad = []
    if not isinstance(cfg.seed, int) or cfg.seed < 0:
        bad.append("seed must be a non-negative integer")
    if cfg.domain not in ("movie", "music"):
        bad.append("domain must be 'movie' or 'music'")
    e = cfg.encoder
    if e.kind not in ("hash", "remote"):
        bad.append("encoder.kind must be 'hash' or 'remote'")
    if e.kind == "hash" and not 8 <= e.dim <= 65536:
        bad.append("encoder.dim must lie in [8, 65536]")
    r = cfg.reward
    if r.alpha < 0:
        bad.append("reward.alpha must be >= 0")
    if r.eta < 0:
        bad.append("reward.eta must be >= 0")
    if not 0 < r.prob_floor < 1e-2:
        bad.append("reward.prob_floor must lie in (0, 0.01)")
    try:
        CostModel(tuple(r.costs))
    except (TypeError, ValueError) as exc:
        bad.append(f"reward.costs: {exc}")
    if cfg.router.mode not in ("learned", "random", "fixed"):
        bad.append("router.mode must be learned, random or fixed")
    if cfg.router.mode == "fixed" and cfg.router.fixed_expert not in (1, 2, 3, 4):
        bad.append("router.fixed_expert must be 1..4 when router.mode = 'fixed'")
    rc = cfg.recommender
    if rc.scorer_scale <= 0:
        bad.append("recommender.scorer_scale must be > 0")
    if not 0 <= rc.temperature <= 2:
        bad.append("recommender.temperature must lie in [0, 2]")
    if rc.n_samples < 1:
        bad.append("recommender.n_samples must be >= 1")
    if not 0 <= cfg.lora.dropout < 1 or cfg.lora.r < 1:
        bad.append("lora settings out of range")
    ev = cfg.eval
    if ev.n_candidates != 20:
        bad.append("eval.n_candidates is fixed at 20")
    if ev.history_len < 1:
        bad.append("eval.history_len must be >= 1")
    if ev.seed < 0:
        bad.append("eval.seed must be >= 0")
    if bad:
        raise ConfigError("; ".join(bad))


def default_toml() -> str:
    """A fully populated config file with every default spelled out."""
    d = RunConfig().to_dict()
    lines = ["# gkgrec run configuration"] + [f"{k} = {_toml_value(d[k])}"
                                              for k in ("seed", "out_dir", "domain")]
    for name in _SECTIONS:
        lines += ["", f"[{name}]"]
        lines += [f"{k} = {_toml_value(v)}" for k, v in d[name].items()
                  if k not in _SHADOWED.get(name, set())]
    return "\n".join(lines) + "\n"


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    if isinstance(v, float):
        return repr(v)
    return str(v)
