"""Run configuration: defaults, built-in profiles, file and flag overrides."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .model import Ablation, ModelConfig, config_hash
from .training import TrainConfig


class RunConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # data
    n_profiles: int = 600
    data_seed: int = 0
    signal_strength: float = 0.9
    positive_fraction: float = 0.4
    blank_fraction: float = 0.05
    split_fractions: tuple = (0.90, 0.05, 0.05)
    # tokenizer
    vocab_size: int = 500
    # model
    sentences: int = 4
    words: int = 12
    dim: int = 32
    heads: int = 4
    ffn_dim: int = 64
    dropout: float = 0.1
    gelu_approximate: bool = False
    use_bpe: bool = True
    use_mha: bool = True
    use_grc: bool = True
    # training
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 50
    scheduler_patience: int = 3
    scheduler_factor: float = 0.1
    min_lr: float = 1e-7
    early_stop_patience: int = 10
    clip_max_norm: float = 1.0
    weight_decay: float = 1e-4
    decay_mode: str = "decoupled"
    seed: int = 0
    ablation_seeds: tuple = (0, 1, 2)

    @property
    def flags(self) -> Ablation:
        return Ablation(self.use_bpe, self.use_mha, self.use_grc)

    def train_config(self, seed: int | None = None) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            scheduler_patience=self.scheduler_patience,
            scheduler_factor=self.scheduler_factor,
            min_lr=self.min_lr,
            early_stop_patience=self.early_stop_patience,
            clip_max_norm=self.clip_max_norm,
            weight_decay=self.weight_decay,
            decay_mode=self.decay_mode,
            dropout=self.dropout,
            seed=self.seed if seed is None else seed,
        )

    def model_config(self, vocab_size: int, flags: Ablation | None = None) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size,
            dim=self.dim,
            heads=self.heads,
            ffn_dim=self.ffn_dim,
            dropout=self.dropout,
            gelu_approximate=self.gelu_approximate,
            flags=flags or self.flags,
        )

    def shape_hash(self, flags: Ablation | None = None) -> str:
        """Hash of everything that fixes checkpoint tensor shapes and semantics."""
        flags = flags or self.flags
        return config_hash(
            {
                "vocab_size": self.vocab_size,
                "sentences": self.sentences,
                "words": self.words,
                "dim": self.dim,
                "heads": self.heads,
                "ffn_dim": self.ffn_dim,
                "gelu_approximate": self.gelu_approximate,
                "flags": asdict(flags),
            }
        )

    def validate(self) -> "RunConfig":
        problems = {
            "n_profiles": self.n_profiles >= 4,
            "signal_strength": 0.0 <= self.signal_strength <= 1.0,
            "positive_fraction": 0.0 < self.positive_fraction < 1.0,
            "blank_fraction": 0.0 <= self.blank_fraction < 1.0,
            "split_fractions": len(self.split_fractions) == 3
            and all(f >= 0 for f in self.split_fractions)
            and abs(sum(self.split_fractions) - 1.0) < 1e-9,
            "vocab_size": self.vocab_size >= 1,
            "sentences": self.sentences >= 1,
            "words": self.words >= 1,
            "dim": self.dim >= 1,
            "heads": self.heads >= 1 and self.dim % max(self.heads, 1) == 0,
            "ffn_dim": self.ffn_dim >= self.dim,
            "dropout": 0.0 <= self.dropout < 1.0,
            "ablation_seeds": len(self.ablation_seeds) >= 1,
        }
        for name, ok in problems.items():
            if not ok:
                raise RunConfigError(f"invalid {name}: {getattr(self, name)!r}")
        try:
            self.train_config().validate()
        except ValueError as exc:
            raise RunConfigError(str(exc)) from None
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split_fractions"] = list(self.split_fractions)
        d["ablation_seeds"] = list(self.ablation_seeds)
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


# desk: what CI runs.  paper: full-scale hyperparameters, kept as documentation.
PROFILES = {
    "desk": {},
    "paper": {
        "n_profiles": 3083,
        "vocab_size": 5000,
        "sentences": 10,
        "words": 50,
        "dim": 768,
        "heads": 8,
        "ffn_dim": 1024,
        "dropout": 0.6,
        "learning_rate": 1e-5,
        "batch_size": 32,
        "max_epochs": 50,
    },
}

_FIELD_TYPES = {f.name: f for f in fields(RunConfig)}


def _coerce(name: str, value):
    default = getattr(RunConfig(), name)
    try:
        if isinstance(default, bool):
            if isinstance(value, str):
                lowered = value.strip().lower()
                if lowered not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(value)
                return lowered in ("true", "1", "yes")
            if not isinstance(value, (bool, int)):
                raise ValueError(value)
            return bool(value)
        if isinstance(default, tuple):
            if isinstance(value, str):
                value = [v for v in value.split(",") if v.strip()]
            kind = type(default[0])
            return tuple(kind(v) for v in value)
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if isinstance(default, float):
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise RunConfigError(f"invalid {name}: {value!r}") from None


def apply_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    unknown = sorted(set(overrides) - set(_FIELD_TYPES))
    if unknown:
        raise RunConfigError(f"unknown config field(s): {', '.join(unknown)}")
    return replace(cfg, **{k: _coerce(k, v) for k, v in overrides.items()})


def load_run_config(
    profile: str = "desk", path=None, overrides: dict | None = None
) -> RunConfig:
    """Defaults < profile < config file < explicit overrides."""
    if profile not in PROFILES:
        raise RunConfigError(f"unknown profile {profile!r}; choose from {', '.join(PROFILES)}")
    cfg = apply_overrides(RunConfig(), PROFILES[profile])
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise RunConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise RunConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise RunConfigError(f"config file {path} must hold a JSON object")
        cfg = apply_overrides(cfg, doc)
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg.validate()
