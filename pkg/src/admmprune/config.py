"""Run configuration: JSON in, validated dataclasses out.

A run config names the architecture, data and output directories, the
baseline/retrain trainer settings, and the ADMM block (budgets, rho,
epsilon, iteration counts). Unset trainer seeds derive from the top-level
seed so each phase shuffles independently but reproducibly.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Optional

from .admm import AdmmConfig
from .exceptions import ConfigError
from .model import ARCHITECTURES, PRUNABLE_LAYERS
from .trainer import TrainConfig

_TRAIN_FIELDS = {f.name for f in dataclasses.fields(TrainConfig)}
_ADMM_FIELDS = {"budgets", "rho", "epsilon", "max_iters", "w_update_steps", "train"}
_RUN_FIELDS = {"arch", "data_dir", "output_dir", "seed", "deterministic",
               "train", "retrain", "admm"}


@dataclass
class RunConfig:
    arch: str
    data_dir: str
    output_dir: str
    admm: AdmmConfig
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=5))
    retrain: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=5))
    seed: int = 0
    deterministic: bool = True

    def validate(self) -> "RunConfig":
        if self.arch not in ARCHITECTURES:
            raise ConfigError(f"unknown arch {self.arch!r}; expected one of {ARCHITECTURES}")
        expected = set(PRUNABLE_LAYERS[self.arch])
        if set(self.admm.budgets) != expected:
            raise ConfigError(
                f"admm.budgets must name exactly {sorted(expected)} for "
                f"{self.arch}, got {sorted(self.admm.budgets)}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        self.train.validate()
        self.retrain.validate()
        return self


def _train_config(raw: dict, where: str, default_decay=True) -> TrainConfig:
    unknown = set(raw) - _TRAIN_FIELDS
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)} in {where}")
    cfg = TrainConfig(**raw)
    if not default_decay and "decay_milestones" not in raw:
        cfg = dataclasses.replace(cfg, decay_milestones=())
    if "decay_milestones" in raw:
        cfg = dataclasses.replace(cfg, decay_milestones=tuple(raw["decay_milestones"]))
    return cfg


def run_config_from_dict(raw: dict) -> RunConfig:
    """Build and validate a RunConfig from parsed JSON."""
    unknown = set(raw) - _RUN_FIELDS
    if unknown:
        raise ConfigError(f"unknown top-level config keys {sorted(unknown)}")
    for key in ("arch", "data_dir", "output_dir"):
        if key not in raw:
            raise ConfigError(f"config is missing required key {key!r}")
    if "admm" not in raw or "budgets" not in raw["admm"]:
        raise ConfigError("config needs an admm block with per-layer budgets")

    admm_raw = dict(raw["admm"])
    unknown = set(admm_raw) - _ADMM_FIELDS
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)} in admm block")
    admm_train = _train_config(admm_raw.pop("train", {}), "admm.train",
                               default_decay=False)
    admm = AdmmConfig(train=admm_train, **admm_raw)

    config = RunConfig(
        arch=raw["arch"],
        data_dir=raw["data_dir"],
        output_dir=raw["output_dir"],
        admm=admm,
        train=_train_config(raw.get("train", {}), "train"),
        retrain=_train_config(raw.get("retrain", {}), "retrain"),
        seed=int(raw.get("seed", 0)),
        deterministic=bool(raw.get("deterministic", True)),
    )
    return config.validate()


def load_run_config(path: str) -> RunConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return run_config_from_dict(raw)


def effective_dict(config: RunConfig) -> dict:
    """The fully resolved config (defaults filled) as a JSON-able dict."""
    def train_dict(cfg: TrainConfig) -> dict:
        out = dataclasses.asdict(cfg)
        out["decay_milestones"] = list(cfg.decay_milestones)
        return out

    return {
        "arch": config.arch,
        "data_dir": config.data_dir,
        "output_dir": config.output_dir,
        "seed": config.seed,
        "deterministic": config.deterministic,
        "train": train_dict(config.train),
        "retrain": train_dict(config.retrain),
        "admm": {
            "budgets": dict(config.admm.budgets),
            "rho": config.admm.rho,
            "epsilon": config.admm.epsilon,
            "max_iters": config.admm.max_iters,
            "w_update_steps": config.admm.w_update_steps,
            "train": train_dict(config.admm.train),
        },
    }


def save_effective_config(path: str, config: RunConfig) -> None:
    with open(path, "w") as fh:
        json.dump(effective_dict(config), fh, indent=2, sort_keys=True)
        fh.write("\n")
