"""Mini-batch SGD with momentum: baseline training, ADMM W-updates, and
masked retraining all run through the same loop.

Gradient hooks let callers adjust per-parameter gradients before each
step; the ADMM proximal term and the prune-mask enforcement are both
hooks. With a fixed seed the loop is bitwise reproducible.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Dict, Optional

import numpy as np

from . import model as model_mod
from .exceptions import ConfigError, NonFiniteError, TrainingDivergedError
from .mnist import Dataset, batches

log = logging.getLogger(__name__)

# (param name, raw gradient) -> adjusted gradient, same shape
GradHook = Callable[[str, np.ndarray], np.ndarray]


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 64
    steps: Optional[int] = None
    epochs: Optional[int] = None
    seed: int = 0
    # learning rate multiplies by decay_factor at these fractions of the run
    decay_milestones: tuple = (0.5, 0.75)
    decay_factor: float = 0.1

    def validate(self) -> "TrainConfig":
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0,1), got {self.momentum}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.steps is None and self.epochs is None:
            raise ConfigError("one of steps or epochs must be set")
        for name, value in (("steps", self.steps), ("epochs", self.epochs)):
            if value is not None and value < 0:
                raise ConfigError(f"{name} must be >= 0, got {value}")
        return self

    def resolve_steps(self, n_samples: int) -> int:
        if self.steps is not None:
            return self.steps
        return self.epochs * math.ceil(n_samples / self.batch_size)

    def lr_at(self, step: int, total_steps: int) -> float:
        lr = self.learning_rate
        for milestone in self.decay_milestones:
            if total_steps > 0 and step >= milestone * total_steps:
                lr *= self.decay_factor
        return lr


def sgd_step(model, grads: Dict[str, np.ndarray], velocity: Dict[str, np.ndarray],
             config: TrainConfig, lr: Optional[float] = None) -> None:
    """v <- momentum*v - lr*g; W <- W + v, in place per parameter."""
    if lr is None:
        lr = config.learning_rate
    mom = np.float32(config.momentum)
    lr32 = np.float32(lr)
    for name, param in model.parameters():
        if name not in grads:
            raise RuntimeError(f"sgd_step: missing gradient for parameter {name!r}")
        v = velocity[name]
        v *= mom
        v -= lr32 * grads[name]
        param += v


def train(model, dataset: Dataset, config: TrainConfig,
          hook: Optional[GradHook] = None,
          on_step: Optional[Callable[[int], None]] = None):
    """Run the configured number of SGD steps with seeded shuffling.

    The hook, when given, is applied to every parameter gradient before
    the update. Returns (model, per-step loss trace). Aborts with
    TrainingDivergedError on a non-finite loss.
    """
    config.validate()
    total_steps = config.resolve_steps(len(dataset))
    velocity = {name: np.zeros_like(p) for name, p in model.parameters()}
    losses: list[float] = []
    step = 0
    epoch = 0
    while step < total_steps:
        for images, labels in batches(dataset, config.batch_size,
                                      seed=[config.seed, epoch], shuffle=True):
            if step >= total_steps:
                break
            x = model_mod.prepare_batch(model, images)
            try:
                loss, grads = model_mod.loss_and_grads(model, x, labels)
            except NonFiniteError as exc:
                raise TrainingDivergedError(f"step {step}: {exc}") from exc
            if not math.isfinite(loss):
                bad = [n for n, g in grads.items() if not np.all(np.isfinite(g))]
                raise TrainingDivergedError(
                    f"step {step}: non-finite loss {loss!r}"
                    + (f" (first bad parameter: {bad[0]})" if bad else "")
                )
            if hook is not None:
                grads = {name: hook(name, g) for name, g in grads.items()}
            sgd_step(model, grads, velocity, config, config.lr_at(step, total_steps))
            losses.append(loss)
            step += 1
            if on_step is not None:
                on_step(step)
        epoch += 1
        if losses:
            log.debug("epoch %d done at step %d, last loss %.4f", epoch, step, losses[-1])
    return model, losses


def apply_grad_mask(mask: Dict[str, np.ndarray]) -> GradHook:
    """Hook that zeroes weight gradients where the layer mask is 0.

    Bias gradients and unmasked layers pass through unchanged. Velocity
    entries start at zero in train(), so masked coordinates stay frozen
    exactly.
    """
    def hook(name: str, grad: np.ndarray) -> np.ndarray:
        if name.endswith(".W") and name[:-2] in mask:
            m = mask[name[:-2]]
            if m.shape != grad.shape:
                raise ConfigError(
                    f"mask shape {m.shape} does not match gradient {grad.shape} "
                    f"for {name}"
                )
            return grad * m
        return grad

    return hook


def derive_config(config: TrainConfig, **overrides) -> TrainConfig:
    """Copy a TrainConfig with field overrides (plumbing for phases)."""
    return replace(config, **overrides)
