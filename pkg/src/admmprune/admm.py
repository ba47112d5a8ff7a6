"""ADMM weight pruning: alternating proximal SGD over W, analytic top-k
magnitude projection for Z, dual updates for U, residual-based stopping,
hard pruning, and masked retraining.

One iteration is W-update (approximate argmin of the loss plus the
quadratic proximal term, via T SGD steps), Z-update (project W+U onto the
per-layer cardinality set), U-update (U += W - Z), then both squared
Frobenius residuals per layer. The loop stops once every layer satisfies
||W-Z||_F^2 <= eps and ||Z_new - Z_old||_F^2 <= eps, or at max_iters.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Optional

import numpy as np

from . import tensor_core as tc
from . import trainer as trainer_mod
from .exceptions import ConfigError, InputError
from .model import Model, params, prepare_batch, forward
from .trainer import GradHook, TrainConfig

log = logging.getLogger(__name__)


@dataclass
class AdmmConfig:
    """Per-layer budgets and penalties plus loop controls.

    budgets maps layer name to either an absolute kept-weight count (int)
    or a retain fraction in (0,1] (float, rounded to a count, minimum 1).
    rho and epsilon accept a single scalar or a per-layer map; epsilon
    defaults to 1e-4 * count(W_i), applied to the squared residuals.
    """

    budgets: Dict[str, object]
    rho: object = 0.01
    epsilon: object = None
    max_iters: int = 40
    w_update_steps: Optional[int] = None
    train: TrainConfig = field(
        default_factory=lambda: TrainConfig(decay_milestones=()))

    def _per_layer(self, value, names, what, default=None):
        if value is None:
            return {name: default[name] for name in names}
        if isinstance(value, dict):
            unknown = set(value) - set(names)
            if unknown:
                raise ConfigError(f"{what} names {sorted(unknown)} are not prunable layers")
            out = {name: float(value.get(name, default[name] if default else None))
                   for name in names}
            if any(v is None for v in out.values()):
                missing = [n for n, v in out.items() if v is None]
                raise ConfigError(f"{what} missing for layers {missing}")
            return out
        return {name: float(value) for name in names}

    def resolve(self, model: Model) -> "ResolvedAdmm":
        layers = params(model)
        names = [name for name, _ in layers]
        counts = {name: int(w.size) for name, w in layers}
        if set(self.budgets) != set(names):
            raise ConfigError(
                f"budgets must name exactly {names}, got {sorted(self.budgets)}"
            )
        budgets = {}
        for name in names:
            raw = self.budgets[name]
            if isinstance(raw, bool):
                raise ConfigError(f"budget for {name} must be a count or fraction")
            if isinstance(raw, float):
                if not 0 < raw <= 1:
                    raise ConfigError(f"fractional budget for {name} must be in (0,1], got {raw}")
                budget = max(1, int(round(raw * counts[name])))
            else:
                budget = int(raw)
            if not 1 <= budget <= counts[name]:
                raise ConfigError(
                    f"budget {budget} for {name} outside [1, {counts[name]}]"
                )
            budgets[name] = budget
        rho = self._per_layer(self.rho, names, "rho")
        if any(v <= 0 for v in rho.values()):
            raise ConfigError(f"rho must be positive, got {rho}")
        eps_default = {name: 1e-4 * counts[name] for name in names}
        epsilon = self._per_layer(self.epsilon, names, "epsilon", default=eps_default)
        if any(v <= 0 for v in epsilon.values()):
            raise ConfigError(f"epsilon must be positive, got {epsilon}")
        if self.max_iters < 0:
            raise ConfigError(f"max_iters must be >= 0, got {self.max_iters}")
        if self.w_update_steps is not None and self.w_update_steps < 0:
            raise ConfigError(f"w_update_steps must be >= 0, got {self.w_update_steps}")
        return ResolvedAdmm(budgets=budgets, rho=rho, epsilon=epsilon,
                            counts=counts, w_update_steps=self.w_update_steps)


@dataclass
class ResolvedAdmm:
    budgets: Dict[str, int]
    rho: Dict[str, float]
    epsilon: Dict[str, float]
    counts: Dict[str, int]
    w_update_steps: Optional[int]


@dataclass
class AdmmState:
    """Auxiliary variables Z, scaled duals U, and the residual history."""

    Z: Dict[str, np.ndarray]
    U: Dict[str, np.ndarray]
    Z_prev: Optional[Dict[str, np.ndarray]] = None
    k: int = 0
    history: list = field(default_factory=list)


def top_magnitude_indices(m: np.ndarray, keep: int) -> np.ndarray:
    """Flat indices of the `keep` largest-magnitude entries.

    Ties break toward the lower linear index (stable sort on descending
    magnitude), so selection is deterministic and scale-invariant.
    """
    return np.argsort(-np.abs(m.ravel()), kind="stable")[:keep]


def project_cardinality(m: np.ndarray, keep: int) -> np.ndarray:
    """Euclidean projection onto {card(x) <= keep}: zero all but the
    `keep` largest-magnitude entries."""
    n = m.size
    if not 1 <= keep <= n:
        raise InputError(f"keep={keep} outside [1, {n}]")
    out = np.zeros_like(m)
    idx = top_magnitude_indices(m, keep)
    out.ravel()[idx] = m.ravel()[idx]
    return out


def init_admm(model: Model, config: AdmmConfig) -> AdmmState:
    """Z0 = projection of the current weights, U0 = 0."""
    resolved = config.resolve(model)
    z0 = {name: project_cardinality(w, resolved.budgets[name])
          for name, w in params(model)}
    u0 = {name: np.zeros_like(w) for name, w in params(model)}
    return AdmmState(Z=z0, U=u0)


def augmented_grad_hook(model: Model, state: AdmmState,
                        config: AdmmConfig) -> GradHook:
    """Gradient hook adding the proximal term rho*(W - Z + U) per layer.

    Reads the live weight tensors, computes the term in float64, and
    casts the adjusted gradient back to float32. Bias gradients pass
    through unchanged.
    """
    resolved = config.resolve(model)
    weights = dict(params(model))

    def hook(name: str, grad: np.ndarray) -> np.ndarray:
        if not name.endswith(".W") or name[:-2] not in weights:
            return grad
        layer = name[:-2]
        w = weights[layer].astype(np.float64)
        term = resolved.rho[layer] * (w - state.Z[layer] + state.U[layer])
        return (grad + term).astype(np.float32)

    return hook


def augmented_objective(model: Model, state: AdmmState, config: AdmmConfig,
                        images: np.ndarray, labels: np.ndarray) -> float:
    """Loss on a batch plus sum_i (rho_i/2)*||W_i - Z_i + U_i||_F^2."""
    resolved = config.resolve(model)
    logits = forward(model, prepare_batch(model, images))
    loss, _ = tc.softmax_cross_entropy(logits, labels)
    for name, w in params(model):
        diff = w.astype(np.float64) - state.Z[name] + state.U[name]
        loss += 0.5 * resolved.rho[name] * tc.frobenius_sq(diff)
    return float(loss)


def w_update(model: Model, state: AdmmState, config: AdmmConfig,
             dataset) -> Model:
    """Approximate the W-subproblem with T SGD steps under the proximal hook."""
    resolved = config.resolve(model)
    if resolved.w_update_steps is None:
        raise ConfigError("w_update_steps is unset; set it or derive it from "
                          "the baseline step count")
    tcfg = replace(config.train, steps=resolved.w_update_steps, epochs=None,
                   seed=config.train.seed + state.k)
    hook = augmented_grad_hook(model, state, config)
    trainer_mod.train(model, dataset, tcfg, hook=hook)
    return model


def z_update(state: AdmmState, model: Model, config: AdmmConfig) -> None:
    """Z <- projection of (W + U) onto each layer's cardinality set."""
    resolved = config.resolve(model)
    state.Z_prev = state.Z
    new_z = {}
    for name, w in params(model):
        new_z[name] = project_cardinality(w + state.U[name], resolved.budgets[name])
    state.Z = new_z


def u_update(state: AdmmState, model: Model) -> None:
    """U <- U + (W - Z), elementwise float32; increments the iteration count."""
    for name, w in params(model):
        state.U[name] = state.U[name] + (w - state.Z[name])
    state.k += 1


def residuals(state: AdmmState, model: Model):
    """Per-layer (||W-Z||_F^2, ||Z_new - Z_prev||_F^2), appended to history."""
    if state.Z_prev is None:
        raise InputError("residuals: no completed iteration (Z_prev unset)")
    r = {}
    s = {}
    for name, w in params(model):
        r[name] = tc.frobenius_sq(w.astype(np.float64) - state.Z[name])
        s[name] = tc.frobenius_sq(
            state.Z[name].astype(np.float64) - state.Z_prev[name])
    state.history.append({"iteration": state.k, "r": r, "s": s})
    return r, s


def _stop_satisfied(r, s, epsilon) -> bool:
    return all(r[n] <= epsilon[n] and s[n] <= epsilon[n] for n in epsilon)


def run_admm(model: Model, config: AdmmConfig, dataset=None, *,
             state: Optional[AdmmState] = None,
             w_solver: Optional[Callable] = None,
             log_path: Optional[str] = None,
             probe_size: int = 256):
    """Run the ADMM loop until both residual conditions hold or max_iters.

    w_solver(model, state, config) may replace the SGD-based W-update
    (used by the closed-form toy problem); the default requires a dataset.
    Writes one machine-parseable JSON line per iteration to log_path when
    given. Returns (model, state, converged).
    """
    resolved = config.resolve(model)
    if state is None:
        state = init_admm(model, config)
    if w_solver is None:
        if dataset is None:
            raise InputError("run_admm needs a dataset unless w_solver is given")
        w_solver = lambda m, st, cfg: w_update(m, st, cfg, dataset)

    probe = None
    if dataset is not None:
        take = min(probe_size, len(dataset))
        probe = (dataset.images[:take], dataset.labels[:take])

    logf = open(log_path, "w") if log_path else None
    try:
        if config.max_iters == 0:
            r0 = {name: tc.frobenius_sq(w.astype(np.float64) - state.Z[name])
                  for name, w in params(model)}
            return model, state, all(r0[n] <= resolved.epsilon[n] for n in r0)
        converged = False
        for _ in range(config.max_iters):
            started = time.perf_counter()
            w_solver(model, state, config)
            z_update(state, model, config)
            u_update(state, model)
            r, s = residuals(state, model)
            converged = _stop_satisfied(r, s, resolved.epsilon)
            record = state.history[-1]
            record["seconds"] = time.perf_counter() - started
            record["augmented_loss"] = (
                augmented_objective(model, state, config, *probe)
                if probe is not None else None)
            record["epsilon"] = dict(resolved.epsilon)
            record["converged"] = converged
            log.info(
                "admm iter %d: max r=%.3e max s=%.3e%s", state.k,
                max(r.values()), max(s.values()),
                " (converged)" if converged else "")
            if logf:
                logf.write(json.dumps(record) + "\n")
                logf.flush()
            if converged:
                break
        return model, state, converged
    finally:
        if logf:
            logf.close()


def hard_prune(model: Model, config: AdmmConfig):
    """Keep the l_i largest-magnitude weights per layer, zero the rest.

    Returns (model, mask) where each mask is a float32 0/1 tensor with
    exactly l_i ones.
    """
    resolved = config.resolve(model)
    masks = {}
    for name, w in params(model):
        mask = np.zeros_like(w)
        idx = top_magnitude_indices(w, resolved.budgets[name])
        mask.ravel()[idx] = 1.0
        w[mask == 0] = 0.0
        masks[name] = mask
    return model, masks


def retrain_masked(model: Model, mask: Dict[str, np.ndarray], dataset,
                   train_config: TrainConfig,
                   on_step: Optional[Callable[[int], None]] = None):
    """Retrain the pruned model with gradients zeroed off the mask."""
    names = [name for name, _ in params(model)]
    if set(mask) != set(names):
        raise ConfigError(f"mask must cover exactly {names}, got {sorted(mask)}")
    for name, w in params(model):
        if mask[name].shape != w.shape:
            raise ConfigError(
                f"mask shape {mask[name].shape} != weights {w.shape} for {name}")
        if np.any(w[mask[name] == 0] != 0):
            raise InputError(f"{name}: weights are nonzero off the mask; "
                             "hard_prune must run first")
    hook = trainer_mod.apply_grad_mask(mask)
    return trainer_mod.train(model, dataset, train_config, hook=hook,
                             on_step=on_step)
