"""AdamW, warm-up + plateau learning-rate schedule, and gradient clipping."""

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from micon.errors import NonFiniteError

logger = logging.getLogger(__name__)

Params = dict[str, np.ndarray]


@dataclass(frozen=True)
class OptimizerState:
    """AdamW hyper-parameters plus per-block moment estimates."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2
    step: int = 0
    first_moment: Params = field(default_factory=dict)
    second_moment: Params = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.lr < 0.0:
            raise ValueError(f"Learning rate must be >= 0, got {self.lr}.")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError(f"Betas must lie in [0, 1), got ({self.beta1}, {self.beta2}).")
        if self.step < 0:
            raise ValueError(f"Optimizer step must be >= 0, got {self.step}.")


def adamw_step(
    params: Params,
    grads: Params,
    state: OptimizerState,
) -> tuple[Params, OptimizerState]:
    """Apply one AdamW update.

    Weight decay is decoupled: ``p <- p - lr * weight_decay * p`` is applied
    next to, not inside, the bias-corrected adaptive step. Blocks absent from
    ``grads`` are returned untouched.

    Raises:
        NonFiniteError: If a gradient block holds NaN or inf.
        ValueError: If a gradient shape differs from its parameter block.
    """
    for name, grad in grads.items():
        if name not in params:
            raise KeyError(f"Gradient for unknown parameter block '{name}'.")
        if grad.shape != params[name].shape:
            raise ValueError(f"Gradient shape {grad.shape} != parameter shape {params[name].shape} for '{name}'.")
        if not np.isfinite(grad).all():
            raise NonFiniteError(f"Non-finite gradient in parameter block '{name}'.", block=name)

    step = state.step + 1
    correction1 = 1.0 - state.beta1**step
    correction2 = 1.0 - state.beta2**step
    decay = 1.0 - state.lr * state.weight_decay

    new_params = dict(params)
    first = dict(state.first_moment)
    second = dict(state.second_moment)
    for name, grad in grads.items():
        m = first.get(name)
        v = second.get(name)
        if m is None:
            m = np.zeros_like(grad)
            v = np.zeros_like(grad)
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        first[name] = m
        second[name] = v
        update = (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        new_params[name] = params[name] * decay - state.lr * update

    return new_params, replace(state, step=step, first_moment=first, second_moment=second)


@dataclass
class SchedulerState:
    """Linear warm-up followed by reduce-on-plateau.

    Mutated in place by ``scheduler_step``; one scheduler per training run.
    """

    warmup_steps: int = 2000
    base_lr: float = 1e-3
    plateau_factor: float = 0.5
    patience: int = 3
    best_metric: float = math.inf
    steps_since_improve: int = 0
    current_lr: float = field(default=-1.0)

    def __post_init__(self) -> None:
        if not 0.0 < self.plateau_factor < 1.0:
            raise ValueError(f"Plateau factor must lie in (0, 1), got {self.plateau_factor}.")
        if self.warmup_steps < 0 or self.patience < 0:
            raise ValueError("Warm-up steps and patience must be >= 0.")
        if self.current_lr < 0.0:
            self.current_lr = self.base_lr


def scheduler_step(state: SchedulerState, global_step: int, val_metric: float | None = None) -> float:
    """Return the learning rate for ``global_step``.

    During warm-up the rate ramps linearly from 0 to ``base_lr`` and validation
    metrics are ignored. Afterwards each supplied metric either improves on the
    best seen so far or counts against ``patience``; exceeding ``patience``
    multiplies the rate by ``plateau_factor``.
    """
    if global_step < state.warmup_steps:
        return state.base_lr * global_step / state.warmup_steps

    if val_metric is not None:
        if val_metric < state.best_metric:
            state.best_metric = val_metric
            state.steps_since_improve = 0
        else:
            state.steps_since_improve += 1
            if state.steps_since_improve > state.patience:
                previous = state.current_lr
                state.current_lr = previous * state.plateau_factor
                state.steps_since_improve = 0
                logger.info(
                    "Validation plateau at step %d: lr %.3e -> %.3e",
                    global_step, previous, state.current_lr,
                )
    return state.current_lr


def global_grad_norm(grads: Params) -> float:
    """L2 norm over every gradient block taken together."""
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def clip_gradients(grads: Params, max_norm: float) -> Params:
    """Scale all blocks by ``max_norm / norm`` when the global norm exceeds ``max_norm``."""
    if max_norm <= 0.0:
        raise ValueError(f"max_norm must be > 0, got {max_norm}.")
    norm = global_grad_norm(grads)
    if norm <= max_norm:
        return dict(grads)
    scale = max_norm / norm
    return {name: g * scale for name, g in grads.items()}
