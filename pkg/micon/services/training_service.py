"""Training loop: sample -> forward -> loss -> clip -> AdamW -> schedule.

Validation runs on a fixed bank of batches drawn once from the validation
split, in infer mode, at step 0, every ``checkpoint_every`` steps and at the
last step. The returned parameters are those of the checkpoint with the lowest
validation loss (step 0 included).
"""

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from micon.ai_core.batch_sampler import BatchPrefetcher, BatchSampler
from micon.ai_core.micon_model import (
    Architecture,
    BatchTensors,
    ModelParams,
    init_model_params,
    network_loss,
)
from micon.ai_core.optimizer import (
    OptimizerState,
    SchedulerState,
    adamw_step,
    clip_gradients,
    scheduler_step,
)
from micon.ai_core.rng import make_rng
from micon.errors import NonFiniteError, SplitError
from micon.models.hyperparams import METHODS, HyperParams
from micon.models.records import Dataset, SplitSpec

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LogEntry:
    step: int
    lr: float
    train_loss: float | None
    val_loss: float | None


@dataclass
class TrainingResult:
    params: ModelParams
    method: str
    seed: int
    cf_weight: float
    best_step: int
    best_val_loss: float
    initial_val_loss: float
    log: list[LogEntry] = field(default_factory=list)

    def checkpoint_meta(self, hp: HyperParams) -> dict[str, object]:
        """Header fields for the checkpoint file.

        The method name is left out: a ``paclr_only`` run and a ``micon`` run
        with ``cf_weight = 0`` are the same computation and must serialise
        identically.
        """
        return {
            "seed": self.seed,
            "tau": hp.tau,
            "cf_weight": self.cf_weight,
            "best_step": self.best_step,
            "best_val_loss": self.best_val_loss,
        }


def effective_cf_weight(method: str, cf_weight: float) -> float:
    return float(cf_weight) if method == "micon" else 0.0


def validation_loss(
    params: ModelParams, bank: list[BatchTensors], method: str, tau: float, cf_weight: float
) -> float:
    losses = [network_loss(params, batch, method, tau, cf_weight, mode="infer").total for batch in bank]
    return float(np.mean(losses))


def steps_per_epoch(ds: Dataset, split: SplitSpec, batch_size: int) -> int:
    n_fovs = sum(ds.wells[i].n_fovs for i in split.train)
    return max(1, math.ceil(n_fovs / batch_size))


def train(
    ds: Dataset,
    split: SplitSpec,
    hp: HyperParams,
    method: str,
    seed: int,
    cf_weight: float = 1.0,
    deterministic: bool = True,
) -> TrainingResult:
    """Train one model and return its best-on-validation checkpoint.

    Raises:
        SplitError: If the train or validation split is empty.
        NonFiniteError: If the training loss stops being finite; ``step`` is set.
    """
    if method not in METHODS:
        raise ValueError(f"Unknown training method '{method}'; expected one of {', '.join(METHODS)}.")
    if not split.train or not split.val:
        raise SplitError("Training needs non-empty train and validation splits.")

    weight = effective_cf_weight(method, cf_weight)
    params = init_model_params(Architecture.from_hyperparams(hp, ds.feature_dim), seed)

    sampler = BatchSampler(ds, split.train, hp, method, make_rng(seed, "sampler"), make_rng(seed, "augment"))
    val_sampler = BatchSampler(
        ds, split.val, hp, method, make_rng(seed, "validation"), make_rng(seed, "validation", "augment")
    )
    bank = [val_sampler.next_batch() for _ in range(hp.val_batches)]

    total_steps = hp.epochs * steps_per_epoch(ds, split, hp.batch_size)
    optimizer = OptimizerState(
        lr=hp.lr, beta1=hp.beta1, beta2=hp.beta2, eps=hp.eps, weight_decay=hp.weight_decay,
    )
    scheduler = SchedulerState(
        warmup_steps=hp.warmup_steps, base_lr=hp.lr, plateau_factor=hp.plateau_factor, patience=hp.patience,
    )

    initial_val = validation_loss(params, bank, method, hp.tau, weight)
    best_step, best_val, best_params = 0, initial_val, params.copy()
    log = [LogEntry(step=0, lr=scheduler_step(scheduler, 0), train_loss=None, val_loss=initial_val)]
    logger.info(
        "Training %s (seed %d): %d steps, batch %d, val bank %d, initial val loss %.4f",
        method, seed, total_steps, hp.batch_size, len(bank), initial_val,
    )

    producer = BatchPrefetcher(sampler) if hp.prefetch and not deterministic else sampler
    try:
        for step in range(1, total_steps + 1):
            lr = scheduler_step(scheduler, step)
            batch = producer.next_batch()
            outcome = network_loss(params, batch, method, hp.tau, weight, mode="train")
            if not math.isfinite(outcome.total):
                raise NonFiniteError(f"Training loss became {outcome.total} at step {step}.", step=step)

            grads = clip_gradients(outcome.grads, hp.clip_norm)
            try:
                params.weights, optimizer = adamw_step(params.weights, grads, replace(optimizer, lr=lr))
            except NonFiniteError as exc:
                raise NonFiniteError(str(exc), block=exc.block, step=step) from exc

            val_loss = None
            if step % hp.checkpoint_every == 0 or step == total_steps:
                val_loss = validation_loss(params, bank, method, hp.tau, weight)
                scheduler_step(scheduler, step, val_loss)
                if val_loss < best_val:
                    best_step, best_val, best_params = step, val_loss, params.copy()
                logger.info(
                    "Checkpoint at step %d:\n"
                    "  lr:         %.3e\n"
                    "  train loss: %.4f\n"
                    "  val loss:   %.4f\n"
                    "  best:       %.4f (step %d)",
                    step, lr, outcome.total, val_loss, best_val, best_step,
                )
            log.append(LogEntry(step=step, lr=lr, train_loss=outcome.total, val_loss=val_loss))
    except NonFiniteError:
        logger.error("Training %s (seed %d) aborted on a non-finite value.", method, seed)
        raise
    finally:
        if isinstance(producer, BatchPrefetcher):
            producer.close()

    return TrainingResult(
        params=best_params,
        method=method,
        seed=seed,
        cf_weight=weight,
        best_step=best_step,
        best_val_loss=best_val,
        initial_val_loss=initial_val,
        log=log,
    )
