import logging
from collections.abc import Callable

import numpy as np

from micon.errors import NonFiniteError

logger = logging.getLogger(__name__)

Params = dict[str, np.ndarray]
LossFn = Callable[[Params], tuple[float, Params]]


def grad_check(
    loss_fn: LossFn | Callable[[np.ndarray], tuple[float, np.ndarray]],
    params: Params | np.ndarray,
    h: float = 1e-5,
    max_entries_per_block: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare analytic gradients with central finite differences.

    Args:
        loss_fn: Maps a parameter point to ``(loss, gradients)``. Accepts either a
            dict of named blocks or a single array, matching ``params``.
        params: Point at which to check.
        h: Finite-difference step, within [1e-6, 1e-3].
        max_entries_per_block: Check only this many randomly chosen entries of
            each block (all entries when None).
        rng: Generator used to pick entries when sampling.

    Returns:
        Max over checked entries of ``|analytic - numeric| / max(1, |analytic|)``.

    Raises:
        ValueError: If ``h`` is out of range.
        NonFiniteError: If the loss is not finite at any evaluated point.
    """
    if not 1e-6 <= h <= 1e-3:
        raise ValueError(f"Step h must lie in [1e-6, 1e-3], got {h}.")

    single = isinstance(params, np.ndarray)
    point: Params = {"x": np.array(params, dtype=np.float64)} if single else {
        name: np.array(block, dtype=np.float64) for name, block in params.items()
    }

    def evaluate(p: Params) -> tuple[float, Params]:
        if single:
            loss, grad = loss_fn(p["x"])  # type: ignore[arg-type]
            grads = {"x": np.asarray(grad, dtype=np.float64)}
        else:
            loss, grads = loss_fn(p)  # type: ignore[arg-type]
        loss = float(loss)
        if not np.isfinite(loss):
            raise NonFiniteError(f"Loss evaluated to {loss} during gradient check.")
        return loss, grads

    _, analytic = evaluate(point)
    sampler = rng or np.random.default_rng(0)
    worst = 0.0
    worst_block = ""

    for name, block in point.items():
        grad = np.asarray(analytic.get(name, np.zeros_like(block)), dtype=np.float64).reshape(block.shape)
        flat = block.reshape(-1)
        indices = np.arange(flat.size)
        if max_entries_per_block is not None and flat.size > max_entries_per_block:
            indices = sampler.choice(flat.size, size=max_entries_per_block, replace=False)
        for index in indices:
            original = flat[index]
            flat[index] = original + h
            loss_plus, _ = evaluate(point)
            flat[index] = original - h
            loss_minus, _ = evaluate(point)
            flat[index] = original

            numeric = (loss_plus - loss_minus) / (2.0 * h)
            exact = float(grad.reshape(-1)[index])
            error = abs(exact - numeric) / max(1.0, abs(exact))
            if error > worst:
                worst = error
                worst_block = name

    logger.debug("Gradient check: max relative error %.3e (block '%s')", worst, worst_block)
    return worst
