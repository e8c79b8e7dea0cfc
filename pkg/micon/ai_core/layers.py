"""Dense layers with manual backpropagation.

A network is a tuple of ``LayerSpec`` entries plus a flat ``dict`` of named
parameter arrays (``"<prefix><index>.weight"`` and friends). ``mlp_apply``
runs the forward pass and returns the activations each layer needs for its
gradient; ``mlp_backward`` walks the same cache in reverse.

Matrices are float64 ``numpy`` arrays of shape ``(rows, cols)``.
"""

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np

from micon.errors import DimensionMismatchError

logger = logging.getLogger(__name__)

LayerKind = Literal["affine", "relu", "leaky_relu", "batch_norm"]
Mode = Literal["train", "infer"]

LEAKY_SLOPE: float = 0.01
BN_MOMENTUM: float = 0.1
BN_EPS: float = 1e-5
_NORM_FLOOR: float = 1e-12

_KINDS = ("affine", "relu", "leaky_relu", "batch_norm")

Params = dict[str, np.ndarray]


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a feed-forward stack."""

    kind: LayerKind
    in_dim: int
    out_dim: int
    slope: float = LEAKY_SLOPE

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ValueError(f"Unknown layer kind '{self.kind}'.")
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError(f"Layer dims must be positive, got {self.in_dim}->{self.out_dim}.")
        if self.kind != "affine" and self.in_dim != self.out_dim:
            raise ValueError(f"{self.kind} layers keep their width ({self.in_dim} != {self.out_dim}).")
        if self.kind == "leaky_relu" and not 0.0 < self.slope < 1.0:
            raise ValueError(f"Leaky slope must lie in (0, 1), got {self.slope}.")


@dataclass(frozen=True)
class LayerCache:
    """Activations stored by one layer during the forward pass."""

    inputs: np.ndarray
    xhat: np.ndarray | None = None
    inv_std: np.ndarray | None = None


@dataclass(frozen=True)
class MlpCache:
    mode: Mode
    layers: tuple[LayerCache, ...]


# ── Layer spec builders ───────────────────────────────────────────────


def validate_specs(specs: tuple[LayerSpec, ...]) -> None:
    """Check that adjacent layers agree on their shared width."""
    if not specs:
        raise ValueError("A network needs at least one layer.")
    for index in range(1, len(specs)):
        if specs[index - 1].out_dim != specs[index].in_dim:
            raise DimensionMismatchError(
                f"Layer {index} expects width {specs[index].in_dim} "
                f"but layer {index - 1} emits {specs[index - 1].out_dim}.",
                layer_index=index,
            )


def mlp_specs(
    in_dim: int,
    hidden: tuple[int, ...] | list[int],
    out_dim: int | None,
    activation: Literal["relu", "leaky_relu"] = "leaky_relu",
    batch_norm: bool = False,
) -> tuple[LayerSpec, ...]:
    """Build ``affine -> [batch_norm] -> activation`` blocks, then a final affine.

    With ``out_dim=None`` the stack ends on the last hidden activation.
    """
    specs: list[LayerSpec] = []
    width = in_dim
    for size in hidden:
        specs.append(LayerSpec("affine", width, size))
        if batch_norm:
            specs.append(LayerSpec("batch_norm", size, size))
        specs.append(LayerSpec(activation, size, size))
        width = size
    if out_dim is not None:
        specs.append(LayerSpec("affine", width, out_dim))
    result = tuple(specs)
    validate_specs(result)
    return result


def init_mlp_params(
    specs: tuple[LayerSpec, ...],
    prefix: str,
    rng: np.random.Generator,
) -> tuple[Params, Params]:
    """Uniform fan-in initialisation; returns ``(parameters, buffers)``."""
    params: Params = {}
    buffers: Params = {}
    for index, spec in enumerate(specs):
        name = f"{prefix}{index}"
        if spec.kind == "affine":
            bound = 1.0 / np.sqrt(spec.in_dim)
            params[f"{name}.weight"] = rng.uniform(-bound, bound, (spec.in_dim, spec.out_dim))
            params[f"{name}.bias"] = rng.uniform(-bound, bound, spec.out_dim)
        elif spec.kind == "batch_norm":
            params[f"{name}.gamma"] = np.ones(spec.out_dim)
            params[f"{name}.beta"] = np.zeros(spec.out_dim)
            buffers[f"{name}.running_mean"] = np.zeros(spec.out_dim)
            buffers[f"{name}.running_var"] = np.ones(spec.out_dim)
    return params, buffers


# ── Forward / backward ────────────────────────────────────────────────


def mlp_apply(
    specs: tuple[LayerSpec, ...],
    params: Params,
    inputs: np.ndarray,
    mode: Mode = "train",
    prefix: str = "",
    buffers: Params | None = None,
    momentum: float = BN_MOMENTUM,
) -> tuple[np.ndarray, MlpCache]:
    """Run a layer stack forward.

    Args:
        specs: Layer stack.
        params: Parameter arrays keyed ``"<prefix><index>.<name>"``.
        inputs: ``(rows, specs[0].in_dim)`` matrix.
        mode: ``"train"`` normalises with batch statistics and folds them into
            the running buffers; ``"infer"`` normalises with the running buffers.
        prefix: Key prefix of this stack inside ``params``.
        buffers: Running batch-norm statistics, updated in place in train mode.
        momentum: Weight of the current batch in the running averages.

    Returns:
        ``(outputs, cache)`` where ``cache`` feeds ``mlp_backward``.

    Raises:
        DimensionMismatchError: If a layer receives the wrong width.
    """
    hidden = np.asarray(inputs, dtype=np.float64)
    if hidden.ndim != 2:
        raise DimensionMismatchError(f"Expected a 2-D matrix, got shape {hidden.shape}.", layer_index=0)
    if not np.isfinite(hidden).all():
        raise ValueError("Network input contains non-finite values.")

    caches: list[LayerCache] = []
    for index, spec in enumerate(specs):
        if hidden.shape[1] != spec.in_dim:
            raise DimensionMismatchError(
                f"Layer {index} ({spec.kind}) expects width {spec.in_dim}, got {hidden.shape[1]}.",
                layer_index=index,
            )
        name = f"{prefix}{index}"

        if spec.kind == "affine":
            caches.append(LayerCache(inputs=hidden))
            hidden = hidden @ params[f"{name}.weight"] + params[f"{name}.bias"]

        elif spec.kind == "relu":
            caches.append(LayerCache(inputs=hidden))
            hidden = np.maximum(hidden, 0.0)

        elif spec.kind == "leaky_relu":
            caches.append(LayerCache(inputs=hidden))
            hidden = np.where(hidden > 0.0, hidden, spec.slope * hidden)

        else:
            gamma = params[f"{name}.gamma"]
            beta = params[f"{name}.beta"]
            if mode == "train":
                mean = hidden.mean(axis=0)
                var = hidden.var(axis=0)
                rows = hidden.shape[0]
                if buffers is not None and rows < 2:
                    logger.warning("Batch-norm layer %s saw %d row(s) in train mode; running statistics left unchanged.",
                                   name, rows)
                elif buffers is not None:
                    unbiased = var * rows / (rows - 1)
                    buffers[f"{name}.running_mean"] = (
                        (1.0 - momentum) * buffers[f"{name}.running_mean"] + momentum * mean
                    )
                    buffers[f"{name}.running_var"] = (
                        (1.0 - momentum) * buffers[f"{name}.running_var"] + momentum * unbiased
                    )
            else:
                if buffers is None:
                    raise ValueError(f"Infer mode needs running statistics for layer {index}.")
                mean = buffers[f"{name}.running_mean"]
                var = buffers[f"{name}.running_var"]
            inv_std = 1.0 / np.sqrt(var + BN_EPS)
            xhat = (hidden - mean) * inv_std
            caches.append(LayerCache(inputs=hidden, xhat=xhat, inv_std=inv_std))
            hidden = gamma * xhat + beta

    return hidden, MlpCache(mode=mode, layers=tuple(caches))


def mlp_backward(
    specs: tuple[LayerSpec, ...],
    params: Params,
    cache: MlpCache,
    grad_out: np.ndarray,
    prefix: str = "",
) -> tuple[np.ndarray, Params]:
    """Backpropagate ``grad_out`` through a stack run by ``mlp_apply``.

    Returns:
        ``(grad_inputs, grads)`` with ``grads`` keyed like ``params``.
    """
    grads: Params = {}
    grad = np.asarray(grad_out, dtype=np.float64)
    for index in range(len(specs) - 1, -1, -1):
        spec = specs[index]
        layer = cache.layers[index]
        name = f"{prefix}{index}"

        if spec.kind == "affine":
            weight = params[f"{name}.weight"]
            grads[f"{name}.weight"] = layer.inputs.T @ grad
            grads[f"{name}.bias"] = grad.sum(axis=0)
            grad = grad @ weight.T

        elif spec.kind == "relu":
            grad = grad * (layer.inputs > 0.0)

        elif spec.kind == "leaky_relu":
            grad = grad * np.where(layer.inputs > 0.0, 1.0, spec.slope)

        else:
            gamma = params[f"{name}.gamma"]
            grads[f"{name}.gamma"] = (grad * layer.xhat).sum(axis=0)
            grads[f"{name}.beta"] = grad.sum(axis=0)
            dxhat = grad * gamma
            if cache.mode == "train":
                rows = dxhat.shape[0]
                grad = (layer.inv_std / rows) * (
                    rows * dxhat
                    - dxhat.sum(axis=0)
                    - layer.xhat * (dxhat * layer.xhat).sum(axis=0)
                )
            else:
                grad = dxhat * layer.inv_std

    return grad, grads


# ── Cosine similarity ─────────────────────────────────────────────────


def cosine_similarity(vec1: np.ndarray | list[float], vec2: np.ndarray | list[float]) -> float:
    """Cosine similarity between two vectors.

    Formula: similarity = dot(v1, v2) / (‖v1‖ · ‖v2‖)

    Raises:
        ValueError: If the vectors are empty, differ in length, or either has
            zero magnitude (no direction to compare).
    """
    v1 = np.asarray(vec1, dtype=np.float64).ravel()
    v2 = np.asarray(vec2, dtype=np.float64).ravel()
    if v1.size == 0 or v2.size == 0:
        raise ValueError("Vectors must not be empty.")
    if v1.size != v2.size:
        raise ValueError(f"Vector length mismatch: {v1.size} vs {v2.size}.")

    norm1 = float(np.linalg.norm(v1))
    norm2 = float(np.linalg.norm(v2))
    if norm1 == 0.0 or norm2 == 0.0:
        raise ValueError("Cosine similarity is undefined for a zero vector.")

    raw = float(np.dot(v1, v2) / (norm1 * norm2))
    return float(np.clip(raw, -1.0, 1.0))


def normalize_rows(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return unit-length rows and the original row norms."""
    norms = np.maximum(np.linalg.norm(matrix, axis=1, keepdims=True), _NORM_FLOOR)
    return matrix / norms, norms


def normalize_rows_backward(grad_unit: np.ndarray, unit: np.ndarray, norms: np.ndarray) -> np.ndarray:
    """Gradient through ``x -> x / ‖x‖`` given the gradient at the unit vectors."""
    radial = (grad_unit * unit).sum(axis=1, keepdims=True)
    return (grad_unit - unit * radial) / norms


def cosine_matrix(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarities between the rows of two matrices."""
    left_unit, _ = normalize_rows(np.asarray(left, dtype=np.float64))
    right_unit, _ = normalize_rows(np.asarray(right, dtype=np.float64))
    return np.clip(left_unit @ right_unit.T, -1.0, 1.0)
