"""The MICON network: image encoder, projection head, compound encoder, fusion
module and the CLIP baseline's compound head, with their joint loss.

Composition::

    t  = g(h_img(x))                      real representation
    t~ = F([g(h_img(x_control)), h_comp(fp)])   counterfactual representation
    c  = clip_head(h_comp(fp))            CLIP-baseline compound representation

All blocks live in one flat weight dict keyed ``"<block>.<layer>.<name>"``.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Literal

import numpy as np

from micon.ai_core.layers import (
    LayerSpec,
    MlpCache,
    Mode,
    init_mlp_params,
    mlp_apply,
    mlp_backward,
    mlp_specs,
)
from micon.ai_core.losses import clip_loss, micon_total_loss, simclr_loss
from micon.ai_core.rng import make_rng
from micon.models.hyperparams import HyperParams
from micon.models.records import CONTROL_ID

logger = logging.getLogger(__name__)

Params = dict[str, np.ndarray]

IMAGE_ENCODER = "image_encoder"
PROJECTION = "projection"
COMPOUND_ENCODER = "compound_encoder"
FUSION = "fusion"
CLIP_HEAD = "clip_head"
BLOCKS: tuple[str, ...] = (IMAGE_ENCODER, PROJECTION, COMPOUND_ENCODER, FUSION, CLIP_HEAD)


@dataclass(frozen=True)
class Architecture:
    """Layer widths of every block."""

    feature_dim: int
    image_hidden: tuple[int, ...] = (512,)
    image_embed: int = 1000
    proj_hidden: int = 512
    proj_dim: int = 256
    fp_bits: int = 2048
    compound_hidden: tuple[int, ...] = (2048, 2048, 2048, 2048)
    fusion_hidden: int = 512

    @classmethod
    def from_hyperparams(cls, hp: HyperParams, feature_dim: int) -> "Architecture":
        return cls(
            feature_dim=feature_dim,
            image_hidden=tuple(hp.image_hidden),
            image_embed=hp.image_embed,
            proj_hidden=hp.proj_hidden,
            proj_dim=hp.proj_dim,
            fp_bits=hp.fp_bits,
            compound_hidden=tuple(hp.compound_hidden),
            fusion_hidden=hp.fusion_hidden,
        )

    @property
    def compound_dim(self) -> int:
        return self.compound_hidden[-1]

    def specs(self) -> dict[str, tuple[LayerSpec, ...]]:
        return {
            IMAGE_ENCODER: mlp_specs(self.feature_dim, self.image_hidden, self.image_embed, "leaky_relu"),
            PROJECTION: mlp_specs(self.image_embed, (self.proj_hidden,), self.proj_dim, "leaky_relu"),
            COMPOUND_ENCODER: mlp_specs(self.fp_bits, self.compound_hidden, None, "relu", batch_norm=True),
            FUSION: mlp_specs(self.proj_dim + self.compound_dim, (self.fusion_hidden,), self.proj_dim, "leaky_relu"),
            CLIP_HEAD: (LayerSpec("affine", self.compound_dim, self.proj_dim),),
        }

    def to_dict(self) -> dict[str, object]:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict[str, object]) -> "Architecture":
        return cls(
            feature_dim=int(values["feature_dim"]),
            image_hidden=tuple(int(v) for v in values["image_hidden"]),
            image_embed=int(values["image_embed"]),
            proj_hidden=int(values["proj_hidden"]),
            proj_dim=int(values["proj_dim"]),
            fp_bits=int(values["fp_bits"]),
            compound_hidden=tuple(int(v) for v in values["compound_hidden"]),
            fusion_hidden=int(values["fusion_hidden"]),
        )


@dataclass
class ModelParams:
    """Trainable weights plus batch-norm running statistics."""

    architecture: Architecture
    weights: Params
    buffers: Params = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.specs = self.architecture.specs()

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.architecture,
            {k: v.copy() for k, v in self.weights.items()},
            {k: v.copy() for k, v in self.buffers.items()},
        )

    def block_names(self, block: str) -> list[str]:
        return [name for name in self.weights if name.startswith(f"{block}.")]

    def check_finite(self) -> None:
        for name, value in self.weights.items():
            if not np.isfinite(value).all():
                raise ValueError(f"Parameter block '{name}' holds non-finite values.")


def init_model_params(architecture: Architecture, seed: int) -> ModelParams:
    """Initialise every block from its own named random stream."""
    weights: Params = {}
    buffers: Params = {}
    for block, specs in architecture.specs().items():
        block_weights, block_buffers = init_mlp_params(specs, f"{block}.", make_rng(seed, "init", block))
        weights.update(block_weights)
        buffers.update(block_buffers)
    logger.info(
        "Initialised MICON network: %d parameter arrays, %d values",
        len(weights), sum(v.size for v in weights.values()),
    )
    return ModelParams(architecture, weights, buffers)


# ── Representations ───────────────────────────────────────────────────


@dataclass(frozen=True)
class Representation:
    vector: np.ndarray
    owner: tuple[int, int]
    kind: Literal["real", "counterfactual"]
    perturbation_id: str


def _run(
    params: ModelParams, block: str, inputs: np.ndarray, mode: Mode, weights: Params | None = None
) -> tuple[np.ndarray, MlpCache]:
    return mlp_apply(
        params.specs[block], params.weights if weights is None else weights, inputs,
        mode=mode, prefix=f"{block}.", buffers=params.buffers,
    )


def _back(params: ModelParams, block: str, cache: MlpCache, grad: np.ndarray, weights: Params | None = None):
    return mlp_backward(params.specs[block], params.weights if weights is None else weights, cache, grad, f"{block}.")


def encode_images(params: ModelParams, fovs: np.ndarray, mode: Mode = "infer") -> np.ndarray:
    """``g(h_img(x))`` for a ``(rows, feature_dim)`` matrix. Outputs are not length-normalised."""
    hidden, _ = _run(params, IMAGE_ENCODER, fovs, mode)
    reps, _ = _run(params, PROJECTION, hidden, mode)
    return reps


def encode_and_project(
    params: ModelParams,
    fovs: np.ndarray,
    owners: list[tuple[int, int]] | None = None,
    labels: list[str] | None = None,
) -> list[Representation]:
    """Infer-mode real representations, one per input row, order preserved."""
    vectors = encode_images(params, fovs, mode="infer")
    owners = owners or [(-1, i) for i in range(len(vectors))]
    labels = labels or [""] * len(vectors)
    return [Representation(v, o, "real", p) for v, o, p in zip(vectors, owners, labels)]


def encode_compounds(params: ModelParams, fingerprints: np.ndarray, mode: Mode = "infer") -> np.ndarray:
    """``h_comp(fp)`` for a ``(rows, fp_bits)`` matrix."""
    embedding, _ = _run(params, COMPOUND_ENCODER, fingerprints, mode)
    return embedding


def encode_compound(params: ModelParams, fingerprint: np.ndarray) -> np.ndarray:
    """Infer-mode embedding of a single fingerprint vector."""
    return encode_compounds(params, np.asarray(fingerprint, dtype=np.float64).reshape(1, -1))[0]


def fuse(params: ModelParams, control_reps: np.ndarray, compound_embeddings: np.ndarray, mode: Mode = "infer") -> np.ndarray:
    fused, _ = _run(params, FUSION, np.hstack([control_reps, compound_embeddings]), mode)
    return fused


def fuse_counterfactual(
    params: ModelParams,
    control_reps: list[Representation],
    compound_embeddings: np.ndarray,
    perturbation_ids: list[str],
) -> list[Representation]:
    """Counterfactual representations of controls "treated" with compounds.

    Raises:
        ValueError: If an input is not a real DMSO representation.
    """
    for rep in control_reps:
        if rep.kind != "real" or rep.perturbation_id != CONTROL_ID:
            raise ValueError(
                f"Fusion context must be a real {CONTROL_ID} representation, got {rep.kind} '{rep.perturbation_id}'."
            )
    contexts = np.stack([rep.vector for rep in control_reps])
    fused = fuse(params, contexts, np.atleast_2d(compound_embeddings))
    return [
        Representation(vector, rep.owner, "counterfactual", pid)
        for vector, rep, pid in zip(fused, control_reps, perturbation_ids)
    ]


# ── Joint loss ────────────────────────────────────────────────────────


@dataclass(frozen=True)
class BatchTensors:
    """Numeric view of one training batch.

    micon / paclr_only: ``images`` = T1, T2, controls stacked; ``cf_context_rows``
    index the control row paired with each ``fingerprints`` row;
    ``cf_anchor_rows`` are the real rows that anchor the counterfactual term.
    simclr: ``images`` = view 1 then view 2.  clip: ``images`` paired row-wise
    with ``fingerprints``.
    """

    images: np.ndarray
    labels: np.ndarray
    fingerprints: np.ndarray | None = None
    cf_labels: np.ndarray | None = None
    cf_context_rows: np.ndarray | None = None
    cf_anchor_rows: np.ndarray | None = None


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    components: dict[str, float]
    grads: Params


def network_loss(
    params: ModelParams,
    batch: BatchTensors,
    method: str,
    tau: float,
    cf_weight: float = 1.0,
    mode: Mode = "train",
    weights: Params | None = None,
) -> LossBreakdown:
    """Forward pass, loss and gradients for one batch under ``method``.

    ``weights`` substitutes for ``params.weights`` (used by gradient checks).
    Blocks a method does not touch get no gradient entry.
    """
    w = params.weights if weights is None else weights
    hidden, image_cache = _run(params, IMAGE_ENCODER, batch.images, mode, w)
    reps, proj_cache = _run(params, PROJECTION, hidden, mode, w)
    grads: Params = {}
    components: dict[str, float] = {}

    if method in ("micon", "paclr_only"):
        effective = cf_weight if method == "micon" else 0.0
        fused = None
        fusion_cache = comp_cache = None
        if effective > 0.0:
            if batch.fingerprints is None or batch.cf_context_rows is None:
                raise ValueError("The counterfactual term needs fingerprints and control context rows.")
            comp, comp_cache = _run(params, COMPOUND_ENCODER, batch.fingerprints, mode, w)
            contexts = reps[batch.cf_context_rows]
            fused, fusion_cache = _run(params, FUSION, np.hstack([contexts, comp]), mode, w)

        result = micon_total_loss(
            reps, batch.labels, fused, batch.cf_labels, batch.cf_anchor_rows, tau=tau, cf_weight=effective,
        )
        components = {"paclr": result.paclr, "counterfactual": result.counterfactual}
        total = result.total
        grad_reps = result.grad_real

        if fused is not None:
            grad_fused_in, fusion_grads = _back(params, FUSION, fusion_cache, result.grad_counterfactual, w)
            grads.update(fusion_grads)
            proj_dim = reps.shape[1]
            grad_reps = grad_reps.copy()
            np.add.at(grad_reps, batch.cf_context_rows, grad_fused_in[:, :proj_dim])
            _, comp_grads = _back(params, COMPOUND_ENCODER, comp_cache, grad_fused_in[:, proj_dim:], w)
            grads.update(comp_grads)

    elif method == "simclr":
        total, grad_reps = simclr_loss(reps, tau)
        components = {"simclr": total}

    elif method == "clip":
        if batch.fingerprints is None:
            raise ValueError("The CLIP baseline needs a fingerprint per image.")
        comp, comp_cache = _run(params, COMPOUND_ENCODER, batch.fingerprints, mode, w)
        comp_reps, head_cache = _run(params, CLIP_HEAD, comp, mode, w)
        total, grad_reps, grad_comp_reps = clip_loss(reps, comp_reps, tau)
        components = {"clip": total}
        grad_comp, head_grads = _back(params, CLIP_HEAD, head_cache, grad_comp_reps, w)
        grads.update(head_grads)
        _, comp_grads = _back(params, COMPOUND_ENCODER, comp_cache, grad_comp, w)
        grads.update(comp_grads)

    else:
        raise ValueError(f"Unknown training method '{method}'.")

    grad_hidden, proj_grads = _back(params, PROJECTION, proj_cache, grad_reps, w)
    grads.update(proj_grads)
    _, image_grads = _back(params, IMAGE_ENCODER, image_cache, grad_hidden, w)
    grads.update(image_grads)
    return LossBreakdown(total=float(total), components=components, grads=grads)
