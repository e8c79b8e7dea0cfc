"""Contrastive losses with analytic gradients.

Every loss here is one masked softmax cross-entropy over cosine similarities:

    loss = mean over anchors with >= 1 positive of
           [ logsumexp_{k valid} s_ik  -  mean_{j positive} s_ij ],   s = cos / tau

so one helper (``_masked_contrastive``) computes value and gradient for all of
them. Anchors without a positive are dropped and the mean is taken over the
rest. Gradients are returned with respect to the raw (unnormalised) inputs.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from micon.ai_core.layers import normalize_rows, normalize_rows_backward

logger = logging.getLogger(__name__)

DEFAULT_TAU = 0.1


@dataclass(frozen=True)
class ContrastiveResult:
    """Loss value plus gradients for anchors and candidates."""

    loss: float
    grad_anchors: np.ndarray
    grad_candidates: np.ndarray
    n_valid_anchors: int


def _check_tau(tau: float) -> None:
    if not tau > 0.0:
        raise ValueError(f"Temperature tau must be > 0, got {tau}.")


def _as_matrix(reps: np.ndarray, name: str) -> np.ndarray:
    matrix = np.asarray(reps, dtype=np.float64)
    if matrix.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix, got shape {matrix.shape}.")
    return matrix


def _masked_contrastive(
    anchors: np.ndarray,
    candidates: np.ndarray,
    positive: np.ndarray,
    valid: np.ndarray,
    tau: float,
) -> ContrastiveResult:
    anchor_unit, anchor_norm = normalize_rows(anchors)
    cand_unit, cand_norm = normalize_rows(candidates)
    logits = (anchor_unit @ cand_unit.T) / tau

    positive = positive & valid
    n_pos = positive.sum(axis=1)
    rows = n_pos > 0
    n_rows = int(rows.sum())
    if n_rows == 0:
        raise ValueError("No anchor has a positive candidate; the batch is degenerate.")

    masked = np.where(valid, logits, -np.inf)
    lse = logsumexp(masked[rows], axis=1, keepdims=True)
    pos_weight = positive[rows] / n_pos[rows, None]
    per_anchor = lse[:, 0] - (pos_weight * logits[rows]).sum(axis=1)
    loss = float(per_anchor.mean())

    grad_logits = np.zeros_like(logits)
    softmax = np.where(valid[rows], np.exp(masked[rows] - lse), 0.0)
    grad_logits[rows] = (softmax - pos_weight) / n_rows

    grad_anchor_unit = grad_logits @ cand_unit / tau
    grad_cand_unit = grad_logits.T @ anchor_unit / tau
    return ContrastiveResult(
        loss=loss,
        grad_anchors=normalize_rows_backward(grad_anchor_unit, anchor_unit, anchor_norm),
        grad_candidates=normalize_rows_backward(grad_cand_unit, cand_unit, cand_norm),
        n_valid_anchors=n_rows,
    )


def _label_match(left: np.ndarray | list, right: np.ndarray | list) -> np.ndarray:
    return np.asarray(left)[:, None] == np.asarray(right)[None, :]


# ── Public losses ─────────────────────────────────────────────────────


def paclr_loss(reps: np.ndarray, labels: np.ndarray | list, tau: float = DEFAULT_TAU) -> tuple[float, np.ndarray]:
    """Perturbation-aware contrastive loss over one set of representations.

    Positives of anchor ``i`` are the other rows sharing its label (controls
    included, as an ordinary label); the softmax runs over every ``k != i``.

    Returns:
        ``(loss, grad_reps)``.
    """
    _check_tau(tau)
    reps = _as_matrix(reps, "reps")
    n = reps.shape[0]
    if n < 2:
        raise ValueError(f"The contrastive loss needs at least 2 representations, got {n}.")
    if len(labels) != n:
        raise ValueError(f"Got {len(labels)} labels for {n} representations.")

    off_diagonal = ~np.eye(n, dtype=bool)
    result = _masked_contrastive(reps, reps, _label_match(labels, labels), off_diagonal, tau)
    return result.loss, result.grad_anchors + result.grad_candidates


def cf_paclr_loss(
    real: np.ndarray,
    real_labels: np.ndarray | list,
    counterfactual: np.ndarray,
    cf_labels: np.ndarray | list,
    tau: float = DEFAULT_TAU,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Counterfactual contrastive loss: real anchors against counterfactual candidates.

    The softmax runs over all counterfactual rows (the two sets are disjoint).

    Returns:
        ``(loss, grad_real, grad_counterfactual)``.

    Raises:
        ValueError: If either set is empty or no real label occurs among the
            counterfactual labels.
    """
    _check_tau(tau)
    real = _as_matrix(real, "real")
    counterfactual = _as_matrix(counterfactual, "counterfactual")
    if real.shape[0] == 0 or counterfactual.shape[0] == 0:
        raise ValueError("Both real and counterfactual sets must be non-empty.")
    if len(real_labels) != real.shape[0] or len(cf_labels) != counterfactual.shape[0]:
        raise ValueError("Label counts must match representation counts.")

    valid = np.ones((real.shape[0], counterfactual.shape[0]), dtype=bool)
    result = _masked_contrastive(real, counterfactual, _label_match(real_labels, cf_labels), valid, tau)
    return result.loss, result.grad_anchors, result.grad_candidates


def simclr_loss(reps: np.ndarray, tau: float = DEFAULT_TAU) -> tuple[float, np.ndarray]:
    """Instance-discrimination loss over two augmented views.

    Rows ``0..n-1`` hold the first view of each instance and rows ``n..2n-1``
    the second view, in the same instance order.
    """
    reps = _as_matrix(reps, "reps")
    if reps.shape[0] % 2:
        raise ValueError(f"SimCLR needs an even number of views, got {reps.shape[0]}.")
    instances = np.tile(np.arange(reps.shape[0] // 2), 2)
    return paclr_loss(reps, instances, tau)


def clip_loss(
    image_reps: np.ndarray,
    compound_reps: np.ndarray,
    tau: float = DEFAULT_TAU,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Symmetric cross-modal loss; row ``i`` of each side is the matching pair.

    Repeated compounds are independent targets (only the diagonal is positive).

    Returns:
        ``(loss, grad_image, grad_compound)``.
    """
    _check_tau(tau)
    image_reps = _as_matrix(image_reps, "image_reps")
    compound_reps = _as_matrix(compound_reps, "compound_reps")
    if image_reps.shape[0] != compound_reps.shape[0]:
        raise ValueError(
            f"Image and compound counts differ: {image_reps.shape[0]} vs {compound_reps.shape[0]}."
        )
    n = image_reps.shape[0]
    eye = np.eye(n, dtype=bool)
    everything = np.ones((n, n), dtype=bool)

    forward = _masked_contrastive(image_reps, compound_reps, eye, everything, tau)
    backward = _masked_contrastive(compound_reps, image_reps, eye, everything, tau)
    loss = 0.5 * (forward.loss + backward.loss)
    grad_image = 0.5 * (forward.grad_anchors + backward.grad_candidates)
    grad_compound = 0.5 * (forward.grad_candidates + backward.grad_anchors)
    return loss, grad_image, grad_compound


@dataclass(frozen=True)
class MiconLoss:
    total: float
    paclr: float
    counterfactual: float
    grad_real: np.ndarray
    grad_counterfactual: np.ndarray | None


def micon_total_loss(
    real: np.ndarray,
    real_labels: np.ndarray | list,
    counterfactual: np.ndarray | None,
    cf_labels: np.ndarray | list | None,
    cf_anchor_rows: np.ndarray | None = None,
    tau: float = DEFAULT_TAU,
    cf_weight: float = 1.0,
) -> MiconLoss:
    """``paclr_loss(real) + cf_weight * cf_paclr_loss(real[cf_anchor_rows], counterfactual)``.

    With ``cf_weight == 0`` the counterfactual term is never evaluated and the
    result equals ``paclr_loss`` bit for bit.

    Args:
        real: All real representations of the batch.
        real_labels: Perturbation label per real row.
        counterfactual: Fusion outputs, or None when ``cf_weight == 0``.
        cf_labels: Perturbation label per counterfactual row.
        cf_anchor_rows: Real rows used as counterfactual anchors (all when None).
        tau: Temperature.
        cf_weight: Weight of the counterfactual term.
    """
    if cf_weight < 0.0:
        raise ValueError(f"cf_weight must be >= 0, got {cf_weight}.")
    paclr_value, grad_real = paclr_loss(real, real_labels, tau)
    if cf_weight == 0.0:
        return MiconLoss(paclr_value, paclr_value, 0.0, grad_real, None)
    if counterfactual is None or cf_labels is None:
        raise ValueError("Counterfactual representations are required when cf_weight > 0.")

    rows = np.arange(len(real_labels)) if cf_anchor_rows is None else np.asarray(cf_anchor_rows)
    anchors = np.asarray(real, dtype=np.float64)[rows]
    anchor_labels = np.asarray(real_labels)[rows]
    cf_value, grad_anchor, grad_cf = cf_paclr_loss(anchors, anchor_labels, counterfactual, cf_labels, tau)

    grad_total = grad_real.copy()
    np.add.at(grad_total, rows, cf_weight * grad_anchor)
    return MiconLoss(
        total=paclr_value + cf_weight * cf_value,
        paclr=paclr_value,
        counterfactual=cf_value,
        grad_real=grad_total,
        grad_counterfactual=cf_weight * grad_cf,
    )
