"""Well aggregation and per-plate post-processing (MAD, spherizing).

Both normalisers are fitted on the DMSO embeddings of a plate and applied to
every embedding on that plate; MAD runs before spherizing.
"""

import logging
from collections import defaultdict
from collections.abc import Mapping

import numpy as np

from micon.errors import MissingControlError
from micon.models.records import WellEmbedding, WellKey

logger = logging.getLogger(__name__)

MAD_EPS = 1e-6
_EIGEN_FLOOR = 1e-12

PlateKey = tuple[str, str, str]


def aggregate_wells(groups: Mapping[WellKey, tuple[str, np.ndarray]]) -> list[WellEmbedding]:
    """Mean over each well's FOV representations.

    Args:
        groups: ``well key -> (perturbation id, (n_fovs, k) matrix)``.
    """
    embeddings = []
    for key, (perturbation_id, reps) in groups.items():
        reps = np.asarray(reps, dtype=np.float64)
        if reps.ndim != 2 or reps.shape[0] == 0:
            raise ValueError(f"Well {key} has no representations to aggregate.")
        embeddings.append(WellEmbedding(key, perturbation_id, reps.mean(axis=0)))
    return embeddings


def _controls_by_plate(controls: list[WellEmbedding], minimum: int) -> dict[PlateKey, np.ndarray]:
    grouped: dict[PlateKey, list[np.ndarray]] = defaultdict(list)
    for control in controls:
        grouped[control.key.plate_key].append(control.vector)
    return {plate: np.stack(vectors) for plate, vectors in grouped.items() if len(vectors) >= minimum}


def _apply_per_plate(embeddings, controls, minimum, fit) -> list[WellEmbedding]:
    fitted = _controls_by_plate(controls, minimum)
    transforms = {}
    result = []
    for embedding in embeddings:
        plate = embedding.key.plate_key
        if plate not in fitted:
            name = "/".join(plate)
            raise MissingControlError(
                f"Plate {name} has fewer than {minimum} DMSO embeddings to fit on.", plate=name
            )
        if plate not in transforms:
            transforms[plate] = fit(plate, fitted[plate])
        result.append(WellEmbedding(embedding.key, embedding.perturbation_id, transforms[plate](embedding.vector)))
    return result


def mad_normalize(embeddings: list[WellEmbedding], controls: list[WellEmbedding]) -> list[WellEmbedding]:
    """Per plate and coordinate: ``(x - median(ctrl)) / max(MAD(ctrl), 1e-6)``.

    MAD is the raw median absolute deviation (no Gaussian consistency factor).

    Raises:
        MissingControlError: If a plate has fewer than 2 control embeddings.
    """

    def fit(_plate: PlateKey, ctrl: np.ndarray):
        median = np.median(ctrl, axis=0)
        scale = np.maximum(np.median(np.abs(ctrl - median), axis=0), MAD_EPS)
        return lambda x: (x - median) / scale

    return _apply_per_plate(embeddings, controls, 2, fit)


def sphering_transform(ctrl: np.ndarray, shrink: float, plate: str = "") -> tuple[np.ndarray, np.ndarray]:
    """ZCA matrix and centre fitted on control rows ``ctrl``.

    ``Σ' = (1 - shrink) Σ + shrink * mean(diag Σ) * I``; ``W = U Λ'^(-1/2) Uᵀ``.

    Raises:
        ValueError: If ``Σ'`` is not positive definite.
    """
    if not 0.0 <= shrink <= 1.0:
        raise ValueError(f"shrink must lie in [0, 1], got {shrink}.")
    mean = ctrl.mean(axis=0)
    cov = np.atleast_2d(np.cov(ctrl, rowvar=False))
    dim = cov.shape[0]
    regularised = (1.0 - shrink) * cov + shrink * float(np.mean(np.diag(cov))) * np.eye(dim)
    eigenvalues, eigenvectors = np.linalg.eigh(regularised)
    if not np.isfinite(eigenvalues).all() or eigenvalues.min() <= _EIGEN_FLOOR * max(1.0, eigenvalues.max()):
        raise ValueError(
            f"Control covariance of plate {plate or '?'} is not positive definite "
            f"(min eigenvalue {eigenvalues.min():.3e}); raise the shrink."
        )
    whitening = (eigenvectors / np.sqrt(eigenvalues)) @ eigenvectors.T
    return whitening, mean


def spherize(embeddings: list[WellEmbedding], controls: list[WellEmbedding], shrink: float = 0.0) -> list[WellEmbedding]:
    """Whiten each plate so its control embeddings have identity covariance.

    Raises:
        MissingControlError: If a plate has fewer than 2 control embeddings.
        ValueError: If a plate's regularised covariance is not positive definite.
    """

    def fit(plate: PlateKey, ctrl: np.ndarray):
        whitening, mean = sphering_transform(ctrl, shrink, "/".join(plate))
        return lambda x: (x - mean) @ whitening

    return _apply_per_plate(embeddings, controls, 2, fit)


def postprocess(embeddings: list[WellEmbedding], controls: list[WellEmbedding], shrink: float) -> list[WellEmbedding]:
    """MAD then spherize; ``controls`` are transformed alongside to fit the second step."""
    mad = mad_normalize(embeddings, controls)
    mad_controls = mad_normalize(controls, controls)
    return spherize(mad, mad_controls, shrink)
