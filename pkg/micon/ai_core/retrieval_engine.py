"""Constrained 1-nearest-neighbour compound-replicate matching.

Distances are cosine distances ``1 - cos(q, r)``. Under ``NSB`` a candidate
must come from a different ``(source, batch)`` than the query; under ``NSS``
from a different source. A well never matches itself, whatever the constraint.
Ties resolve to the earliest retrieval entry.
"""

import logging

import numpy as np

from micon.ai_core.layers import cosine_matrix
from micon.errors import UnsatisfiableConstraintError
from micon.models.records import WellEmbedding
from micon.models.report_model import CONSTRAINTS, QueryMatch, RetrievalReport

logger = logging.getLogger(__name__)


def eligibility_mask(query: list[WellEmbedding], retrieval: list[WellEmbedding], constraint: str) -> np.ndarray:
    """``(n_query, n_retrieval)`` boolean mask of allowed candidates."""
    if constraint not in CONSTRAINTS:
        raise ValueError(f"Unknown constraint '{constraint}'; expected one of {', '.join(CONSTRAINTS)}.")
    q_wells = np.asarray([str(e.key) for e in query], dtype=object)
    r_wells = np.asarray([str(e.key) for e in retrieval], dtype=object)
    mask = q_wells[:, None] != r_wells[None, :]
    if constraint == "NSB":
        q_batch = np.asarray([":".join(e.key.batch_key) for e in query], dtype=object)
        r_batch = np.asarray([":".join(e.key.batch_key) for e in retrieval], dtype=object)
        mask &= q_batch[:, None] != r_batch[None, :]
    elif constraint == "NSS":
        q_source = np.asarray([e.key.source_id for e in query], dtype=object)
        r_source = np.asarray([e.key.source_id for e in retrieval], dtype=object)
        mask &= q_source[:, None] != r_source[None, :]
    return mask


def nearest_eligible(
    query: list[WellEmbedding], retrieval: list[WellEmbedding], constraint: str
) -> tuple[np.ndarray, np.ndarray]:
    """Index and distance of each query's nearest eligible retrieval well.

    Raises:
        UnsatisfiableConstraintError: Listing every query with no eligible candidate.
    """
    if not retrieval:
        raise ValueError("Retrieval set must not be empty.")
    if not query:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    q = np.stack([e.vector for e in query])
    r = np.stack([e.vector for e in retrieval])
    if q.shape[1] != r.shape[1]:
        raise ValueError(f"Query dim {q.shape[1]} does not match retrieval dim {r.shape[1]}.")

    mask = eligibility_mask(query, retrieval, constraint)
    stranded = [str(query[i].key) for i in np.flatnonzero(~mask.any(axis=1))]
    if stranded:
        raise UnsatisfiableConstraintError(
            f"{len(stranded)} query wells have no eligible candidate under {constraint}", stranded
        )
    distances = np.where(mask, 1.0 - cosine_matrix(q, r), np.inf)
    best = np.argmin(distances, axis=1)
    return best, distances[np.arange(len(query)), best]


def retrieve_1nn(
    query: list[WellEmbedding], retrieval: list[WellEmbedding], constraint: str = "none"
) -> RetrievalReport:
    """Match every query well to its nearest eligible retrieval well.

    A match is correct when both wells received the same perturbation.
    """
    best, distances = nearest_eligible(query, retrieval, constraint)
    per_query = []
    for q, j, distance in zip(query, best, distances):
        match = retrieval[int(j)]
        per_query.append(
            QueryMatch(
                query_key=str(q.key),
                matched_key=str(match.key),
                query_perturbation=q.perturbation_id,
                matched_perturbation=match.perturbation_id,
                distance=float(distance),
                correct=q.perturbation_id == match.perturbation_id,
            )
        )
    n_correct = sum(m.correct for m in per_query)
    n_queries = len(per_query)
    report = RetrievalReport(
        constraint=constraint,
        n_queries=n_queries,
        n_correct=n_correct,
        accuracy=n_correct / n_queries if n_queries else 0.0,
        chance_level=1.0 / len({e.perturbation_id for e in retrieval}),
        per_query=per_query,
    )
    logger.info(
        "Retrieval (%s):\n"
        "  queries:  %d\n"
        "  correct:  %d\n"
        "  accuracy: %.4f (chance %.4f)",
        constraint, n_queries, n_correct, report.accuracy, report.chance_level,
    )
    return report


def permutation_p_value(
    query_labels: list[str],
    matched_indices: np.ndarray,
    retrieval_labels: list[str],
    n_permutations: int,
    rng: np.random.Generator,
) -> float:
    """Label-permutation null for a retrieval accuracy.

    Retrieval labels are shuffled with the matches held fixed;
    ``p = (1 + #{null >= observed}) / (1 + n_permutations)``.
    """
    if n_permutations < 1:
        raise ValueError(f"n_permutations must be >= 1, got {n_permutations}.")
    query_arr = np.asarray(query_labels, dtype=object)
    retrieval_arr = np.asarray(retrieval_labels, dtype=object)
    matched = np.asarray(matched_indices, dtype=np.int64)
    if len(query_arr) == 0:
        return 1.0
    observed = float(np.mean(retrieval_arr[matched] == query_arr))
    exceed = 0
    for _ in range(n_permutations):
        shuffled = retrieval_arr[rng.permutation(len(retrieval_arr))]
        if float(np.mean(shuffled[matched] == query_arr)) >= observed:
            exceed += 1
    return (1 + exceed) / (1 + n_permutations)
