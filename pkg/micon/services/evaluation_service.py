"""Embedding and compound-replicate retrieval for one trained model (or raw features).

DMSO wells are used to fit post-processing and as counterfactual contexts; they
never take part in matching. Every report is tagged with its method, seed,
post-processing flag and representation kind so the report service can group
them into settings.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass
from typing import Literal

import numpy as np

from micon.ai_core.micon_model import ModelParams, encode_and_project, encode_compound, encode_images, fuse_counterfactual
from micon.ai_core.postprocess import aggregate_wells, postprocess
from micon.ai_core.retrieval_engine import permutation_p_value, retrieve_1nn
from micon.ai_core.rng import make_rng
from micon.errors import MissingControlError
from micon.models.records import CONTROL_ID, Dataset, SplitSpec, WellEmbedding, WellRecord
from micon.models.report_model import CONSTRAINTS, RetrievalReport
from micon.services.nomination_service import nearest_control

logger = logging.getLogger(__name__)

FEATURES_METHOD = "features"
PostprocessMode = Literal["off", "on", "both"]


@dataclass(frozen=True)
class EvaluationOptions:
    constraints: tuple[str, ...] = CONSTRAINTS
    postprocess: PostprocessMode = "off"
    shrink: float = 0.1
    counterfactual: bool = False
    n_permutations: int = 200


# ── Embedding ─────────────────────────────────────────────────────────


def embed_wells(ds: Dataset, indices: list[int], params: ModelParams | None = None) -> list[WellEmbedding]:
    """Well-level embeddings: FOV mean of projected representations, or of raw features."""
    groups = {}
    for i in indices:
        well = ds.wells[i]
        reps = well.fovs if params is None else encode_images(params, well.fovs, mode="infer")
        groups[well.key] = (well.perturbation_id, reps)
    return aggregate_wells(groups)


def counterfactual_embedding(ds: Dataset, params: ModelParams, well: WellRecord, plate_controls: list[WellRecord]) -> WellEmbedding:
    """Generated embedding of ``well``: its nearest DMSO well fused with its compound.

    Each control FOV is fused separately and the fused vectors are averaged.
    """
    control = nearest_control(well, plate_controls)
    fingerprint = ds.compounds[well.perturbation_id].fingerprint
    if fingerprint.n_bits != params.architecture.fp_bits:
        raise ValueError(
            f"Compound '{well.perturbation_id}' has a {fingerprint.n_bits}-bit fingerprint, "
            f"model expects {params.architecture.fp_bits}."
        )
    context = encode_and_project(
        params,
        control.fovs,
        owners=[(ds.index_of[control.key], f) for f in range(control.n_fovs)],
        labels=[CONTROL_ID] * control.n_fovs,
    )
    compound = np.tile(encode_compound(params, fingerprint.to_array()), (len(context), 1))
    fused = fuse_counterfactual(params, context, compound, [well.perturbation_id] * len(context))
    groups = {well.key: (well.perturbation_id, np.stack([rep.vector for rep in fused]))}
    return aggregate_wells(groups)[0]


def _controls_on_plates(ds: Dataset, plates: set[tuple[str, str, str]]) -> list[int]:
    return [i for i, w in enumerate(ds.wells) if w.is_control and w.key.plate_key in plates]


# ── Retrieval ─────────────────────────────────────────────────────────


def _matched_indices(report: RetrievalReport, retrieval: list[WellEmbedding]) -> np.ndarray:
    position = {str(e.key): j for j, e in enumerate(retrieval)}
    return np.asarray([position[m.matched_key] for m in report.per_query], dtype=np.int64)


def run_retrieval(
    query: list[WellEmbedding],
    retrieval: list[WellEmbedding],
    constraints: tuple[str, ...],
    n_permutations: int,
    rng_seed: int,
    **tags,
) -> list[RetrievalReport]:
    """One report per constraint, each with a label-permutation p-value."""
    reports = []
    for constraint in constraints:
        report = retrieve_1nn(query, retrieval, constraint)
        if n_permutations > 0 and report.n_queries:
            rng = make_rng(rng_seed, "permutation", constraint, str(tags.get("postprocess")), tags.get("representation", "real"))
            p = permutation_p_value(
                [m.query_perturbation for m in report.per_query],
                _matched_indices(report, retrieval),
                [e.perturbation_id for e in retrieval],
                n_permutations,
                rng,
            )
            tags_with_p = {**tags, "permutation_p": p}
        else:
            tags_with_p = tags
        reports.append(report.model_copy(update=tags_with_p))
    return reports


def evaluate(
    ds: Dataset,
    split: SplitSpec,
    params: ModelParams | None,
    method: str,
    seed: int,
    options: EvaluationOptions = EvaluationOptions(),
) -> tuple[list[RetrievalReport], list[WellEmbedding]]:
    """Embed query and retrieval wells and run every requested retrieval setting.

    ``params=None`` selects the raw-feature baseline. Returns the reports and
    the raw (un-post-processed) real embeddings of every matched well.

    Raises:
        UnsatisfiableConstraintError: If a query well has no eligible candidate.
        MissingControlError: If post-processing meets a plate with < 2 DMSO wells.
    """
    query_idx = sorted(i for i in split.query if not ds.wells[i].is_control)
    retrieval_idx = sorted(i for i in split.retrieval if not ds.wells[i].is_control)
    if not query_idx or not retrieval_idx:
        raise ValueError("Evaluation needs non-control wells in both the query and retrieval splits.")

    plates = {ds.wells[i].key.plate_key for i in query_idx + retrieval_idx}
    control_idx = _controls_on_plates(ds, plates)

    query = embed_wells(ds, query_idx, params)
    retrieval = embed_wells(ds, retrieval_idx, params)
    controls = embed_wells(ds, control_idx, params)

    variants: list[tuple[str, list[WellEmbedding]]] = [("real", query)]
    if options.counterfactual:
        if params is None or method != "micon":
            logger.warning("Counterfactual retrieval needs a MICON checkpoint; skipped for '%s'.", method)
        else:
            plate_controls: dict[tuple[str, str, str], list[WellRecord]] = defaultdict(list)
            for i in control_idx:
                plate_controls[ds.wells[i].key.plate_key].append(ds.wells[i])
            for i in query_idx:
                plate = ds.wells[i].key.plate_key
                if plate not in plate_controls:
                    name = "/".join(plate)
                    raise MissingControlError(f"Plate {name} has no DMSO well to serve as counterfactual context.", plate=name)
            generated = [
                counterfactual_embedding(ds, params, ds.wells[i], plate_controls[ds.wells[i].key.plate_key])
                for i in query_idx
            ]
            variants.append(("generated", generated))

    flags = {"off": [False], "on": [True], "both": [False, True]}[options.postprocess]
    reports: list[RetrievalReport] = []
    for post in flags:
        if post:
            retrieval_set = postprocess(retrieval, controls, options.shrink)
        else:
            retrieval_set = retrieval
        for representation, queries in variants:
            query_set = postprocess(queries, controls, options.shrink) if post else queries
            reports += run_retrieval(
                query_set, retrieval_set, options.constraints, options.n_permutations, seed,
                method=method, seed=seed, postprocess=post, representation=representation,
            )

    logger.info(
        "Evaluated %s (seed %d):\n%s",
        method, seed,
        "\n".join(
            f"  {r.constraint:<4} post={str(r.postprocess):<5} {r.representation:<9} "
            f"acc {r.accuracy:.4f} (chance {r.chance_level:.4f}, p {r.permutation_p if r.permutation_p is not None else float('nan'):.4f})"
            for r in reports
        ),
    )
    return reports, query + retrieval
