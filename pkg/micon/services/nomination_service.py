"""Strong-compound nomination.

A compound well's strength is the cosine distance between its mean feature
vector and that of the DMSO well closest to it on the plate map. Per source,
the compounds with the largest replicate-averaged distances (top
``top_frac``) qualify; compounds qualifying in ``min_sources`` sources are
nominated.
"""

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field

from micon.ai_core.layers import cosine_similarity
from micon.errors import MissingControlError
from micon.models.records import Dataset, WellRecord

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Nomination:
    compound_id: str
    n_sources: int
    mean_distance: float
    source_distances: dict[str, float] = field(default_factory=dict)


def nearest_control(well: WellRecord, controls: list[WellRecord]) -> WellRecord:
    """DMSO well minimising plate-map distance; ties go to the smallest ``(row, col)``."""
    return min(
        controls,
        key=lambda c: ((c.key.row - well.key.row) ** 2 + (c.key.col - well.key.col) ** 2, c.key.row, c.key.col),
    )


def slot_count(top_frac: float, n: int) -> int:
    return max(1, math.floor(top_frac * n + 1e-9))


def compound_distances(ds: Dataset) -> dict[str, dict[str, float]]:
    """``source -> compound -> mean distance to nearest control``.

    Raises:
        MissingControlError: If a plate holding compound wells has no DMSO well.
    """
    per_source: dict[str, dict[str, list[float]]] = defaultdict(lambda: defaultdict(list))
    for plate, indices in sorted(ds.wells_by_plate().items()):
        wells = [ds.wells[i] for i in indices]
        controls = [w for w in wells if w.is_control]
        treated = [w for w in wells if not w.is_control]
        if treated and not controls:
            plate_name = "/".join(plate)
            raise MissingControlError(f"Plate {plate_name} has no DMSO wells to compare against.", plate=plate_name)
        control_means = {c.key: c.mean_features() for c in controls}
        for well in treated:
            control = nearest_control(well, controls)
            distance = 1.0 - cosine_similarity(well.mean_features(), control_means[control.key])
            per_source[well.key.source_id][well.perturbation_id].append(distance)

    return {
        source: {cid: sum(values) / len(values) for cid, values in compounds.items()}
        for source, compounds in per_source.items()
    }


def nominate_strong_compounds(ds: Dataset, top_frac: float = 0.1, min_sources: int = 4) -> list[Nomination]:
    """Compounds in the top ``top_frac`` of distances for at least ``min_sources`` sources.

    Sorted by number of qualifying sources, then mean distance over those
    sources (both descending).
    """
    if not 0.0 < top_frac <= 1.0:
        raise ValueError(f"top_frac must lie in (0, 1], got {top_frac}.")
    if min_sources < 1:
        raise ValueError(f"min_sources must be >= 1, got {min_sources}.")

    qualifying: dict[str, dict[str, float]] = defaultdict(dict)
    for source, distances in sorted(compound_distances(ds).items()):
        ranked = sorted(distances.items(), key=lambda item: (-item[1], item[0]))
        for compound_id, distance in ranked[: slot_count(top_frac, len(ranked))]:
            qualifying[compound_id][source] = distance

    nominations = [
        Nomination(cid, len(sources), sum(sources.values()) / len(sources), dict(sources))
        for cid, sources in qualifying.items()
        if len(sources) >= min_sources
    ]
    nominations.sort(key=lambda n: (-n.n_sources, -n.mean_distance, n.compound_id))
    logger.info(
        "Nominated %d of %d compounds (top %.0f%%, >= %d sources)",
        len(nominations), len(ds.compounds), top_frac * 100, min_sources,
    )
    return nominations
