"""Split protocols.

- ``id_batch``: in-distribution, batches held out per source.
- ``ood_source``: one unseen source; half its batches join retrieval, half are queries.
- ``ood_compound``: unseen compounds; a fixed number of wells per compound for
  retrieval and for queries.

DMSO wells follow the partition of their batch; evaluation drops them from
matching and uses them only as plate controls.
"""

import logging
from collections import defaultdict

import numpy as np

from micon.ai_core.rng import make_rng
from micon.errors import SplitError
from micon.models.records import Dataset, SplitSpec

logger = logging.getLogger(__name__)


def round_half_up(value: float) -> int:
    return int(np.floor(value + 0.5))


def _wells_by_batch(ds: Dataset) -> dict[tuple[str, str], list[int]]:
    grouped: dict[tuple[str, str], list[int]] = defaultdict(list)
    for index, well in enumerate(ds.wells):
        grouped[well.key.batch_key].append(index)
    return grouped


def _shuffled(items: list[str], rng: np.random.Generator) -> list[str]:
    return [items[i] for i in rng.permutation(len(items))]


def check_solvable(ds: Dataset, split: SplitSpec) -> None:
    """Every non-control query perturbation must occur in retrieval."""
    available = {ds.wells[i].perturbation_id for i in split.retrieval}
    missing = sorted(
        {ds.wells[i].perturbation_id for i in split.query if not ds.wells[i].is_control} - available
    )
    if missing:
        raise SplitError(f"Query perturbations absent from retrieval: {', '.join(missing[:5])}")


def _log_split(split: SplitSpec) -> None:
    sizes = split.sizes()
    logger.info(
        "Split %s (seed %d):\n"
        "  train:     %d wells\n"
        "  val:       %d wells\n"
        "  retrieval: %d wells\n"
        "  query:     %d wells",
        split.protocol, split.seed,
        sizes["train"], sizes["val"], sizes["retrieval"], sizes["query"],
    )


# ------------------------------------------------------------------
# In-distribution: held-out batches
# ------------------------------------------------------------------

def split_id_by_batch(ds: Dataset, query_frac: float, val_batches_per_source: int, seed: int) -> SplitSpec:
    """Per source: ``round(query_frac * n)`` batches to query, then validation, rest train.

    Raises:
        SplitError: If ``query_frac`` is not in (0, 1) or a source has fewer
            than ``val_batches_per_source + 2`` batches.
    """
    if not 0.0 < query_frac < 1.0:
        raise SplitError(f"query_frac must lie in (0, 1), got {query_frac}; the query set cannot be empty.")
    if val_batches_per_source < 0:
        raise SplitError("val_batches_per_source must be >= 0.")

    by_batch = _wells_by_batch(ds)
    train: set[int] = set()
    val: set[int] = set()
    query: set[int] = set()
    for source, batches in ds.batches_by_source().items():
        if len(batches) < val_batches_per_source + 2:
            raise SplitError(
                f"Source '{source}' has {len(batches)} batches; "
                f"needs at least {val_batches_per_source + 2} for this split."
            )
        n_query = max(1, round_half_up(query_frac * len(batches)))
        n_query = min(n_query, len(batches) - val_batches_per_source - 1)
        order = _shuffled(batches, make_rng(seed, "split", "id_batch", source))
        for position, batch in enumerate(order):
            wells = by_batch[(source, batch)]
            if position < n_query:
                query.update(wells)
            elif position < n_query + val_batches_per_source:
                val.update(wells)
            else:
                train.update(wells)

    split = SplitSpec(
        train=frozenset(train), val=frozenset(val), retrieval=frozenset(train | val),
        query=frozenset(query), seed=seed, protocol="id_batch",
    )
    check_solvable(ds, split)
    _log_split(split)
    return split


# ------------------------------------------------------------------
# Out-of-distribution: unseen source
# ------------------------------------------------------------------

def _train_val_by_source(
    ds: Dataset, sources: list[str], seed: int, protocol: str, keep: set[int] | None = None
) -> tuple[set[int], set[int]]:
    by_batch = _wells_by_batch(ds)
    batches_by_source = ds.batches_by_source()
    train: set[int] = set()
    val: set[int] = set()
    for source in sources:
        batches = batches_by_source[source]
        order = _shuffled(batches, make_rng(seed, "split", protocol, source))
        if len(order) < 2:
            logger.warning("Source '%s' has a single batch; it contributes no validation batch.", source)
        for position, batch in enumerate(order):
            wells = {w for w in by_batch[(source, batch)] if keep is None or w in keep}
            (val if position == 0 and len(order) >= 2 else train).update(wells)
    return train, val


def split_ood_source(ds: Dataset, unseen_source: str, seed: int) -> SplitSpec:
    """Hold one source out; half its batches extend retrieval, the rest are queries.

    Raises:
        SplitError: If the source is unknown or has a single batch.
    """
    batches_by_source = ds.batches_by_source()
    if unseen_source not in batches_by_source:
        raise SplitError(f"Unknown source '{unseen_source}'.")
    unseen_batches = batches_by_source[unseen_source]
    if len(unseen_batches) < 2:
        raise SplitError(f"Unseen source '{unseen_source}' needs at least 2 batches, has {len(unseen_batches)}.")

    seen_sources = [s for s in batches_by_source if s != unseen_source]
    if not seen_sources:
        raise SplitError("The out-of-source split needs at least one training source.")
    train, val = _train_val_by_source(ds, seen_sources, seed, "ood_source")

    by_batch = _wells_by_batch(ds)
    order = _shuffled(unseen_batches, make_rng(seed, "split", "ood_source", "unseen", unseen_source))
    n_retrieval = (len(order) + 1) // 2
    extra_retrieval = {w for b in order[:n_retrieval] for w in by_batch[(unseen_source, b)]}
    query = {w for b in order[n_retrieval:] for w in by_batch[(unseen_source, b)]}

    split = SplitSpec(
        train=frozenset(train), val=frozenset(val), retrieval=frozenset(train | val | extra_retrieval),
        query=frozenset(query), seed=seed, protocol="ood_source",
        notes={"unseen_source": unseen_source},
    )
    check_solvable(ds, split)
    _log_split(split)
    return split


# ------------------------------------------------------------------
# Out-of-distribution: unseen compounds
# ------------------------------------------------------------------

def pick_unseen_compounds(ds: Dataset, n_unseen: int, seed: int) -> set[str]:
    compounds = sorted(ds.compounds)
    if not 0 < n_unseen < len(compounds):
        raise SplitError(f"n_unseen_compounds must lie in [1, {len(compounds) - 1}], got {n_unseen}.")
    order = _shuffled(compounds, make_rng(seed, "split", "ood_compound", "unseen"))
    return set(order[:n_unseen])


def split_ood_compound(
    ds: Dataset,
    seen_compounds: set[str],
    unseen_wells_retrieval: int,
    unseen_wells_query: int,
    seed: int,
) -> SplitSpec:
    """Train on seen compounds; query unseen compounds against seen plus sampled unseen wells.

    Raises:
        SplitError: If an unseen compound has fewer than
            ``unseen_wells_retrieval + unseen_wells_query`` wells.
    """
    unknown = set(seen_compounds) - set(ds.compounds)
    if unknown:
        raise SplitError(f"Seen compounds not in dataset: {', '.join(sorted(unknown))}")
    if unseen_wells_retrieval < 1 or unseen_wells_query < 1:
        raise SplitError("unseen_wells_retrieval and unseen_wells_query must both be >= 1.")

    unseen = sorted(set(ds.compounds) - set(seen_compounds))
    if not unseen:
        raise SplitError("Every compound is marked seen; no unseen compounds to query.")

    wells_by_compound: dict[str, list[int]] = defaultdict(list)
    for index, well in enumerate(ds.wells):
        wells_by_compound[well.perturbation_id].append(index)

    keep = {i for i, well in enumerate(ds.wells) if well.is_control or well.perturbation_id in seen_compounds}
    train, val = _train_val_by_source(ds, ds.sources(), seed, "ood_compound", keep)

    needed = unseen_wells_retrieval + unseen_wells_query
    retrieval_extra: set[int] = set()
    query: set[int] = set()
    for compound in unseen:
        wells = wells_by_compound.get(compound, [])
        if len(wells) < needed:
            raise SplitError(f"Unseen compound '{compound}' has {len(wells)} wells; needs {needed}.")
        order = [wells[i] for i in make_rng(seed, "split", "ood_compound", compound).permutation(len(wells))]
        query.update(order[:unseen_wells_query])
        retrieval_extra.update(order[unseen_wells_query:needed])

    split = SplitSpec(
        train=frozenset(train), val=frozenset(val), retrieval=frozenset(train | retrieval_extra),
        query=frozenset(query), seed=seed, protocol="ood_compound",
        notes={"unseen_compounds": ",".join(unseen)},
    )
    check_solvable(ds, split)
    _log_split(split)
    return split
