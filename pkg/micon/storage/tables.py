"""Delimited-text tables: wells, compounds and well embeddings.

Row numbers in errors are file line numbers (the header is line 1).
Floats are written with 17 significant digits and read back with pandas'
round-trip parser, so ingest -> export -> ingest reproduces every value.
"""

import logging
import re
from collections import OrderedDict
from pathlib import Path

import numpy as np
import pandas as pd

from micon.ai_core.fingerprint_engine import DEFAULT_N_BITS, DEFAULT_RADIUS, fingerprint_smiles
from micon.errors import DatasetFormatError, MissingArtifactError, SmilesParseError
from micon.models.records import CONTROL_ID, CompoundRecord, Dataset, WellEmbedding, WellKey, WellRecord

logger = logging.getLogger(__name__)

WELL_ID_COLUMNS = ["source_id", "batch_id", "plate_id", "row", "col", "perturbation_id", "fov_index"]
COMPOUND_COLUMNS = ["compound_id", "smiles"]
EMBEDDING_ID_COLUMNS = ["source", "batch", "plate", "row", "col", "perturbation_id"]
FLOAT_FORMAT = "%.17g"

_LINE_PATTERN = re.compile(r"line (\d+)")


def _read_csv(path: Path, text_columns: list[str]) -> pd.DataFrame:
    if not path.is_file():
        raise MissingArtifactError(f"Table not found: {path}")
    try:
        return pd.read_csv(
            path,
            dtype={c: str for c in text_columns},
            keep_default_na=False,
            float_precision="round_trip",
            encoding="utf-8",
        )
    except pd.errors.ParserError as exc:
        match = _LINE_PATTERN.search(str(exc))
        row = int(match.group(1)) if match else None
        raise DatasetFormatError(f"malformed row in {path.name}: {exc}", row=row) from exc
    except pd.errors.EmptyDataError as exc:
        raise DatasetFormatError(f"{path.name} is empty; a header row is required") from exc


def _require_columns(frame: pd.DataFrame, required: list[str], table: str) -> None:
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise DatasetFormatError(f"{table} is missing column(s) {', '.join(missing)}", row=1)


def _feature_columns(frame: pd.DataFrame, prefix: str, table: str) -> list[str]:
    found = [c for c in frame.columns if re.fullmatch(rf"{prefix}_\d+", str(c))]
    expected = [f"{prefix}_{i}" for i in range(len(found))]
    if not found or sorted(found, key=lambda c: int(c.split("_")[1])) != expected:
        raise DatasetFormatError(f"{table} needs contiguous columns {prefix}_0..{prefix}_{{d-1}}", row=1)
    return expected


def _numeric_block(frame: pd.DataFrame, columns: list[str], table: str) -> np.ndarray:
    block = frame[columns].apply(pd.to_numeric, errors="coerce").to_numpy(dtype=np.float64)
    bad = ~np.isfinite(block)
    if bad.any():
        line = int(np.argmax(bad.any(axis=1))) + 2
        raise DatasetFormatError(
            f"{table} has a missing or non-numeric feature value (inconsistent dimension?)", row=line
        )
    return block


# ── Compounds ─────────────────────────────────────────────────────────


def read_compounds(
    path: str | Path, n_bits: int = DEFAULT_N_BITS, radius: int = DEFAULT_RADIUS
) -> dict[str, CompoundRecord]:
    """Read ``compound_id,smiles`` and fingerprint every compound."""
    path = Path(path)
    frame = _read_csv(path, COMPOUND_COLUMNS)
    _require_columns(frame, COMPOUND_COLUMNS, "compounds table")

    compounds: dict[str, CompoundRecord] = {}
    for offset, (compound_id, smiles) in enumerate(zip(frame["compound_id"], frame["smiles"])):
        line = offset + 2
        if not compound_id:
            raise DatasetFormatError("empty compound_id", row=line)
        if compound_id == CONTROL_ID:
            raise DatasetFormatError(f"'{CONTROL_ID}' is reserved for negative controls", row=line)
        if compound_id in compounds:
            raise DatasetFormatError(f"duplicate compound_id '{compound_id}'", row=line)
        try:
            fingerprint = fingerprint_smiles(smiles, radius, n_bits)
        except SmilesParseError as exc:
            raise DatasetFormatError(f"compound '{compound_id}': {exc}", row=line) from exc
        compounds[compound_id] = CompoundRecord(compound_id, smiles, fingerprint)

    logger.info("Read %d compounds from %s", len(compounds), path)
    return compounds


def write_compounds(path: str | Path, compounds: dict[str, CompoundRecord]) -> None:
    frame = pd.DataFrame(
        [(c.compound_id, c.smiles) for c in compounds.values()], columns=COMPOUND_COLUMNS
    )
    frame.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")


# ── Wells ─────────────────────────────────────────────────────────────


def ingest_features(
    wells_table: str | Path,
    compounds_table: str | Path,
    n_bits: int = DEFAULT_N_BITS,
    radius: int = DEFAULT_RADIUS,
) -> Dataset:
    """Build a ``Dataset`` from a per-FOV feature table and a compound table.

    Raises:
        DatasetFormatError: Missing column, inconsistent feature dimension,
            unknown compound id or conflicting well annotations, with the line.
        MissingArtifactError: If a table file does not exist.
    """
    compounds = read_compounds(compounds_table, n_bits, radius)
    path = Path(wells_table)
    frame = _read_csv(path, ["source_id", "batch_id", "plate_id", "perturbation_id"])
    _require_columns(frame, WELL_ID_COLUMNS, "wells table")
    feature_columns = _feature_columns(frame, "f", "wells table")
    features = _numeric_block(frame, feature_columns, "wells table")

    grouped: "OrderedDict[WellKey, tuple[str, list[tuple[int, np.ndarray]]]]" = OrderedDict()
    for offset, record in enumerate(frame[WELL_ID_COLUMNS].itertuples(index=False)):
        line = offset + 2
        try:
            key = WellKey(record.source_id, record.batch_id, record.plate_id, int(record.row), int(record.col))
            fov_index = int(record.fov_index)
        except (TypeError, ValueError) as exc:
            raise DatasetFormatError(f"bad well identifier: {exc}", row=line) from exc
        perturbation = record.perturbation_id
        if perturbation != CONTROL_ID and perturbation not in compounds:
            raise DatasetFormatError(f"unknown compound_id '{perturbation}'", row=line)

        if key not in grouped:
            grouped[key] = (perturbation, [])
        elif grouped[key][0] != perturbation:
            raise DatasetFormatError(
                f"well {key} has conflicting perturbations '{grouped[key][0]}' and '{perturbation}'", row=line
            )
        fovs = grouped[key][1]
        if any(existing == fov_index for existing, _ in fovs):
            raise DatasetFormatError(f"duplicate fov_index {fov_index} for well {key}", row=line)
        fovs.append((fov_index, features[offset]))

    wells = tuple(
        WellRecord(key, perturbation, np.stack([v for _, v in sorted(fovs, key=lambda item: item[0])]))
        for key, (perturbation, fovs) in grouped.items()
    )
    ds = Dataset(wells, compounds, len(feature_columns))
    logger.info(
        "Ingested %s: %d wells, %d FOV rows, feature dim %d",
        path.name, len(wells), len(frame), ds.feature_dim,
    )
    return ds


def export_dataset(ds: Dataset, wells_table: str | Path, compounds_table: str | Path) -> None:
    """Write ``ds`` in the same table format ``ingest_features`` reads."""
    rows = []
    for well in ds.wells:
        k = well.key
        for fov_index, vector in enumerate(well.fovs):
            rows.append([k.source_id, k.batch_id, k.plate_id, k.row, k.col, well.perturbation_id, fov_index, *vector])
    columns = WELL_ID_COLUMNS + [f"f_{i}" for i in range(ds.feature_dim)]
    pd.DataFrame(rows, columns=columns).to_csv(
        wells_table, index=False, float_format=FLOAT_FORMAT, encoding="utf-8", lineterminator="\n"
    )
    write_compounds(compounds_table, ds.compounds)
    logger.info("Exported %d wells to %s", len(ds.wells), wells_table)


# ── Embeddings ────────────────────────────────────────────────────────


def write_embeddings(path: str | Path, embeddings: list[WellEmbedding]) -> None:
    if not embeddings:
        raise ValueError("No embeddings to write.")
    dim = embeddings[0].vector.size
    rows = [
        [e.key.source_id, e.key.batch_id, e.key.plate_id, e.key.row, e.key.col, e.perturbation_id, *e.vector]
        for e in embeddings
    ]
    pd.DataFrame(rows, columns=EMBEDDING_ID_COLUMNS + [f"v_{i}" for i in range(dim)]).to_csv(
        path, index=False, float_format=FLOAT_FORMAT, encoding="utf-8", lineterminator="\n"
    )


def read_embeddings(path: str | Path) -> list[WellEmbedding]:
    path = Path(path)
    frame = _read_csv(path, ["source", "batch", "plate", "perturbation_id"])
    _require_columns(frame, EMBEDDING_ID_COLUMNS, "embedding table")
    vectors = _numeric_block(frame, _feature_columns(frame, "v", "embedding table"), "embedding table")
    return [
        WellEmbedding(WellKey(r.source, r.batch, r.plate, int(r.row), int(r.col)), r.perturbation_id, vectors[i])
        for i, r in enumerate(frame[EMBEDDING_ID_COLUMNS].itertuples(index=False))
    ]
