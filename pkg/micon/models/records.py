"""Immutable domain records: wells, compounds, datasets and splits."""

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from micon.ai_core.fingerprint_engine import Fingerprint

logger = logging.getLogger(__name__)

CONTROL_ID = "DMSO"
SPLIT_TAGS = ("train", "val", "retrieval", "query")


@dataclass(frozen=True, order=True)
class WellKey:
    """Physical location of a well: ``source / batch / plate / (row, col)``."""

    source_id: str
    batch_id: str
    plate_id: str
    row: int
    col: int

    def __post_init__(self) -> None:
        for name in ("source_id", "batch_id", "plate_id"):
            value = getattr(self, name)
            if not value or any(ch in value for ch in ":\t\n"):
                raise ValueError(f"{name} must be non-empty without ':' or whitespace controls, got {value!r}.")
        if self.row < 0 or self.col < 0:
            raise ValueError(f"Well position must be non-negative, got ({self.row}, {self.col}).")

    @property
    def plate_key(self) -> tuple[str, str, str]:
        return (self.source_id, self.batch_id, self.plate_id)

    @property
    def batch_key(self) -> tuple[str, str]:
        return (self.source_id, self.batch_id)

    def __str__(self) -> str:
        return f"{self.source_id}:{self.batch_id}:{self.plate_id}:{self.row}:{self.col}"

    @classmethod
    def parse(cls, text: str) -> "WellKey":
        parts = text.strip().split(":")
        if len(parts) != 5:
            raise ValueError(f"Malformed well key {text!r}; expected source:batch:plate:row:col.")
        return cls(parts[0], parts[1], parts[2], int(parts[3]), int(parts[4]))


@dataclass(frozen=True, eq=False)
class WellRecord:
    """One experimental well and its per-FOV feature vectors ``(n_fovs, d)``."""

    key: WellKey
    perturbation_id: str
    fovs: np.ndarray
    split_tags: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        fovs = np.asarray(self.fovs, dtype=np.float64)
        if fovs.ndim != 2 or fovs.shape[0] < 1:
            raise ValueError(f"Well {self.key} needs a (n_fovs >= 1, d) matrix, got shape {fovs.shape}.")
        if not np.isfinite(fovs).all():
            raise ValueError(f"Well {self.key} has non-finite feature values.")
        if not self.perturbation_id:
            raise ValueError(f"Well {self.key} has an empty perturbation id.")
        unknown = set(self.split_tags) - set(SPLIT_TAGS)
        if unknown:
            raise ValueError(f"Unknown split tags {sorted(unknown)} on well {self.key}.")
        fovs.setflags(write=False)
        object.__setattr__(self, "fovs", fovs)

    @property
    def is_control(self) -> bool:
        return self.perturbation_id == CONTROL_ID

    @property
    def n_fovs(self) -> int:
        return int(self.fovs.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.fovs.shape[1])

    def mean_features(self) -> np.ndarray:
        return self.fovs.mean(axis=0)


@dataclass(frozen=True)
class CompoundRecord:
    compound_id: str
    smiles: str
    fingerprint: Fingerprint


@dataclass(frozen=True)
class BatchEffect:
    """Ground-truth nuisance applied to one ``(source, batch)``."""

    treatment_scale: float
    phenotype_shift: np.ndarray
    imaging_gain: np.ndarray
    imaging_offset: np.ndarray


@dataclass(frozen=True)
class GroundTruth:
    """Provenance recorded by the synthetic generator."""

    compound_effects: dict[str, np.ndarray]
    batch_effects: dict[tuple[str, str], BatchEffect]
    mixing_matrix: np.ndarray
    phenotype_base: np.ndarray


@dataclass(frozen=True, eq=False)
class Dataset:
    """A screen: wells plus the compounds they reference."""

    wells: tuple[WellRecord, ...]
    compounds: dict[str, CompoundRecord]
    feature_dim: int
    ground_truth: GroundTruth | None = None

    def __post_init__(self) -> None:
        seen: set[WellKey] = set()
        for well in self.wells:
            if well.feature_dim != self.feature_dim:
                raise ValueError(
                    f"Well {well.key} has feature dim {well.feature_dim}, dataset declares {self.feature_dim}."
                )
            if well.key in seen:
                raise ValueError(f"Duplicate well key {well.key}.")
            seen.add(well.key)
            if not well.is_control and well.perturbation_id not in self.compounds:
                raise ValueError(f"Well {well.key} references unknown compound '{well.perturbation_id}'.")
        if CONTROL_ID in self.compounds:
            raise ValueError(f"'{CONTROL_ID}' is reserved for negative controls and cannot carry a SMILES.")

    # ── lookups ──────────────────────────────────────────────────────

    @cached_property
    def index_of(self) -> dict[WellKey, int]:
        return {well.key: i for i, well in enumerate(self.wells)}

    @cached_property
    def fov_table(self) -> np.ndarray:
        """``(n_total_fovs, 2)`` array of ``(well index, fov index)`` rows."""
        rows = [(w, f) for w, well in enumerate(self.wells) for f in range(well.n_fovs)]
        return np.asarray(rows, dtype=np.int64).reshape(-1, 2)

    def sources(self) -> list[str]:
        return sorted({well.key.source_id for well in self.wells})

    def batches_by_source(self) -> dict[str, list[str]]:
        grouped: dict[str, set[str]] = defaultdict(set)
        for well in self.wells:
            grouped[well.key.source_id].add(well.key.batch_id)
        return {source: sorted(batches) for source, batches in sorted(grouped.items())}

    def wells_by_plate(self) -> dict[tuple[str, str, str], list[int]]:
        grouped: dict[tuple[str, str, str], list[int]] = defaultdict(list)
        for index, well in enumerate(self.wells):
            grouped[well.key.plate_key].append(index)
        return dict(grouped)

    def perturbations(self) -> list[str]:
        return sorted({well.perturbation_id for well in self.wells})

    def fov_matrix(self, refs: np.ndarray) -> np.ndarray:
        """Stack the feature vectors of ``(well, fov)`` reference rows."""
        refs = np.asarray(refs, dtype=np.int64).reshape(-1, 2)
        return np.stack([self.wells[w].fovs[f] for w, f in refs]) if len(refs) else np.zeros((0, self.feature_dim))

    def tagged(self, split: "SplitSpec") -> "Dataset":
        """Copy with every well's ``split_tags`` set from ``split``."""
        wells = tuple(
            WellRecord(well.key, well.perturbation_id, well.fovs, split.tags_for(i))
            for i, well in enumerate(self.wells)
        )
        return Dataset(wells, self.compounds, self.feature_dim, self.ground_truth)


@dataclass(frozen=True)
class SplitSpec:
    """Well-index partitions for one protocol and seed.

    ``query`` is disjoint from ``train`` and ``val``; ``val`` is disjoint from
    ``train``; ``retrieval`` may overlap both.
    """

    train: frozenset[int]
    val: frozenset[int]
    retrieval: frozenset[int]
    query: frozenset[int]
    seed: int
    protocol: str = "id_batch"
    notes: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.query & self.train:
            raise ValueError("Query and train splits overlap.")
        if self.query & self.val:
            raise ValueError("Query and validation splits overlap.")
        if self.val & self.train:
            raise ValueError("Validation and train splits overlap.")

    def tags_for(self, index: int) -> frozenset[str]:
        return frozenset(
            tag for tag, members in zip(SPLIT_TAGS, (self.train, self.val, self.retrieval, self.query))
            if index in members
        )

    def sizes(self) -> dict[str, int]:
        return {tag: len(getattr(self, tag)) for tag in SPLIT_TAGS}


@dataclass(frozen=True, eq=False)
class WellEmbedding:
    """One vector per well (FOV mean of a representation or of raw features)."""

    key: WellKey
    perturbation_id: str
    vector: np.ndarray

    def __post_init__(self) -> None:
        vector = np.asarray(self.vector, dtype=np.float64).reshape(-1)
        if vector.size == 0 or not np.isfinite(vector).all():
            raise ValueError(f"Embedding of well {self.key} must be a finite non-empty vector.")
        object.__setattr__(self, "vector", vector)

    @property
    def is_control(self) -> bool:
        return self.perturbation_id == CONTROL_ID
