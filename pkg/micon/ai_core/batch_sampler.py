"""Training-batch assembly.

A MICON batch is the union of three index sets over ``(well, fov)`` refs:

- ``T1``: ``T`` perturbed images drawn uniformly from the training split;
- ``T2``: for each ``T1[j]`` another image of the same perturbation;
- ``C``:  ``C`` DMSO images from the plates of ``T1 ∪ T2`` (batch as fallback),
  spread over as many of their microscopy batches as ``C`` allows.

Each ``T1[j]`` is also paired with one of the sampled controls from its own
batch; the pair feeds the fusion module.
"""

import logging
import queue
import threading
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from micon.ai_core.micon_model import BatchTensors
from micon.errors import SplitError
from micon.models.hyperparams import HyperParams
from micon.models.records import CONTROL_ID, Dataset

logger = logging.getLogger(__name__)

Ref = tuple[int, int]


@dataclass(frozen=True)
class TrainingBatch:
    """Index triple ``(T1, T2, C)``; every array holds ``(well, fov)`` rows."""

    t1: np.ndarray
    t2: np.ndarray
    controls: np.ndarray
    labels: tuple[str, ...]
    batch_ids: tuple[tuple[str, str], ...]
    control_batch_ids: tuple[tuple[str, str], ...]
    cf_pairs: np.ndarray

    def __post_init__(self) -> None:
        if len(self.t1) != len(self.t2) or len(self.t1) != len(self.labels):
            raise ValueError("T1, T2 and labels must have equal length.")
        for a, b in zip(self.t1, self.t2):
            if tuple(a) == tuple(b):
                raise ValueError(f"T1 and T2 share the image {tuple(a)}.")
        stray = set(self.control_batch_ids) - set(self.batch_ids)
        if stray:
            raise ValueError(f"Controls drawn from batches without perturbed images: {sorted(stray)}.")


class SamplerIndex:
    """Lookup tables over one split's wells, built once per run."""

    def __init__(self, ds: Dataset, wells: frozenset[int] | set[int]) -> None:
        self.ds = ds
        self.perturbed: list[Ref] = []
        self.by_perturbation: dict[str, list[Ref]] = defaultdict(list)
        self.controls_by_plate: dict[tuple[str, str, str], list[Ref]] = defaultdict(list)
        self.controls_by_batch: dict[tuple[str, str], list[Ref]] = defaultdict(list)
        self.all_refs: list[Ref] = []

        for w in sorted(wells):
            well = ds.wells[w]
            for f in range(well.n_fovs):
                ref = (w, f)
                self.all_refs.append(ref)
                if well.is_control:
                    self.controls_by_plate[well.key.plate_key].append(ref)
                    self.controls_by_batch[well.key.batch_key].append(ref)
                else:
                    self.perturbed.append(ref)
                    self.by_perturbation[well.perturbation_id].append(ref)

        if not self.all_refs:
            raise SplitError("Cannot sample from an empty split.")

    def label(self, ref: Ref) -> str:
        return self.ds.wells[ref[0]].perturbation_id

    def batch_of(self, ref: Ref) -> tuple[str, str]:
        return self.ds.wells[ref[0]].key.batch_key

    def plate_of(self, ref: Ref) -> tuple[str, str, str]:
        return self.ds.wells[ref[0]].key.plate_key


def sample_training_batch(
    index: SamplerIndex,
    pairs: int,
    controls: int,
    rng: np.random.Generator,
    max_resample: int = 32,
) -> TrainingBatch:
    """Draw one ``(T1, T2, C)`` batch.

    Raises:
        SplitError: When only single-image perturbations keep being drawn, or a
            perturbed batch holds no control image.
    """
    if not index.perturbed:
        raise SplitError("The split holds no perturbed images.")

    t1: list[Ref] = []
    t2: list[Ref] = []
    for _ in range(pairs):
        for _attempt in range(max_resample):
            anchor = index.perturbed[int(rng.integers(len(index.perturbed)))]
            siblings = [r for r in index.by_perturbation[index.label(anchor)] if r != anchor]
            if siblings:
                break
        else:
            raise SplitError(
                f"Drew only single-image perturbations in {max_resample} attempts "
                f"(last: '{index.label(anchor)}')."
            )
        t1.append(anchor)
        t2.append(siblings[int(rng.integers(len(siblings)))])

    perturbed = t1 + t2
    plates_by_batch: dict[tuple[str, str], set[tuple[str, str, str]]] = defaultdict(set)
    for ref in perturbed:
        plates_by_batch[index.batch_of(ref)].add(index.plate_of(ref))

    def eligible(batch: tuple[str, str]) -> list[Ref]:
        on_plates = [r for plate in sorted(plates_by_batch[batch]) for r in index.controls_by_plate.get(plate, [])]
        if on_plates:
            return on_plates
        fallback = index.controls_by_batch.get(batch, [])
        if not fallback:
            raise SplitError(f"No control image in batch {batch[0]}/{batch[1]} of the training split.")
        return fallback

    batches = sorted(plates_by_batch)
    order = [batches[i] for i in rng.permutation(len(batches))]
    pools = {batch: eligible(batch) for batch in batches}

    chosen: list[Ref] = []
    for batch in order[:controls]:
        pool = pools[batch]
        chosen.append(pool[int(rng.integers(len(pool)))])
    if len(chosen) < controls:
        pool = [r for batch in batches for r in pools[batch]]
        remaining = controls - len(chosen)
        leftovers = [r for r in pool if r not in chosen]
        if len(leftovers) >= remaining:
            picks = rng.choice(len(leftovers), size=remaining, replace=False)
            chosen.extend(leftovers[int(i)] for i in picks)
        else:
            picks = rng.integers(len(pool), size=remaining)
            chosen.extend(pool[int(i)] for i in picks)

    cf_pairs = _pair_counterfactual_contexts(index, t1, chosen)
    return TrainingBatch(
        t1=np.asarray(t1, dtype=np.int64).reshape(-1, 2),
        t2=np.asarray(t2, dtype=np.int64).reshape(-1, 2),
        controls=np.asarray(chosen, dtype=np.int64).reshape(-1, 2),
        labels=tuple(index.label(r) for r in t1),
        batch_ids=tuple(index.batch_of(r) for r in perturbed),
        control_batch_ids=tuple(index.batch_of(r) for r in chosen),
        cf_pairs=cf_pairs,
    )


def _pair_counterfactual_contexts(index: SamplerIndex, t1: list[Ref], chosen: list[Ref]) -> np.ndarray:
    """Control slot for each ``T1[j]``: same plate, else same batch, else ``j mod C``."""
    pairs = np.zeros(len(t1), dtype=np.int64)
    for j, ref in enumerate(t1):
        same_plate = [k for k, c in enumerate(chosen) if index.plate_of(c) == index.plate_of(ref)]
        same_batch = [k for k, c in enumerate(chosen) if index.batch_of(c) == index.batch_of(ref)]
        candidates = same_plate or same_batch
        pairs[j] = candidates[j % len(candidates)] if candidates else j % len(chosen)
    return pairs


class BatchSampler:
    """Turns sampled index batches into ``BatchTensors`` for one method."""

    def __init__(
        self,
        ds: Dataset,
        wells: frozenset[int] | set[int],
        hp: HyperParams,
        method: str,
        rng: np.random.Generator,
        augment_rng: np.random.Generator | None = None,
    ) -> None:
        self.ds = ds
        self.hp = hp
        self.method = method
        self.rng = rng
        self.augment_rng = augment_rng or rng
        self.index = SamplerIndex(ds, wells)
        self.pairs, self.controls = hp.layout()
        self._fp_cache: dict[str, np.ndarray] = {}

        if method == "simclr":
            features = ds.fov_matrix(np.asarray(self.index.all_refs))
            self._feature_sd = features.std(axis=0)

    def fingerprint_matrix(self, labels: list[str] | tuple[str, ...]) -> np.ndarray:
        rows = []
        for label in labels:
            if label not in self._fp_cache:
                fingerprint = self.ds.compounds[label].fingerprint
                if fingerprint.n_bits != self.hp.fp_bits:
                    raise ValueError(
                        f"Compound '{label}' has a {fingerprint.n_bits}-bit fingerprint, model expects {self.hp.fp_bits}."
                    )
                self._fp_cache[label] = fingerprint.to_array()
            rows.append(self._fp_cache[label])
        return np.stack(rows)

    def next_batch(self) -> BatchTensors:
        if self.method in ("micon", "paclr_only"):
            return self._paclr_batch()
        if self.method == "simclr":
            return self._simclr_batch()
        if self.method == "clip":
            return self._clip_batch()
        raise ValueError(f"Unknown training method '{self.method}'.")

    def _paclr_batch(self) -> BatchTensors:
        batch = sample_training_batch(self.index, self.pairs, self.controls, self.rng, self.hp.max_resample)
        refs = np.vstack([batch.t1, batch.t2, batch.controls])
        labels = np.asarray(list(batch.labels) * 2 + [CONTROL_ID] * len(batch.controls))
        n_real = 2 * len(batch.t1)
        return BatchTensors(
            images=self.ds.fov_matrix(refs),
            labels=labels,
            fingerprints=self.fingerprint_matrix(batch.labels),
            cf_labels=np.asarray(batch.labels),
            cf_context_rows=n_real + batch.cf_pairs,
            cf_anchor_rows=np.arange(n_real),
        )

    def _simclr_batch(self) -> BatchTensors:
        n_instances = max(1, self.hp.batch_size // 2)
        picks = self.rng.integers(len(self.index.all_refs), size=n_instances)
        base = self.ds.fov_matrix(np.asarray([self.index.all_refs[int(i)] for i in picks]))
        views = np.vstack([self._augment(base), self._augment(base)])
        return BatchTensors(images=views, labels=np.tile(np.arange(n_instances), 2))

    def _augment(self, features: np.ndarray) -> np.ndarray:
        jitter = self.augment_rng.normal(0.0, 1.0, features.shape) * (self.hp.augment_jitter * self._feature_sd)
        keep = self.augment_rng.random(features.shape) >= self.hp.augment_dropout
        return (features + jitter) * keep

    def _clip_batch(self) -> BatchTensors:
        if not self.index.perturbed:
            raise SplitError("The split holds no perturbed images.")
        picks = self.rng.integers(len(self.index.perturbed), size=self.hp.batch_size)
        refs = [self.index.perturbed[int(i)] for i in picks]
        labels = [self.index.label(r) for r in refs]
        return BatchTensors(
            images=self.ds.fov_matrix(np.asarray(refs)),
            labels=np.asarray(labels),
            fingerprints=self.fingerprint_matrix(labels),
        )


class BatchPrefetcher:
    """Runs a ``BatchSampler`` on one worker thread behind a bounded queue.

    Batches come out in the order the worker drew them, so a single worker
    keeps the draw sequence identical to in-line sampling.
    """

    _STOP = object()

    def __init__(self, sampler: BatchSampler, depth: int = 2) -> None:
        self.sampler = sampler
        self._queue: queue.Queue = queue.Queue(maxsize=depth)
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._work, name="micon-batch-producer", daemon=True)
        self._thread.start()

    def _work(self) -> None:
        while not self._stop.is_set():
            try:
                item = self.sampler.next_batch()
            except Exception as exc:  # surfaced to the consumer
                item = exc
            while not self._stop.is_set():
                try:
                    self._queue.put(item, timeout=0.1)
                    break
                except queue.Full:
                    continue
            if isinstance(item, Exception):
                return

    def next_batch(self) -> BatchTensors:
        item = self._queue.get()
        if isinstance(item, Exception):
            raise item
        return item

    def close(self) -> None:
        self._stop.set()
        try:
            while True:
                self._queue.get_nowait()
        except queue.Empty:
            pass
        self._thread.join(timeout=5.0)
