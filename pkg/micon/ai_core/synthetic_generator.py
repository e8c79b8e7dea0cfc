"""Synthetic screens with known compound effects and layered batch effects.

Per compound ``k`` (fingerprint ``fp_k``)::

    e_k = s * unit(M @ fp_k) + (1 - s) * unit(g_k)        s = structure_signal

Per ``(source, batch)`` the nuisance acts at three levels: a scalar on the
treatment effect, an additive phenotype shift and an imaging-level diagonal
gain plus offset. Each is a mix of a source-level draw and a batch-level draw
weighted by ``within_source_ratio``. An FOV of a compound well::

    x = gain * (base + effect_strength * scale * R @ e_k + shift) + offset + noise

DMSO wells drop the ``R @ e_k`` term.
"""

import logging
import math
from pathlib import Path

import numpy as np

from micon.ai_core.fingerprint_engine import fingerprint_smiles
from micon.ai_core.rng import make_rng
from micon.models.records import (
    CONTROL_ID,
    BatchEffect,
    CompoundRecord,
    Dataset,
    GroundTruth,
    WellKey,
    WellRecord,
)
from micon.models.synth_config import SynthConfig

logger = logging.getLogger(__name__)

SMILES_POOL_PATH = Path(__file__).resolve().parent.parent / "data" / "smiles_pool.txt"


def load_smiles_pool(path: Path = SMILES_POOL_PATH) -> list[str]:
    lines = path.read_text(encoding="utf-8").splitlines()
    return [line.strip() for line in lines if line.strip() and not line.startswith("#")]


def plate_positions(wells_per_plate: int) -> list[tuple[int, int]]:
    """Row-major ``(row, col)`` grid with ``floor(sqrt(w))`` rows."""
    rows = max(1, math.isqrt(wells_per_plate))
    cols = math.ceil(wells_per_plate / rows)
    return [(i // cols, i % cols) for i in range(wells_per_plate)]


def control_slots(wells_per_plate: int, n_controls: int) -> set[int]:
    """Evenly spread control positions over a plate."""
    return {i * wells_per_plate // n_controls for i in range(n_controls)}


def _unit(vector: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vector))
    return vector / norm if norm > 0.0 else vector


class SyntheticGenerator:
    """Builds a ``Dataset`` from a ``SynthConfig``; same config, same dataset."""

    @staticmethod
    def generate(cfg: SynthConfig) -> Dataset:
        pool = load_smiles_pool()
        if cfg.n_compounds > len(pool):
            raise ValueError(f"n_compounds={cfg.n_compounds} exceeds the {len(pool)}-entry SMILES pool.")

        compounds, effects, mixing = SyntheticGenerator._compounds(cfg, pool)
        compound_ids = list(compounds)

        base_rng = make_rng(cfg.seed, "synthetic", "phenotype")
        phenotype_base = base_rng.normal(0.0, 1.0, cfg.feature_dim)
        readout = base_rng.normal(0.0, 1.0 / math.sqrt(cfg.latent_dim), (cfg.feature_dim, cfg.latent_dim))
        responses = {cid: readout @ effects[cid] for cid in compound_ids}

        batch_effects = SyntheticGenerator._batch_effects(cfg)
        positions = plate_positions(cfg.wells_per_plate)
        controls = control_slots(cfg.wells_per_plate, cfg.controls_per_plate)
        noise_rng = make_rng(cfg.seed, "synthetic", "noise")
        well_sd = cfg.noise_sd * cfg.well_noise_fraction

        wells: list[WellRecord] = []
        assigned = 0
        for s in range(cfg.n_sources):
            source_id = f"SRC{s + 1}"
            for b in range(cfg.batches_per_source):
                batch_id = f"B{b + 1}"
                effect = batch_effects[(source_id, batch_id)]
                for p in range(cfg.plates_per_batch):
                    plate_id = f"P{p + 1}"
                    for slot, (row, col) in enumerate(positions):
                        if slot in controls:
                            perturbation = CONTROL_ID
                            signal = np.zeros(cfg.feature_dim)
                        else:
                            perturbation = compound_ids[assigned % len(compound_ids)]
                            assigned += 1
                            signal = cfg.effect_strength * effect.treatment_scale * responses[perturbation]
                        phenotype = phenotype_base + signal + effect.phenotype_shift
                        clean = effect.imaging_gain * phenotype + effect.imaging_offset
                        well_offset = noise_rng.normal(0.0, 1.0, cfg.feature_dim) * well_sd
                        fov_noise = noise_rng.normal(0.0, 1.0, (cfg.fovs_per_well, cfg.feature_dim)) * cfg.noise_sd
                        wells.append(
                            WellRecord(
                                key=WellKey(source_id, batch_id, plate_id, row, col),
                                perturbation_id=perturbation,
                                fovs=clean + well_offset + fov_noise,
                            )
                        )

        ground_truth = GroundTruth(
            compound_effects=effects,
            batch_effects=batch_effects,
            mixing_matrix=mixing,
            phenotype_base=phenotype_base,
        )
        ds = Dataset(tuple(wells), compounds, cfg.feature_dim, ground_truth)
        logger.info(
            "Synthetic screen generated:\n"
            "  Sources:      %d x %d batches x %d plates\n"
            "  Wells:        %d (%d DMSO per plate)\n"
            "  FOVs / well:  %d, dim %d\n"
            "  Compounds:    %d",
            cfg.n_sources, cfg.batches_per_source, cfg.plates_per_batch,
            len(wells), cfg.controls_per_plate,
            cfg.fovs_per_well, cfg.feature_dim,
            len(compounds),
        )
        return ds

    @staticmethod
    def _compounds(
        cfg: SynthConfig, pool: list[str]
    ) -> tuple[dict[str, CompoundRecord], dict[str, np.ndarray], np.ndarray]:
        rng = make_rng(cfg.seed, "synthetic", "compounds")
        picks = rng.choice(len(pool), size=cfg.n_compounds, replace=False)
        mixing = rng.normal(0.0, 1.0, (cfg.latent_dim, cfg.fingerprint_bits))

        compounds: dict[str, CompoundRecord] = {}
        effects: dict[str, np.ndarray] = {}
        for k, pick in enumerate(picks):
            compound_id = f"CPD{k + 1:03d}"
            smiles = pool[int(pick)]
            fingerprint = fingerprint_smiles(smiles, 2, cfg.fingerprint_bits)
            private = rng.normal(0.0, 1.0, cfg.latent_dim)
            structural = _unit(mixing @ fingerprint.to_array())
            effects[compound_id] = cfg.structure_signal * structural + (1.0 - cfg.structure_signal) * _unit(private)
            compounds[compound_id] = CompoundRecord(compound_id, smiles, fingerprint)
        return compounds, effects, mixing

    @staticmethod
    def _batch_effects(cfg: SynthConfig) -> dict[tuple[str, str], BatchEffect]:
        rng = make_rng(cfg.seed, "synthetic", "batches")
        strength = cfg.batch_effect_strength
        r = cfg.within_source_ratio
        d = cfg.feature_dim

        def draw() -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
            return (
                float(rng.normal(0.0, strength.treatment)),
                rng.normal(0.0, strength.phenotype, d),
                rng.normal(0.0, strength.imaging, d),
                rng.normal(0.0, strength.imaging, d),
            )

        effects: dict[tuple[str, str], BatchEffect] = {}
        for s in range(cfg.n_sources):
            src_scale, src_shift, src_gain, src_offset = draw()
            for b in range(cfg.batches_per_source):
                scale, shift, gain, offset = draw()
                effects[(f"SRC{s + 1}", f"B{b + 1}")] = BatchEffect(
                    treatment_scale=max(0.0, 1.0 + (1.0 - r) * src_scale + r * scale),
                    phenotype_shift=(1.0 - r) * src_shift + r * shift,
                    imaging_gain=1.0 + (1.0 - r) * src_gain + r * gain,
                    imaging_offset=(1.0 - r) * src_offset + r * offset,
                )
        return effects


def gen_synthetic(cfg: SynthConfig) -> Dataset:
    return SyntheticGenerator.generate(cfg)
