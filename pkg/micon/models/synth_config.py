from pydantic import BaseModel, Field


class BatchEffectStrength(BaseModel):
    """Nuisance strength at each level a microscopy batch can act on."""

    treatment: float = Field(default=0.3, ge=0.0, description="Sd of the per-batch scaling of compound effects")
    phenotype: float = Field(default=0.6, ge=0.0, description="Sd of the per-batch additive phenotype shift")
    imaging: float = Field(default=0.3, ge=0.0, description="Sd of the per-batch diagonal gain (mean 1) and offset")


class SynthConfig(BaseModel):
    """Parameters of the synthetic screen generator."""

    n_sources: int = Field(default=6, ge=1, description="Number of data-generating sources")
    batches_per_source: int = Field(default=3, ge=1, description="Microscopy batches per source")
    plates_per_batch: int = Field(default=2, ge=1, description="Plates per batch")
    wells_per_plate: int = Field(default=24, ge=1, description="Wells per plate, controls included")
    fovs_per_well: int = Field(default=4, ge=1, description="Fields of view per well")
    n_compounds: int = Field(default=8, ge=1, le=256, description="Distinct compounds (drawn from the SMILES pool)")
    control_fraction: float = Field(
        default=0.25, gt=0.0, lt=1.0, description="Fraction of each plate's wells given to DMSO (min 2 wells)"
    )
    latent_dim: int = Field(default=16, ge=1, description="Dimension of the latent compound effect")
    feature_dim: int = Field(default=64, ge=1, description="Dimension of each FOV feature vector")
    effect_strength: float = Field(default=1.0, ge=0.0, description="Scale of compound effects in feature space")
    batch_effect_strength: BatchEffectStrength = Field(default_factory=BatchEffectStrength)
    within_source_ratio: float = Field(
        default=0.5, ge=0.0, le=1.0,
        description="Share of a batch effect that is batch-specific; the rest is shared by the source",
    )
    noise_sd: float = Field(default=0.3, ge=0.0, description="Sd of per-FOV Gaussian noise")
    well_noise_fraction: float = Field(
        default=0.3, ge=0.0, description="Sd of per-well Gaussian offsets, as a multiple of noise_sd"
    )
    structure_signal: float = Field(
        default=0.8, ge=0.0, le=1.0, description="Weight of the fingerprint-driven part of each compound effect"
    )
    fingerprint_bits: int = Field(default=2048, ge=8, description="ECFP fold size used to derive effects")
    seed: int = Field(..., ge=0, description="Seed of every random draw in the generator")

    model_config = {
        "json_schema_extra": {
            "examples": [
                {
                    "n_sources": 6,
                    "batches_per_source": 3,
                    "plates_per_batch": 2,
                    "wells_per_plate": 24,
                    "fovs_per_well": 4,
                    "n_compounds": 8,
                    "feature_dim": 64,
                    "seed": 7,
                }
            ]
        }
    }

    @property
    def n_wells(self) -> int:
        return self.n_sources * self.batches_per_source * self.plates_per_batch * self.wells_per_plate

    @property
    def controls_per_plate(self) -> int:
        return min(self.wells_per_plate, max(2, int(self.control_fraction * self.wells_per_plate + 0.5)))
