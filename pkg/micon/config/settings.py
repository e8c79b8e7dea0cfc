"""Layered run configuration.

Values resolve, highest priority first: command-line overrides, environment
(``MICON_<SECTION>_<KEY>``), ``.env``, the TOML run file, field defaults.
"""

import logging
import sys
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, PydanticBaseSettingsSource, SettingsConfigDict, TomlConfigSettingsSource

from micon.errors import ConfigError
from micon.models.hyperparams import Method, HyperParams
from micon.models.report_model import CONSTRAINTS, Constraint
from micon.models.synth_config import SynthConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)


class DataSection(SynthConfig):
    """Synthetic generator settings, or the paths of ingested tables."""

    kind: Literal["synthetic", "tables"] = "synthetic"
    wells_table: Path | None = Field(default=None, description="Per-FOV feature table (kind = tables)")
    compounds_table: Path | None = Field(default=None, description="compound_id,smiles table (kind = tables)")
    fp_radius: int = Field(default=2, ge=0, description="ECFP radius used when fingerprinting compounds")

    @model_validator(mode="after")
    def _check_tables(self) -> "DataSection":
        if self.kind == "tables":
            for name in ("wells_table", "compounds_table"):
                path = getattr(self, name)
                if path is None:
                    raise ValueError(f"{name} is required when kind = 'tables'")
                if not path.is_file():
                    raise ValueError(f"{name} does not exist: {path}")
        return self


class SplitSection(BaseModel):
    protocol: Literal["id_batch", "ood_source", "ood_compound"] = "id_batch"
    query_frac: float = Field(default=0.3, gt=0.0, lt=1.0, description="Share of each source's batches held out as queries")
    val_batches_per_source: int = Field(default=1, ge=0)
    unseen_source: str | None = Field(default=None, description="Held-out source (ood_source)")
    seen_compounds: list[str] | None = Field(default=None, description="Training compounds (ood_compound)")
    n_unseen_compounds: int = Field(default=2, ge=1, description="Drawn when seen_compounds is unset")
    unseen_wells_retrieval: int = Field(default=2, ge=1)
    unseen_wells_query: int = Field(default=4, ge=1)
    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2], min_length=1, description="One split + run per seed")


class TrainSection(HyperParams):
    methods: list[Method] = Field(default_factory=lambda: ["micon"], min_length=1)
    cf_weight: float = Field(default=1.0, ge=0.0, description="Weight of the counterfactual term (micon only)")


class EvalSection(BaseModel):
    constraints: list[Constraint] = Field(default_factory=lambda: list(CONSTRAINTS), min_length=1)
    postprocess: Literal["off", "on", "both"] = "off"
    shrink: float = Field(default=0.1, ge=0.0, le=1.0, description="Spherizing covariance shrinkage")
    counterfactual: bool = Field(default=False, description="Also retrieve with generated query embeddings")
    features_only: bool = Field(default=False, description="Evaluate raw features; no checkpoint needed")
    n_permutations: int = Field(default=200, ge=0, description="Label permutations for the null p-value (0 = off)")
    seeds: list[int] | None = Field(default=None, description="Defaults to split.seeds")


class NominateSection(BaseModel):
    top_frac: float = Field(default=0.1, gt=0.0, le=1.0)
    min_sources: int = Field(default=4, ge=1)


class ReportSection(BaseModel):
    runs: list[Path] = Field(default_factory=list, description="Run directories pooled into one comparison")
    reference_method: str = "micon"


class RunConfig(BaseSettings):
    """Everything one pipeline command needs."""

    data: DataSection
    split: SplitSection = Field(default_factory=SplitSection)
    train: TrainSection = Field(default_factory=TrainSection)
    eval: EvalSection = Field(default_factory=EvalSection)
    nominate: NominateSection = Field(default_factory=NominateSection)
    report: ReportSection = Field(default_factory=ReportSection)
    output_dir: Path = Path("runs/default")

    model_config = SettingsConfigDict(
        env_prefix="MICON_",
        env_nested_delimiter="_",
        env_nested_max_split=1,
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    @model_validator(mode="after")
    def _check_fingerprints(self) -> "RunConfig":
        if self.train.fp_bits != self.data.fingerprint_bits:
            raise ValueError(
                f"train.fp_bits ({self.train.fp_bits}) must equal data.fingerprint_bits ({self.data.fingerprint_bits})"
            )
        return self

    @property
    def eval_seeds(self) -> list[int]:
        return self.eval.seeds or self.split.seeds

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        return (
            init_settings,
            env_settings,
            dotenv_settings,
            TomlConfigSettingsSource(settings_cls),
        )


def _format_errors(exc: ValidationError) -> str:
    parts = []
    for error in exc.errors():
        location = ".".join(str(part) for part in error["loc"]) or "config"
        parts.append(f"{location}: {error['msg']}")
    return "; ".join(parts)


def load_config(path: str | Path, overrides: dict[str, object] | None = None) -> RunConfig:
    """Resolve the run configuration from ``path`` plus environment and overrides.

    Raises:
        ConfigError: If the file is missing or unreadable, or a field is
            missing or invalid; the message names fields by dotted path.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file not found: {path}")

    class FileRunConfig(RunConfig):
        model_config = SettingsConfigDict(toml_file=path)

    try:
        config = FileRunConfig(**(overrides or {}))
    except ValidationError as exc:
        raise ConfigError(f"Invalid configuration in {path}: {_format_errors(exc)}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"Cannot parse {path}: {exc}") from exc

    logger.info(
        "Configuration loaded: %s (data: %s, protocol: %s, seeds: %s, output: %s)",
        path, config.data.kind, config.split.protocol, config.split.seeds, config.output_dir,
    )
    return config
