"""Shared plumbing for the command modules: config overrides, dataset and split
loading, manifests, and the exception -> exit code contract."""

import argparse
import logging
from collections.abc import Callable
from pathlib import Path

from pydantic import ValidationError

from micon.ai_core.synthetic_generator import gen_synthetic
from micon.config.settings import RunConfig, load_config
from micon.errors import (
    ConfigError,
    MissingArtifactError,
    MissingControlError,
    NonFiniteError,
    SeedMismatchError,
    UnsatisfiableConstraintError,
)
from micon.models.records import Dataset, SplitSpec
from micon.models.synth_config import SynthConfig
from micon.services.split_service import (
    pick_unseen_compounds,
    split_id_by_batch,
    split_ood_compound,
    split_ood_source,
)
from micon.storage.run_store import RunLayout, RunManifest, config_hash, write_manifest
from micon.storage.split_store import read_split, write_split
from micon.storage.tables import ingest_features

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_TRAINING = 3
EXIT_MISSING_ARTIFACT = 4
EXIT_UNSATISFIABLE = 5


def resolve_config(args: argparse.Namespace, seed_sets_data: bool = False) -> RunConfig:
    """Load ``--config`` and apply ``--seed`` / ``--out``."""
    overrides: dict[str, object] = {}
    if args.seed is not None:
        overrides["split"] = {"seeds": [args.seed]}
        if seed_sets_data:
            overrides["data"] = {"seed": args.seed}
    if args.out is not None:
        overrides["output_dir"] = args.out
    return load_config(args.config, overrides)


def synth_config(config: RunConfig) -> SynthConfig:
    return SynthConfig.model_validate(config.data.model_dump(include=set(SynthConfig.model_fields)))


def build_dataset(config: RunConfig) -> Dataset:
    """Dataset described by the config itself (generated or ingested)."""
    data = config.data
    if data.kind == "tables":
        return ingest_features(data.wells_table, data.compounds_table, data.fingerprint_bits, data.fp_radius)
    return gen_synthetic(synth_config(config))


def load_dataset(config: RunConfig, layout: RunLayout) -> Dataset:
    """The run's materialised tables when present, else the configured dataset."""
    if layout.wells_table.is_file() and layout.compounds_table.is_file():
        return ingest_features(
            layout.wells_table, layout.compounds_table, config.data.fingerprint_bits, config.data.fp_radius
        )
    logger.info("No dataset under %s; building it from the configuration.", layout.data_dir)
    return build_dataset(config)


def build_split(ds: Dataset, config: RunConfig, seed: int) -> SplitSpec:
    section = config.split
    if section.protocol == "id_batch":
        return split_id_by_batch(ds, section.query_frac, section.val_batches_per_source, seed)
    if section.protocol == "ood_source":
        if not section.unseen_source:
            raise ConfigError("split.unseen_source is required for the ood_source protocol")
        return split_ood_source(ds, section.unseen_source, seed)
    if section.seen_compounds:
        seen = set(section.seen_compounds)
    else:
        seen = set(ds.compounds) - pick_unseen_compounds(ds, section.n_unseen_compounds, seed)
    return split_ood_compound(ds, seen, section.unseen_wells_retrieval, section.unseen_wells_query, seed)


def ensure_split(ds: Dataset, config: RunConfig, layout: RunLayout, seed: int) -> SplitSpec:
    """Read the run's split for ``seed``, creating and saving it on first use."""
    path = layout.split(seed)
    if path.is_file():
        return read_split(path, ds)
    split = build_split(ds, config, seed)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_split(path, ds, split)
    return split


def record_manifest(layout: RunLayout, command: str, config: RunConfig, seeds: list[int], outputs: list[Path]) -> None:
    write_manifest(
        layout,
        RunManifest(
            command=command,
            config_hash=config_hash(config.model_dump(mode="json")),
            seeds=seeds,
            outputs=sorted(layout.relative(p) for p in outputs),
        ),
    )


def run_command(name: str, handler: Callable[[argparse.Namespace], int], args: argparse.Namespace) -> int:
    """Run ``handler`` and translate failures into the stable exit codes."""
    try:
        return handler(args)
    except (ConfigError, ValidationError) as exc:
        logger.error("%s: configuration error: %s", name, exc)
        return EXIT_CONFIG
    except MissingControlError as exc:
        logger.error("%s: missing negative controls on plate %s: %s", name, exc.plate, exc)
        return EXIT_CONFIG
    except NonFiniteError as exc:
        logger.error("%s: training failed (block=%s, step=%s): %s", name, exc.block, exc.step, exc)
        return EXIT_TRAINING
    except (MissingArtifactError, SeedMismatchError) as exc:
        logger.error("%s: %s", name, exc)
        return EXIT_MISSING_ARTIFACT
    except UnsatisfiableConstraintError as exc:
        logger.error("%s: %s", name, exc)
        return EXIT_UNSATISFIABLE
    except ValueError as exc:
        logger.error("%s: invalid input: %s", name, exc)
        return EXIT_CONFIG
    except Exception as exc:
        logger.exception("%s: unexpected error: %s", name, exc)
        return EXIT_UNEXPECTED
