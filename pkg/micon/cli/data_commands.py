import argparse
import logging

from micon.cli.common import (
    EXIT_OK,
    build_dataset,
    load_dataset,
    record_manifest,
    resolve_config,
    run_command,
)
from micon.services.nomination_service import nominate_strong_compounds
from micon.storage.run_store import RunLayout, write_ground_truth, write_nominations
from micon.storage.tables import export_dataset

logger = logging.getLogger(__name__)


def _gen_data(args: argparse.Namespace) -> int:
    config = resolve_config(args, seed_sets_data=True)
    layout = RunLayout(config.output_dir)
    ds = build_dataset(config)

    layout.data_dir.mkdir(parents=True, exist_ok=True)
    export_dataset(ds, layout.wells_table, layout.compounds_table)
    write_ground_truth(layout.ground_truth, ds)
    record_manifest(
        layout, "gen-data", config, [config.data.seed],
        [layout.wells_table, layout.compounds_table, layout.ground_truth],
    )

    n_controls = sum(w.is_control for w in ds.wells)
    print(
        f"wells={len(ds.wells)} controls={n_controls} compounds={len(ds.compounds)} "
        f"sources={len(ds.sources())} fovs={len(ds.fov_table)} feature_dim={ds.feature_dim}"
    )
    return EXIT_OK


def _nominate(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    layout = RunLayout(config.output_dir)
    ds = load_dataset(config, layout)
    nominations = nominate_strong_compounds(ds, config.nominate.top_frac, config.nominate.min_sources)
    write_nominations(layout.nominations, nominations)
    record_manifest(layout, "nominate", config, [], [layout.nominations])
    for n in nominations:
        print(f"{n.compound_id}\tsources={n.n_sources}\tmean_distance={n.mean_distance:.4f}")
    return EXIT_OK


def cmd_gen_data(args: argparse.Namespace) -> int:
    """Generate (or ingest) the dataset and write its tables and ground truth."""
    return run_command("gen-data", _gen_data, args)


def cmd_nominate(args: argparse.Namespace) -> int:
    """Write the strong-compound nominations of the run's dataset."""
    return run_command("nominate", _nominate, args)
