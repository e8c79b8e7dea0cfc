import argparse
import logging

from micon.cli.common import EXIT_OK, ensure_split, load_dataset, record_manifest, resolve_config, run_command
from micon.errors import NonFiniteError
from micon.services.training_service import train
from micon.storage.checkpoint_store import write_checkpoint
from micon.storage.run_store import RunLayout, write_training_log

logger = logging.getLogger(__name__)


def _train(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    layout = RunLayout(config.output_dir)
    ds = load_dataset(config, layout)
    hp = config.train

    outputs = []
    for seed in config.split.seeds:
        split = ensure_split(ds, config, layout, seed)
        outputs.append(layout.split(seed))
        for method in config.train.methods:
            checkpoint = layout.checkpoint(method, seed)
            log_path = layout.training_log(method, seed)
            try:
                result = train(ds, split, hp, method, seed, config.train.cf_weight, deterministic=args.deterministic)
            except NonFiniteError:
                for stale in (checkpoint, log_path):
                    stale.unlink(missing_ok=True)
                logger.error("Removed outputs of %s seed %d after the failure.", method, seed)
                raise
            write_checkpoint(checkpoint, result.params, result.checkpoint_meta(hp))
            write_training_log(log_path, result.log)
            outputs += [checkpoint, log_path]
            print(
                f"{method}\tseed={seed}\tbest_step={result.best_step}\t"
                f"val_loss={result.best_val_loss:.4f}\t{layout.relative(checkpoint)}"
            )

    record_manifest(layout, "train", config, config.split.seeds, outputs)
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    """Train every configured method once per seed."""
    return run_command("train", _train, args)
