import argparse
import logging
from pathlib import Path

from micon.cli.common import EXIT_OK, ensure_split, load_dataset, record_manifest, resolve_config, run_command
from micon.services.evaluation_service import FEATURES_METHOD, EvaluationOptions, evaluate
from micon.services.report_service import build_comparison, format_table, plot_data
from micon.storage.checkpoint_store import read_checkpoint
from micon.storage.run_store import RunLayout, read_reports, write_comparison, write_report
from micon.storage.tables import write_embeddings

logger = logging.getLogger(__name__)


def _evaluate(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    layout = RunLayout(config.output_dir)
    ds = load_dataset(config, layout)
    options = EvaluationOptions(
        constraints=tuple(config.eval.constraints),
        postprocess=config.eval.postprocess,
        shrink=config.eval.shrink,
        counterfactual=config.eval.counterfactual,
        n_permutations=config.eval.n_permutations,
    )
    methods = [FEATURES_METHOD] if config.eval.features_only else list(config.train.methods)

    reports = []
    outputs: list[Path] = []
    for seed in config.eval_seeds:
        split = ensure_split(ds, config, layout, seed)
        for method in methods:
            params = None if method == FEATURES_METHOD else read_checkpoint(layout.checkpoint(method, seed))[0]
            seed_reports, embeddings = evaluate(ds, split, params, method, seed, options)
            embeddings_path = layout.embeddings(method, seed)
            embeddings_path.parent.mkdir(parents=True, exist_ok=True)
            write_embeddings(embeddings_path, embeddings)
            outputs.append(embeddings_path)
            outputs += [write_report(layout, report) for report in seed_reports]
            reports += seed_reports

    comparison = build_comparison(reports, config.report.reference_method)
    outputs += write_comparison(layout.root, comparison, format_table(comparison), plot_data(comparison))
    record_manifest(layout, "evaluate", config, config.eval_seeds, outputs)
    print(format_table(comparison), end="")
    return EXIT_OK


def _report(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    runs = [Path(r) for r in args.runs] or list(config.report.runs) or [config.output_dir]
    reports = [report for run in runs for report in read_reports(run)]
    comparison = build_comparison(reports, config.report.reference_method)
    table = format_table(comparison)
    layout = RunLayout(config.output_dir)
    outputs = write_comparison(layout.root, comparison, table, plot_data(comparison))
    record_manifest(layout, "report", config, sorted({s for m in comparison.summaries for s in m.seeds}), outputs)
    print(table, end="")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    """Embed, post-process and run constrained retrieval for every seed and method."""
    return run_command("evaluate", _evaluate, args)


def cmd_report(args: argparse.Namespace) -> int:
    """Pool the retrieval reports of one or more runs into a comparison table."""
    return run_command("report", _report, args)
