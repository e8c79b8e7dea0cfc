"""Aggregate per-seed retrieval reports into a method comparison.

A *setting* is a constraint plus its evaluation variant, written
``NSB``, ``NSB+post``, ``NSB/generated`` or ``NSB+post/generated``.
"""

import logging
from collections import defaultdict

import numpy as np
import pandas as pd

from micon.ai_core.statistics import rm_anova, stars, t_test_one_tailed
from micon.errors import SeedMismatchError
from micon.models.report_model import (
    AnovaResult,
    ComparisonReport,
    MethodSummary,
    RetrievalReport,
    SignificanceTest,
)

logger = logging.getLogger(__name__)

SIGNIFICANCE_LEVEL = 0.05
ABLATION = "paclr_only"


def setting_name(report: RetrievalReport) -> str:
    name = report.constraint
    if report.postprocess:
        name += "+post"
    if report.representation == "generated":
        name += "/generated"
    return name


def _group(reports: list[RetrievalReport]) -> dict[tuple[str, str], dict[int, RetrievalReport]]:
    grouped: dict[tuple[str, str], dict[int, RetrievalReport]] = defaultdict(dict)
    for report in reports:
        if report.method is None or report.seed is None:
            raise ValueError("Reports must carry their method and seed to be compared.")
        cell = grouped[(report.method, setting_name(report))]
        if report.seed in cell:
            raise SeedMismatchError(
                f"Duplicate report for {report.method} / {setting_name(report)} / seed {report.seed}."
            )
        cell[report.seed] = report
    return grouped


def _check_seed_counts(grouped: dict[tuple[str, str], dict[int, RetrievalReport]]) -> None:
    counts: dict[str, dict[str, int]] = defaultdict(dict)
    for (method, setting), by_seed in grouped.items():
        counts[setting][method] = len(by_seed)
    for setting, per_method in counts.items():
        if len(set(per_method.values())) > 1:
            detail = ", ".join(f"{m}={n}" for m, n in sorted(per_method.items()))
            raise SeedMismatchError(f"Seed counts differ across methods in setting {setting}: {detail}.")


def build_comparison(reports: list[RetrievalReport], reference_method: str = "micon") -> ComparisonReport:
    """Means, sample sds, one-tailed t-tests against ``reference_method`` and the
    counterfactual-ablation RM-ANOVA.

    Raises:
        SeedMismatchError: If methods in one setting have different seed counts.
    """
    if not reports:
        raise ValueError("No retrieval reports to compare.")
    grouped = _group(reports)
    _check_seed_counts(grouped)

    summaries = []
    for (method, setting), by_seed in sorted(grouped.items()):
        seeds = sorted(by_seed)
        accuracies = [by_seed[s].accuracy for s in seeds]
        summaries.append(
            MethodSummary(
                method=method,
                setting=setting,
                accuracies=accuracies,
                seeds=seeds,
                mean=float(np.mean(accuracies)),
                sd=float(np.std(accuracies, ddof=1)) if len(accuracies) > 1 else 0.0,
                chance_level=by_seed[seeds[0]].chance_level,
            )
        )

    tests = []
    for summary in summaries:
        if summary.method == reference_method:
            continue
        reference = grouped.get((reference_method, summary.setting))
        if reference is None:
            continue
        ref_acc = [reference[s].accuracy for s in sorted(reference)]
        if len(ref_acc) < 2 or len(summary.accuracies) < 2:
            logger.warning("Skipping t-test %s vs %s in %s: fewer than 2 seeds.", reference_method, summary.method, summary.setting)
            continue
        t, p = t_test_one_tailed(ref_acc, summary.accuracies)
        tests.append(
            SignificanceTest(
                baseline=summary.method, setting=summary.setting, t=t, p=p,
                significant=p < SIGNIFICANCE_LEVEL, stars=stars(p),
            )
        )

    return ComparisonReport(
        summaries=summaries,
        tests=tests,
        anova=_ablation_anova(grouped, reference_method),
        reference_method=reference_method,
    )


def _ablation_anova(grouped, reference_method: str) -> list[AnovaResult]:
    """RM-ANOVA of reference vs ablation per setting, plus one pooled over settings."""
    contrast = f"{reference_method} vs {ABLATION}"
    results = []
    pooled_rows: list[list[float]] = []
    settings = sorted({s for (m, s) in grouped if m == reference_method})
    for setting in settings:
        ref = grouped.get((reference_method, setting))
        abl = grouped.get((ABLATION, setting))
        if not ref or not abl:
            continue
        seeds = sorted(set(ref) & set(abl))
        rows = [[ref[s].accuracy, abl[s].accuracy] for s in seeds]
        pooled_rows += rows
        if len(rows) >= 2:
            f, p = rm_anova(rows)
            results.append(AnovaResult(contrast=f"{contrast} [{setting}]", subjects=len(rows), conditions=2, f=f, p=p))
    if len(results) > 1:
        f, p = rm_anova(pooled_rows)
        results.append(AnovaResult(contrast=f"{contrast} [pooled]", subjects=len(pooled_rows), conditions=2, f=f, p=p))
    return results


# ── Rendering ─────────────────────────────────────────────────────────


def comparison_frame(report: ComparisonReport) -> pd.DataFrame:
    marks = {(t.baseline, t.setting): t.stars for t in report.tests}
    rows = [
        {
            "method": s.method,
            "setting": s.setting,
            "accuracy": f"{s.mean:.4f} ± {s.sd:.4f}",
            "seeds": len(s.seeds),
            "chance": f"{s.chance_level:.4f}",
            "sig": marks.get((s.method, s.setting), ""),
        }
        for s in report.summaries
    ]
    return pd.DataFrame(rows, columns=["method", "setting", "accuracy", "seeds", "chance", "sig"])


def format_table(report: ComparisonReport) -> str:
    """Aligned text table; ``sig`` marks a method significantly below the reference."""
    text = comparison_frame(report).to_string(index=False)
    lines = [text]
    for result in report.anova:
        lines.append(f"RM-ANOVA {result.contrast}: F = {result.f:.4f}, p = {result.p:.4g}")
    return "\n".join(lines) + "\n"


def plot_data(report: ComparisonReport) -> dict[str, object]:
    """Machine-readable counterpart of ``format_table``."""
    marks = {(t.baseline, t.setting): t for t in report.tests}
    bars = []
    for s in report.summaries:
        test = marks.get((s.method, s.setting))
        bars.append(
            {
                "method": s.method,
                "setting": s.setting,
                "mean": s.mean,
                "sd": s.sd,
                "accuracies": s.accuracies,
                "seeds": s.seeds,
                "chance_level": s.chance_level,
                "p_vs_reference": test.p if test else None,
                "stars": test.stars if test else "",
            }
        )
    return {
        "reference_method": report.reference_method,
        "bars": bars,
        "anova": [a.model_dump() for a in report.anova],
    }
