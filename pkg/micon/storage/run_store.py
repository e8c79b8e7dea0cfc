"""Run directory layout and the JSON/CSV artifacts written into it.

::

    <run>/manifest-<command>.json
    <run>/data/wells.csv, compounds.csv, ground_truth.json
    <run>/splits/split-seed<k>.tsv
    <run>/checkpoints/<method>-seed<k>.ckpt
    <run>/logs/<method>-seed<k>.csv
    <run>/embeddings/<method>-seed<k>.csv
    <run>/reports/<method>-seed<k>-<setting>.json
    <run>/comparison.json, comparison.txt, plot_data.json
    <run>/nominations.csv
"""

import hashlib
import json
import logging
from pathlib import Path

import pandas as pd
from pydantic import BaseModel, Field

from micon import __version__
from micon.errors import MissingArtifactError
from micon.models.records import Dataset
from micon.models.report_model import ComparisonReport, RetrievalReport

logger = logging.getLogger(__name__)


def manifest_name(command: str) -> str:
    return f"manifest-{command}.json"


class RunManifest(BaseModel):
    """What produced a run directory."""

    command: str
    config_hash: str = Field(..., description="sha256 of the resolved configuration")
    seeds: list[int] = Field(default_factory=list)
    version: str = __version__
    outputs: list[str] = Field(default_factory=list, description="Paths relative to the run directory")


class RunLayout:
    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)

    @property
    def data_dir(self) -> Path:
        return self.root / "data"

    @property
    def wells_table(self) -> Path:
        return self.data_dir / "wells.csv"

    @property
    def compounds_table(self) -> Path:
        return self.data_dir / "compounds.csv"

    @property
    def ground_truth(self) -> Path:
        return self.data_dir / "ground_truth.json"

    def split(self, seed: int) -> Path:
        return self.root / "splits" / f"split-seed{seed}.tsv"

    def checkpoint(self, method: str, seed: int) -> Path:
        return self.root / "checkpoints" / f"{method}-seed{seed}.ckpt"

    def training_log(self, method: str, seed: int) -> Path:
        return self.root / "logs" / f"{method}-seed{seed}.csv"

    def embeddings(self, method: str, seed: int) -> Path:
        return self.root / "embeddings" / f"{method}-seed{seed}.csv"

    @property
    def reports_dir(self) -> Path:
        return self.root / "reports"

    def report(self, report: RetrievalReport) -> Path:
        setting = report.constraint + ("-post" if report.postprocess else "") + (
            "-generated" if report.representation == "generated" else ""
        )
        return self.reports_dir / f"{report.method}-seed{report.seed}-{setting}.json"

    @property
    def nominations(self) -> Path:
        return self.root / "nominations.csv"

    def relative(self, path: Path) -> str:
        return path.relative_to(self.root).as_posix()


def config_hash(payload: dict[str, object]) -> str:
    encoded = json.dumps(payload, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(encoded).hexdigest()


def write_json(path: Path, payload: object) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_manifest(layout: RunLayout, manifest: RunManifest) -> None:
    path = layout.root / manifest_name(manifest.command)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")


def read_manifest(root: str | Path, command: str) -> RunManifest:
    path = Path(root) / manifest_name(command)
    if not path.is_file():
        raise MissingArtifactError(f"Run manifest not found: {path}")
    return RunManifest.model_validate_json(path.read_text(encoding="utf-8"))


# ── Training logs ─────────────────────────────────────────────────────


def write_training_log(path: Path, entries: list) -> None:
    """``step,lr,train_loss,val_loss``; blank cells where a value was not computed."""
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(
        [(e.step, e.lr, e.train_loss, e.val_loss) for e in entries],
        columns=["step", "lr", "train_loss", "val_loss"],
    )
    frame.to_csv(path, index=False, float_format="%.10g", encoding="utf-8", lineterminator="\n")


def read_training_log(path: str | Path) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise MissingArtifactError(f"Training log not found: {path}")
    return pd.read_csv(path)


# ── Reports ───────────────────────────────────────────────────────────


def write_report(layout: RunLayout, report: RetrievalReport) -> Path:
    path = layout.report(report)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return path


def read_reports(root: str | Path) -> list[RetrievalReport]:
    """Every retrieval report of one run directory.

    Raises:
        MissingArtifactError: If the run has no report.
    """
    reports_dir = RunLayout(root).reports_dir
    paths = sorted(reports_dir.glob("*.json")) if reports_dir.is_dir() else []
    if not paths:
        raise MissingArtifactError(f"No retrieval reports under {reports_dir}")
    return [RetrievalReport.model_validate_json(p.read_text(encoding="utf-8")) for p in paths]


def write_comparison(root: Path, comparison: ComparisonReport, table: str, plot: dict[str, object]) -> list[Path]:
    root.mkdir(parents=True, exist_ok=True)
    paths = [root / "comparison.json", root / "comparison.txt", root / "plot_data.json"]
    paths[0].write_text(comparison.model_dump_json(indent=2) + "\n", encoding="utf-8")
    paths[1].write_text(table, encoding="utf-8")
    write_json(paths[2], plot)
    return paths


# ── Nominations and ground truth ──────────────────────────────────────


def write_nominations(path: Path, nominations: list) -> None:
    """One row per nominated compound; qualifying distances as ``source=distance;...``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = [
        (
            n.compound_id,
            n.n_sources,
            n.mean_distance,
            ";".join(f"{source}={distance:.10g}" for source, distance in sorted(n.source_distances.items())),
        )
        for n in nominations
    ]
    pd.DataFrame(rows, columns=["compound_id", "n_sources", "mean_distance", "source_distances"]).to_csv(
        path, index=False, float_format="%.10g", encoding="utf-8", lineterminator="\n"
    )


def write_ground_truth(path: Path, ds: Dataset) -> None:
    """Generator provenance: compound effects, per-batch nuisances and counts."""
    truth = ds.ground_truth
    payload: dict[str, object] = {
        "n_wells": len(ds.wells),
        "n_compounds": len(ds.compounds),
        "feature_dim": ds.feature_dim,
        "sources": ds.batches_by_source(),
    }
    if truth is not None:
        payload["compound_effects"] = {cid: v.tolist() for cid, v in sorted(truth.compound_effects.items())}
        payload["batch_effects"] = {
            f"{source}:{batch}": {
                "treatment_scale": effect.treatment_scale,
                "phenotype_shift": effect.phenotype_shift.tolist(),
                "imaging_gain": effect.imaging_gain.tolist(),
                "imaging_offset": effect.imaging_offset.tolist(),
            }
            for (source, batch), effect in sorted(truth.batch_effects.items())
        }
        payload["phenotype_base"] = truth.phenotype_base.tolist()
    write_json(path, payload)
