"""Line-oriented split files: ``well_key<TAB>tag[,tag...]`` per well.

Header comments carry the protocol, seed and notes. Wells with no tag are not
written.
"""

import logging
from pathlib import Path

from micon.errors import DatasetFormatError, MissingArtifactError
from micon.models.records import SPLIT_TAGS, Dataset, SplitSpec, WellKey

logger = logging.getLogger(__name__)


def write_split(path: str | Path, ds: Dataset, split: SplitSpec) -> None:
    lines = [f"# protocol={split.protocol}", f"# seed={split.seed}"]
    lines += [f"# {key}={value}" for key, value in sorted(split.notes.items())]
    for index, well in enumerate(ds.wells):
        tags = [tag for tag in SPLIT_TAGS if tag in split.tags_for(index)]
        if tags:
            lines.append(f"{well.key}\t{','.join(tags)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_split(path: str | Path, ds: Dataset) -> SplitSpec:
    path = Path(path)
    if not path.is_file():
        raise MissingArtifactError(f"Split file not found: {path}")

    header: dict[str, str] = {}
    members: dict[str, set[int]] = {tag: set() for tag in SPLIT_TAGS}
    for line_no, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not raw.strip():
            continue
        if raw.startswith("#"):
            key, _, value = raw[1:].strip().partition("=")
            header[key.strip()] = value.strip()
            continue
        key_text, sep, tag_text = raw.partition("\t")
        if not sep:
            raise DatasetFormatError(f"{path.name}: expected 'well_key<TAB>tags'", row=line_no)
        try:
            key = WellKey.parse(key_text)
        except ValueError as exc:
            raise DatasetFormatError(f"{path.name}: {exc}", row=line_no) from exc
        if key not in ds.index_of:
            raise DatasetFormatError(f"{path.name}: well {key} is not in the dataset", row=line_no)
        for tag in filter(None, tag_text.split(",")):
            if tag not in members:
                raise DatasetFormatError(f"{path.name}: unknown tag '{tag}'", row=line_no)
            members[tag].add(ds.index_of[key])

    notes = {k: v for k, v in header.items() if k not in ("protocol", "seed")}
    return SplitSpec(
        train=frozenset(members["train"]),
        val=frozenset(members["val"]),
        retrieval=frozenset(members["retrieval"]),
        query=frozenset(members["query"]),
        seed=int(header.get("seed", "0")),
        protocol=header.get("protocol", "id_batch"),
        notes=notes,
    )
