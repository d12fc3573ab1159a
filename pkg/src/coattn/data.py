"""Sample/label/split data model, manifest ingestion, and distribution checks.

A dataset manifest is a JSON-lines file, one record per line, UTF-8, with keys
``id``, ``image_ref``, ``caption``, ``task1`` and optional (nullable) ``task2``
and ``split``. Loaded manifests are immutable and safe to share across
threads.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator

TASK1_LABELS = ("HT", "NHT")
TASK2_LABELS = ("TI", "TO", "TC", "TS")
SPLITS = ("train", "valid", "test")
UNASSIGNED = "unassigned"

#: Canonical class index order per task, used by training and evaluation.
CLASS_ORDERS: dict[int, tuple[str, ...]] = {1: TASK1_LABELS, 2: TASK2_LABELS}


class ManifestError(ValueError):
    """Raised when a manifest file cannot be loaded at all."""


@dataclass(frozen=True)
class TaskLabel:
    """Binary hateful/not-hateful label plus the optional target label.

    ``task2`` (the targeted entity) is defined only for hateful memes, so it
    must be None whenever ``task1`` is "NHT".
    """

    task1: str
    task2: str | None = None

    def __post_init__(self) -> None:
        if self.task1 not in TASK1_LABELS:
            raise ValueError(f"task1 must be one of {TASK1_LABELS}, got {self.task1!r}")
        if self.task2 is not None and self.task2 not in TASK2_LABELS:
            raise ValueError(f"task2 must be one of {TASK2_LABELS} or None, got {self.task2!r}")
        if self.task2 is not None and self.task1 != "HT":
            raise ValueError("task2 is only defined for hateful memes (task1=HT)")


@dataclass(frozen=True)
class MemeSample:
    """One meme: image reference, caption, labels, and split assignment."""

    id: str
    image_ref: str
    caption: str
    labels: TaskLabel
    split: str = UNASSIGNED

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("id must be non-empty")
        if not self.caption.strip():
            raise ValueError("caption must be non-empty after whitespace trimming")
        if self.split not in SPLITS and self.split != UNASSIGNED:
            raise ValueError(f"split must be one of {SPLITS} or {UNASSIGNED!r}, got {self.split!r}")


@dataclass(frozen=True)
class DatasetManifest:
    """Ordered, immutable collection of samples with dataset-level metadata."""

    samples: tuple[MemeSample, ...]
    name: str = ""
    language_tag: str = ""

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for sample in self.samples:
            if sample.id in seen:
                raise ValueError(f"duplicate sample id {sample.id!r}")
            seen.add(sample.id)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[MemeSample]:
        return iter(self.samples)

    def filter_split(self, split: str) -> tuple[MemeSample, ...]:
        if split not in SPLITS and split != UNASSIGNED:
            raise ValueError(f"unknown split {split!r}")
        return tuple(s for s in self.samples if s.split == split)


@dataclass(frozen=True)
class RejectedRecord:
    """A manifest line that failed validation, with its diagnosis."""

    line_number: int
    record: dict | None
    error: str


@dataclass
class LoadResult:
    manifest: DatasetManifest
    rejects: list[RejectedRecord] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.rejects


_RECORD_KEYS = ("id", "image_ref", "caption", "task1")


def _parse_record(record: dict) -> MemeSample:
    for key in _RECORD_KEYS:
        if key not in record or record[key] is None:
            raise ValueError(f"missing required field {key!r}")
    labels = TaskLabel(task1=record["task1"], task2=record.get("task2"))
    split = record.get("split")
    return MemeSample(
        id=str(record["id"]),
        image_ref=str(record["image_ref"]),
        caption=str(record["caption"]),
        labels=labels,
        split=UNASSIGNED if split is None else str(split),
    )


def load_manifest(path: str | Path, name: str | None = None, language_tag: str = "") -> LoadResult:
    """Load a JSON-lines manifest, collecting invalid records as rejects.

    Raises ManifestError if the file is missing or contains no records at
    all. Records that are malformed, violate a label invariant, or reuse an
    id are reported in ``rejects`` with their 1-based line number and do not
    enter the manifest.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest file not found: {path}")

    samples: list[MemeSample] = []
    rejects: list[RejectedRecord] = []
    seen_ids: set[str] = set()
    saw_record = False
    with path.open("r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            saw_record = True
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                rejects.append(RejectedRecord(line_number, None, f"invalid JSON: {exc.msg}"))
                continue
            if not isinstance(record, dict):
                rejects.append(RejectedRecord(line_number, None, "record is not a JSON object"))
                continue
            try:
                sample = _parse_record(record)
            except ValueError as exc:
                rejects.append(RejectedRecord(line_number, record, str(exc)))
                continue
            if sample.id in seen_ids:
                rejects.append(RejectedRecord(line_number, record, f"duplicate id {sample.id!r}"))
                continue
            seen_ids.add(sample.id)
            samples.append(sample)

    if not saw_record:
        raise ManifestError(f"empty manifest: {path}")
    manifest = DatasetManifest(
        samples=tuple(samples),
        name=path.stem if name is None else name,
        language_tag=language_tag,
    )
    return LoadResult(manifest=manifest, rejects=rejects)


def sample_to_record(sample: MemeSample) -> dict:
    return {
        "id": sample.id,
        "image_ref": sample.image_ref,
        "caption": sample.caption,
        "task1": sample.labels.task1,
        "task2": sample.labels.task2,
        "split": None if sample.split == UNASSIGNED else sample.split,
    }


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """Write a manifest back to JSON lines; inverse of load_manifest."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for sample in manifest:
            fh.write(json.dumps(sample_to_record(sample), ensure_ascii=False) + "\n")


def save_rejects(rejects: Iterable[RejectedRecord], path: str | Path) -> None:
    """Write a reject report: the original record plus an ``error`` field."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for reject in rejects:
            record = dict(reject.record) if reject.record else {}
            record["line_number"] = reject.line_number
            record["error"] = reject.error
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def _largest_remainder_shares(total: int, ratios: tuple[float, float, float]) -> tuple[int, int, int]:
    """Integer shares of ``total`` proportional to ratios, summing exactly.

    Floor each quota, then hand out the remainder by descending fractional
    part; ties go to the earlier split (train, valid, test order).
    """
    quotas = [r * total for r in ratios]
    shares = [math.floor(q) for q in quotas]
    leftover = total - sum(shares)
    order = sorted(range(3), key=lambda i: (-(quotas[i] - shares[i]), i))
    for i in order[:leftover]:
        shares[i] += 1
    return shares[0], shares[1], shares[2]


def split_dataset(
    manifest: DatasetManifest,
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> DatasetManifest:
    """Assign train/valid/test splits, stratified by the task1 label.

    Per-stratum sizes follow largest-remainder rounding of the ratios, so
    they sum exactly to the stratum size. Deterministic for a fixed seed.
    """
    if any(r <= 0 for r in ratios):
        raise ValueError("all split ratios must be positive")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {sum(ratios)}")
    if any(s.split != UNASSIGNED for s in manifest):
        raise ValueError("manifest already has split assignments")

    strata: dict[str, list[MemeSample]] = {}
    for sample in manifest:
        strata.setdefault(sample.labels.task1, []).append(sample)

    assignment: dict[str, str] = {}
    for label in sorted(strata):
        members = strata[label]
        if len(members) < 3:
            raise ValueError(f"stratum {label!r} has {len(members)} samples; need at least 3")
        rng = random.Random(f"{seed}:{label}")
        order = list(range(len(members)))
        rng.shuffle(order)
        n_train, n_valid, _ = _largest_remainder_shares(len(members), ratios)
        for rank, idx in enumerate(order):
            if rank < n_train:
                assignment[members[idx].id] = "train"
            elif rank < n_train + n_valid:
                assignment[members[idx].id] = "valid"
            else:
                assignment[members[idx].id] = "test"

    samples = tuple(replace(s, split=assignment[s.id]) for s in manifest)
    return DatasetManifest(samples=samples, name=manifest.name, language_tag=manifest.language_tag)


def class_distribution(
    manifest: DatasetManifest, task: int, split: str | None = None
) -> dict[str, int]:
    """Exact per-label counts for a task, optionally restricted to a split.

    Labels absent from the manifest are reported as 0. For task 2, samples
    without a target label (non-hateful memes) are not counted.
    """
    if task not in CLASS_ORDERS:
        raise ValueError(f"unknown task id {task!r}; expected one of {sorted(CLASS_ORDERS)}")
    if split is not None and split not in SPLITS and split != UNASSIGNED:
        raise ValueError(f"unknown split {split!r}")

    counts = {label: 0 for label in CLASS_ORDERS[task]}
    for sample in manifest:
        if split is not None and sample.split != split:
            continue
        label = sample.labels.task1 if task == 1 else sample.labels.task2
        if label is not None:
            counts[label] += 1
    return counts
