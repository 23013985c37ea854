"""Instance-held-out k-fold splits and the per-category accuracy report.

Splits withhold whole garment instances, never individual images, so test
garments are unseen during training. The report aggregates a full
categories x folds accuracy grid into per-fold and overall averages.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataset import DatasetManifest, Modality
from .errors import FoldError
from .labels import CATEGORIES, GarmentCategory, GarmentInstance
from .validation import ValidationReport


@dataclass(frozen=True)
class FoldSplit:
    fold_id: int
    train_instances: frozenset[GarmentInstance]
    test_instances: frozenset[GarmentInstance]


def make_folds(
    manifest: DatasetManifest, k: int, seed: int | None = None
) -> list[FoldSplit]:
    """Build k instance-held-out folds over the manifest's instances.

    Every category must contribute the same number of instances and k must
    divide that number. By default instance i of every category goes to
    fold i mod k; pass a seed to shuffle the assignment per category.
    """
    if k < 2:
        raise FoldError(f"k must be at least 2, got {k}")
    instances = manifest.instances()
    if not instances:
        raise FoldError("manifest has no instances")

    by_category: dict[GarmentCategory, list[GarmentInstance]] = {}
    for inst in instances:
        by_category.setdefault(inst.category, []).append(inst)

    sizes = {len(v) for v in by_category.values()}
    if len(sizes) != 1:
        raise FoldError(
            "categories have unequal instance counts: "
            + ", ".join(f"{c.value}={len(v)}" for c, v in sorted(by_category.items(), key=lambda kv: kv[0].index))
        )
    per_category = sizes.pop()
    if per_category % k != 0:
        raise FoldError(
            f"k={k} does not divide the {per_category} instances per category"
        )

    rng = np.random.default_rng(seed) if seed is not None else None
    test_sets: list[set[GarmentInstance]] = [set() for _ in range(k)]
    for category in CATEGORIES:
        members = by_category.get(category, [])
        order = list(range(len(members)))
        if rng is not None:
            order = [int(i) for i in rng.permutation(len(members))]
        for pos, idx in enumerate(order):
            test_sets[pos % k].add(members[idx])

    universe = set(instances)
    return [
        FoldSplit(
            fold_id=j,
            train_instances=frozenset(universe - test_sets[j]),
            test_instances=frozenset(test_sets[j]),
        )
        for j in range(k)
    ]


def verify_folds(folds: Sequence[FoldSplit]) -> ValidationReport:
    """Check the held-out protocol: no train/test leakage within a fold,
    every instance tested exactly once across folds."""
    report = ValidationReport()
    if not folds:
        report.add("no_folds", "fold list is empty")
        return report

    universe: set[GarmentInstance] = set()
    for fold in folds:
        universe |= fold.train_instances | fold.test_instances

    tested: dict[GarmentInstance, int] = {}
    for fold in folds:
        for inst in sorted(fold.train_instances & fold.test_instances, key=GarmentInstance.sort_key):
            report.add(
                "leakage",
                f"fold {fold.fold_id}: {inst.category.value} instance "
                f"{inst.instance_id} is in both train and test",
            )
        for inst in fold.test_instances:
            tested[inst] = tested.get(inst, 0) + 1

    for inst in sorted(universe, key=GarmentInstance.sort_key):
        n = tested.get(inst, 0)
        if n == 0:
            report.add(
                "coverage",
                f"{inst.category.value} instance {inst.instance_id} is never tested",
            )
        elif n > 1:
            report.add(
                "duplicate_test",
                f"{inst.category.value} instance {inst.instance_id} is tested "
                f"in {n} folds",
            )
    return report


# --------------------------------------------------------------------------
# Accuracy aggregation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CellAccuracy:
    category: GarmentCategory
    fold_id: int
    accuracy: float  # percent, 0..100


@dataclass(frozen=True)
class EvalReport:
    """Categories x folds accuracy grid with unweighted averages."""

    modality: Modality
    cells: Mapping[GarmentCategory, tuple[float, ...]]
    fold_averages: tuple[float, ...]
    overall_average: float

    @property
    def n_folds(self) -> int:
        return len(self.fold_averages)

    def cell(self, category: GarmentCategory, fold_id: int) -> float:
        return self.cells[category][fold_id]

    def cell_records(self) -> list[CellAccuracy]:
        return [
            CellAccuracy(cat, j, self.cells[cat][j])
            for cat in CATEGORIES
            for j in range(self.n_folds)
        ]

    def format_table(self) -> str:
        """Human-readable block: category rows, fold columns, average rows."""
        width = 9
        header = f"{self.modality.kind:<9}" + "".join(
            f"{j + 1:>{width}}" for j in range(self.n_folds)
        )
        lines = [header]
        for cat in CATEGORIES:
            row = f"{cat.value:<9}" + "".join(
                f"{v:>{width}.1f}" for v in self.cells[cat]
            )
            lines.append(row)
        lines.append(
            f"{'average':<9}" + "".join(f"{v:>{width}.1f}" for v in self.fold_averages)
        )
        lines.append(f"AVERAGE: {self.overall_average:.1f}")
        return "\n".join(lines)

    def to_csv(self, path: Path | str) -> Path:
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(
                ["category"] + [f"fold{j + 1}" for j in range(self.n_folds)]
            )
            for cat in CATEGORIES:
                writer.writerow([cat.value] + [repr(v) for v in self.cells[cat]])
            writer.writerow(["average"] + [repr(v) for v in self.fold_averages])
            writer.writerow(["AVERAGE", repr(self.overall_average)])
        return path


def aggregate_report(
    cells: Mapping[GarmentCategory, Sequence[float]], modality: Modality
) -> EvalReport:
    """Aggregate a full accuracy grid into per-fold and overall averages.

    ``cells`` maps every category to its per-fold accuracies (percent).
    Averages are unweighted means: fold average over the five categories,
    overall over the fold averages.
    """
    missing = [c.value for c in CATEGORIES if c not in cells]
    if missing:
        raise FoldError(f"accuracy grid is missing categories: {missing}")

    lengths = {len(cells[c]) for c in CATEGORIES}
    if len(lengths) != 1:
        raise FoldError(f"accuracy grid has ragged fold counts: {sorted(lengths)}")
    k = lengths.pop()
    if k == 0:
        raise FoldError("accuracy grid has no folds")

    for cat in CATEGORIES:
        for j, v in enumerate(cells[cat]):
            if not 0.0 <= float(v) <= 100.0:
                raise FoldError(
                    f"accuracy out of range for {cat.value} fold {j}: {v}"
                )

    grid = {cat: tuple(float(v) for v in cells[cat]) for cat in CATEGORIES}
    fold_averages = tuple(
        float(np.mean([grid[cat][j] for cat in CATEGORIES])) for j in range(k)
    )
    overall = float(np.mean(fold_averages))
    return EvalReport(
        modality=modality,
        cells=grid,
        fold_averages=fold_averages,
        overall_average=overall,
    )


def format_report_blocks(reports: Iterable[EvalReport]) -> str:
    """Stack one table block per modality."""
    return "\n\n".join(r.format_table() for r in reports)
