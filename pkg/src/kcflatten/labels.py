"""Garment categories, instances and the 50-way known-configuration label.

The class space is flat: 5 categories x 10 grasp segments. A label's
``flat_index`` is ``10 * category_index + segment_id`` with categories in
the fixed order of ``CATEGORIES``, so index 17 decodes to (shirt, 7).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .errors import LabelError


class GarmentCategory(Enum):
    JEAN = "jean"
    SHIRT = "shirt"
    SWEATER = "sweater"
    TOWEL = "towel"
    TSHIRT = "tshirt"

    @property
    def index(self) -> int:
        return CATEGORIES.index(self)

    @classmethod
    def from_name(cls, name: str) -> "GarmentCategory":
        try:
            return cls(name)
        except ValueError:
            raise LabelError(f"unknown garment category {name!r}") from None


CATEGORIES: tuple[GarmentCategory, ...] = tuple(GarmentCategory)
NUM_CATEGORIES = len(CATEGORIES)
NUM_SEGMENTS = 10
NUM_CLASSES = NUM_CATEGORIES * NUM_SEGMENTS


@dataclass(frozen=True)
class GarmentInstance:
    """One physical garment; a conforming dataset has four per category."""

    category: GarmentCategory
    instance_id: int

    def __post_init__(self) -> None:
        if self.instance_id < 0:
            raise LabelError(f"instance_id must be >= 0, got {self.instance_id}")

    def sort_key(self) -> tuple[int, int]:
        return (self.category.index, self.instance_id)


@dataclass(frozen=True)
class ClassLabel:
    """A (category, segment) pair, the unit of recognition and plan choice."""

    category: GarmentCategory
    segment_id: int

    def __post_init__(self) -> None:
        if not 0 <= self.segment_id < NUM_SEGMENTS:
            raise LabelError(
                f"segment_id must be in 0..{NUM_SEGMENTS - 1}, got {self.segment_id}"
            )

    @property
    def flat_index(self) -> int:
        return NUM_SEGMENTS * self.category.index + self.segment_id

    @classmethod
    def from_flat_index(cls, flat_index: int) -> "ClassLabel":
        if not 0 <= flat_index < NUM_CLASSES:
            raise LabelError(
                f"flat_index must be in 0..{NUM_CLASSES - 1}, got {flat_index}"
            )
        return cls(CATEGORIES[flat_index // NUM_SEGMENTS], flat_index % NUM_SEGMENTS)

    def __str__(self) -> str:
        return f"{self.category.value}/{self.segment_id}"


def all_labels() -> list[ClassLabel]:
    return [ClassLabel.from_flat_index(i) for i in range(NUM_CLASSES)]
