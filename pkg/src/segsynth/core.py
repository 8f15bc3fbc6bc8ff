"""Class catalogs, label-sets, semantic-map containers, and canvas composition.

A semantic map is a stack of C binary masks, one per catalog class. Channels
may overlap; the flattened single-plane view is a derived export produced by
``compose_index_map``, which resolves overlaps by generation-order priority
(later classes draw on top).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class CatalogError(ValueError):
    """Raised for malformed catalogs or unknown class names."""


@dataclass(frozen=True)
class ClassCatalog:
    """Ordered universe of classes with a rendering palette.

    Index 0 in exported index maps means background; class k occupies
    index value k + 1.
    """

    names: tuple[str, ...]
    palette: tuple[tuple[int, int, int], ...]

    def __post_init__(self):
        if len(self.names) < 1:
            raise CatalogError("catalog needs at least one class")
        if any(not n for n in self.names):
            raise CatalogError("class names must be non-empty")
        if len(set(self.names)) != len(self.names):
            raise CatalogError("class names must be unique")
        if len(self.palette) != len(self.names):
            raise CatalogError(
                f"palette has {len(self.palette)} entries for {len(self.names)} classes"
            )

    @property
    def count(self) -> int:
        return len(self.names)

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise CatalogError(f"unknown class name: {name!r}") from None


@dataclass(frozen=True)
class LabelSet:
    """Binary presence vector over the catalog classes."""

    present: tuple[int, ...]

    def __post_init__(self):
        if any(v not in (0, 1) for v in self.present):
            raise ValueError("label-set entries must be 0 or 1")

    @property
    def size(self) -> int:
        return len(self.present)

    def __len__(self) -> int:
        return sum(self.present)

    def indices(self) -> list[int]:
        """Class indices present, ascending."""
        return [i for i, v in enumerate(self.present) if v]

    def names(self, catalog: ClassCatalog) -> list[str]:
        return [catalog.names[i] for i in self.indices()]

    def has(self, class_index: int) -> bool:
        return bool(self.present[class_index])

    def with_class(self, class_index: int) -> "LabelSet":
        bits = list(self.present)
        bits[class_index] = 1
        return LabelSet(tuple(bits))

    def without_class(self, class_index: int) -> "LabelSet":
        bits = list(self.present)
        bits[class_index] = 0
        return LabelSet(tuple(bits))

    def vector(self) -> np.ndarray:
        return np.asarray(self.present, dtype=np.float32)


def make_label_set(classes: list[str], catalog: ClassCatalog) -> LabelSet:
    """Build a LabelSet with 1 exactly at the named classes.

    Duplicate names are idempotent. Unknown names raise CatalogError
    naming the offending class.
    """
    bits = [0] * catalog.count
    for name in classes:
        bits[catalog.index_of(name)] = 1
    return LabelSet(tuple(bits))


@dataclass
class SemanticMap:
    """C-channel binary mask stack, shape (C, H, W), values in {0, 1}."""

    channels: np.ndarray

    def __post_init__(self):
        # Dtype is preserved so validate_semantic_map can report non-binary
        # values instead of silently truncating them.
        self.channels = np.ascontiguousarray(self.channels)

    @property
    def count(self) -> int:
        return self.channels.shape[0]

    @property
    def resolution(self) -> tuple[int, int]:
        return self.channels.shape[1], self.channels.shape[2]

    def copy(self) -> "SemanticMap":
        return SemanticMap(self.channels.copy())

    @staticmethod
    def blank(count: int, resolution: tuple[int, int]) -> "SemanticMap":
        h, w = resolution
        return SemanticMap(np.zeros((count, h, w), dtype=np.uint8))


def maps_equal(a: SemanticMap, b: SemanticMap) -> bool:
    return a.channels.shape == b.channels.shape and bool(
        np.array_equal(a.channels, b.channels)
    )


@dataclass
class Canvas:
    """Partially generated semantic map plus the set of classes already drawn.

    Channels of classes not in ``filled`` stay all-zero.
    """

    channels: np.ndarray
    filled: set[int] = field(default_factory=set)

    def __post_init__(self):
        self.channels = np.ascontiguousarray(self.channels, dtype=np.uint8)

    @staticmethod
    def blank(count: int, resolution: tuple[int, int]) -> "Canvas":
        h, w = resolution
        return Canvas(np.zeros((count, h, w), dtype=np.uint8), set())

    def with_channel(self, class_index: int, mask: np.ndarray) -> "Canvas":
        channels = self.channels.copy()
        channels[class_index] = np.asarray(mask, dtype=np.uint8)
        return Canvas(channels, self.filled | {class_index})

    def to_map(self) -> SemanticMap:
        return SemanticMap(self.channels.copy())


@dataclass(frozen=True)
class GenerationOrder:
    """Total order over class indices governing the iterative loop."""

    sequence: tuple[int, ...]

    def __post_init__(self):
        if sorted(self.sequence) != list(range(len(self.sequence))):
            raise ValueError(f"not a permutation of 0..{len(self.sequence) - 1}: {self.sequence}")

    @staticmethod
    def identity(count: int) -> "GenerationOrder":
        return GenerationOrder(tuple(range(count)))

    @staticmethod
    def from_names(names: list[str], catalog: ClassCatalog) -> "GenerationOrder":
        return GenerationOrder(tuple(catalog.index_of(n) for n in names))

    def position(self, class_index: int) -> int:
        return self.sequence.index(class_index)

    def ordered_present(self, label_set: LabelSet) -> list[int]:
        """Classes of the label-set in generation order."""
        return [k for k in self.sequence if label_set.has(k)]


def extract_label_set(map_: SemanticMap) -> LabelSet:
    """Bit k is set iff channel k has at least one nonzero pixel."""
    bits = tuple(int(map_.channels[k].any()) for k in range(map_.count))
    return LabelSet(bits)


def compose_index_map(map_: SemanticMap, order: GenerationOrder) -> np.ndarray:
    """Flatten a channel stack into an (H, W) index image.

    Pixel value is 1 + the index of the last class in ``order`` whose channel
    is set there, 0 where no channel is set. Deterministic; for pixel-disjoint
    channels the result does not depend on ``order``.
    """
    h, w = map_.resolution
    out = np.zeros((h, w), dtype=np.int32)
    for k in order.sequence:
        mask = map_.channels[k] != 0
        out[mask] = k + 1
    return out


@dataclass
class ValidationReport:
    issues: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    def __bool__(self) -> bool:
        return self.ok


def validate_semantic_map(
    map_: SemanticMap,
    catalog: ClassCatalog,
    resolution: tuple[int, int] | None = None,
) -> ValidationReport:
    """List every violated map invariant; empty report iff valid. Never raises."""
    report = ValidationReport()
    ch = map_.channels
    if ch.ndim != 3:
        report.issues.append(f"expected 3 axes (C, H, W), got {ch.ndim}")
        return report
    if ch.shape[0] != catalog.count:
        report.issues.append(
            f"channel count {ch.shape[0]} does not match catalog count {catalog.count}"
        )
    if resolution is not None and ch.shape[1:] != tuple(resolution):
        report.issues.append(
            f"resolution {ch.shape[1:]} does not match configured {tuple(resolution)}"
        )
    bad = (ch != 0) & (ch != 1)
    if bad.any():
        k, i, j = (int(v) for v in np.argwhere(bad)[0])
        report.issues.append(
            f"non-binary value {ch[k, i, j]} at channel {k}, pixel ({i}, {j})"
        )
    return report
