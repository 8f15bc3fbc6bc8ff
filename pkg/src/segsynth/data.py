"""Dataset containers, ingestion, cleaning, splitting, and a procedural synthetic set.

On-disk format
--------------
A dataset directory holds ``manifest.json`` plus one 8-bit paletted PNG per
example. Pixel value 0 is background; value k+1 marks class k of the catalog.
Manifest schema::

    {
      "format_version": 1,
      "names": ["torso", ...],          # catalog class names, ordered
      "palette": [[r, g, b], ...],      # one RGB triple per class
      "resolution": [H, W],
      "split": "train" | null,
      "examples": [
        {"file": "ex_00000.png", "id": "ex_00000", "aspect_ratio": 0.74},
        ...
      ]
    }

Index images cannot carry overlapping channels, so export flattens overlaps by
generation-order priority (later classes win). Ingested data therefore always
has pixel-disjoint channels and round-trips bit-exactly.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .core import (
    ClassCatalog,
    GenerationOrder,
    LabelSet,
    SemanticMap,
    compose_index_map,
    extract_label_set,
)

MANIFEST_NAME = "manifest.json"
FORMAT_VERSION = 1


class DataError(ValueError):
    """Raised for malformed datasets, manifests, or label-map files."""


@dataclass
class Example:
    map: SemanticMap
    label_set: LabelSet
    source_id: str | None = None
    aspect_ratio: float | None = None


@dataclass
class Dataset:
    examples: list[Example]
    catalog: ClassCatalog
    split: str | None = None

    def __len__(self) -> int:
        return len(self.examples)

    @property
    def resolution(self) -> tuple[int, int]:
        if not self.examples:
            raise DataError("empty dataset has no resolution")
        return self.examples[0].map.resolution

    def check_consistent(self) -> None:
        """Label-sets must match the non-empty channels; resolutions must agree."""
        for i, ex in enumerate(self.examples):
            if extract_label_set(ex.map) != ex.label_set:
                raise DataError(f"example {i}: label-set does not match map channels")
            if ex.map.resolution != self.examples[0].map.resolution:
                raise DataError(f"example {i}: resolution differs within dataset")

    def label_sets(self) -> list[LabelSet]:
        return [ex.label_set for ex in self.examples]

    def maps(self) -> list[SemanticMap]:
        return [ex.map for ex in self.examples]


# ---------------------------------------------------------------------------
# Catalogs

def default_catalog() -> ClassCatalog:
    """Six-class body-layout catalog used by the synthetic dataset."""
    return ClassCatalog(
        names=("torso", "head", "left_limb", "right_limb", "garment", "accessory"),
        palette=(
            (200, 80, 80),
            (240, 200, 160),
            (80, 160, 220),
            (60, 110, 200),
            (110, 200, 110),
            (235, 220, 90),
        ),
    )


def _wheel_palette(n: int) -> tuple[tuple[int, int, int], ...]:
    colors = []
    for i in range(n):
        h = (i / n) * 6.0
        x = 1.0 - abs(h % 2.0 - 1.0)
        rgb = [(1, x, 0), (x, 1, 0), (0, 1, x), (0, x, 1), (x, 0, 1), (1, 0, x)][int(h) % 6]
        colors.append(tuple(int(40 + 215 * c) for c in rgb))
    return tuple(colors)


def human_parsing_catalog() -> ClassCatalog:
    """Street-fashion parsing catalog (background excluded, carried as index 0)."""
    names = (
        "face", "hair", "left_arm", "right_arm", "left_leg", "right_leg",
        "upper_clothes", "dress", "skirt", "pants", "left_shoe", "right_shoe",
        "hat", "sunglasses", "belt", "scarf", "bag",
    )
    return ClassCatalog(names=names, palette=_wheel_palette(len(names)))


def celebamask_hq_catalog() -> ClassCatalog:
    """Face-attribute catalog (background excluded, carried as index 0)."""
    names = (
        "skin", "neck", "hair", "left_eyebrow", "right_eyebrow", "left_ear",
        "right_ear", "left_eye", "right_eye", "nose", "lower_lip", "upper_lip",
        "mouth", "hat", "cloth", "eyeglass", "earrings", "necklace",
    )
    return ClassCatalog(names=names, palette=_wheel_palette(len(names)))


# ---------------------------------------------------------------------------
# Ingest / export

def export(dataset: Dataset, path: str | Path, order: GenerationOrder | None = None) -> Path:
    """Write a dataset directory (manifest + paletted PNGs). Byte-deterministic."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    catalog = dataset.catalog
    if order is None:
        order = GenerationOrder.identity(catalog.count)

    flat_palette = [0, 0, 0]
    for rgb in catalog.palette:
        flat_palette.extend(rgb)

    entries = []
    for i, ex in enumerate(dataset.examples):
        name = ex.source_id or f"ex_{i:05d}"
        fname = name if name.endswith(".png") else f"{name}.png"
        index_map = compose_index_map(ex.map, order).astype(np.uint8)
        img = Image.fromarray(index_map, mode="P")
        img.putpalette(flat_palette)
        img.save(path / fname, format="PNG")
        entry: dict = {"file": fname, "id": fname[: -len(".png")]}
        if ex.aspect_ratio is not None:
            entry["aspect_ratio"] = ex.aspect_ratio
        entries.append(entry)

    h, w = dataset.resolution if dataset.examples else (0, 0)
    manifest = {
        "format_version": FORMAT_VERSION,
        "names": list(catalog.names),
        "palette": [list(rgb) for rgb in catalog.palette],
        "resolution": [h, w],
        "split": dataset.split,
        "examples": entries,
    }
    (path / MANIFEST_NAME).write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n"
    )
    return path


def ingest(path: str | Path, catalog: ClassCatalog | None = None) -> Dataset:
    """Read a dataset directory into memory.

    Each indexed image is exploded into a C-channel binary stack; pixels of
    index 0 set no channel; the label-set is derived from non-empty channels
    (classes with an empty channel are dropped).
    """
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.is_file():
        raise DataError(f"no {MANIFEST_NAME} in {path}")
    manifest = json.loads(manifest_path.read_text())
    names = tuple(manifest["names"])
    palette = tuple(tuple(rgb) for rgb in manifest["palette"])
    file_catalog = ClassCatalog(names=names, palette=palette)
    if catalog is not None and catalog.names != names:
        raise DataError(
            f"catalog mismatch: expected classes {catalog.names}, manifest has {names}"
        )
    catalog = catalog or file_catalog
    h, w = manifest["resolution"]

    examples = []
    for entry in manifest["examples"]:
        fname = entry["file"]
        arr = np.asarray(Image.open(path / fname))
        if arr.shape != (h, w):
            raise DataError(
                f"{fname}: resolution {arr.shape} does not match manifest ({h}, {w})"
            )
        if arr.max(initial=0) > catalog.count:
            raise DataError(
                f"{fname}: unknown palette index {int(arr.max())} "
                f"(catalog has {catalog.count} classes)"
            )
        channels = np.zeros((catalog.count, h, w), dtype=np.uint8)
        for k in range(catalog.count):
            channels[k] = (arr == k + 1).astype(np.uint8)
        map_ = SemanticMap(channels)
        examples.append(
            Example(
                map=map_,
                label_set=extract_label_set(map_),
                source_id=entry.get("id", fname),
                aspect_ratio=entry.get("aspect_ratio"),
            )
        )
    return Dataset(examples=examples, catalog=catalog, split=manifest.get("split"))


# ---------------------------------------------------------------------------
# Cleaning and cropping

def clean_aspect_ratio(dataset: Dataset) -> Dataset:
    """Keep examples whose recorded aspect ratio lies within one standard
    deviation of the mean (closed interval; population std)."""
    if len(dataset) < 2:
        warnings.warn("dataset smaller than 2 examples: aspect-ratio cleaning skipped")
        return dataset
    ratios = []
    for i, ex in enumerate(dataset.examples):
        if ex.aspect_ratio is None:
            raise DataError(f"example {i} has no recorded aspect ratio")
        ratios.append(ex.aspect_ratio)
    ratios = np.asarray(ratios, dtype=np.float64)
    m = float(ratios.mean())
    s = float(ratios.std())
    kept = [
        ex
        for ex, r in zip(dataset.examples, ratios)
        if m - s <= r <= m + s
    ]
    return replace(dataset, examples=kept)


def _nearest_resize(mask: np.ndarray, resolution: tuple[int, int]) -> np.ndarray:
    h_in, w_in = mask.shape
    h_out, w_out = resolution
    rows = np.clip(((np.arange(h_out) + 0.5) * h_in / h_out).astype(np.int64), 0, h_in - 1)
    cols = np.clip(((np.arange(w_out) + 0.5) * w_in / w_out).astype(np.int64), 0, w_in - 1)
    return mask[np.ix_(rows, cols)]


def crop_to_bbox(map_: SemanticMap, resolution: tuple[int, int] | None = None) -> SemanticMap:
    """Crop to the union bounding box of all nonzero channels, then
    nearest-neighbor resize to ``resolution`` (default: input resolution)."""
    any_fg = map_.channels.any(axis=0)
    if not any_fg.any():
        raise DataError("cannot crop an all-zero map")
    rows = np.flatnonzero(any_fg.any(axis=1))
    cols = np.flatnonzero(any_fg.any(axis=0))
    r0, r1 = int(rows[0]), int(rows[-1]) + 1
    c0, c1 = int(cols[0]), int(cols[-1]) + 1
    resolution = resolution or map_.resolution
    out = np.stack(
        [_nearest_resize(map_.channels[k, r0:r1, c0:c1], resolution) for k in range(map_.count)]
    )
    return SemanticMap(out.astype(np.uint8))


def split(
    dataset: Dataset,
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> tuple[Dataset, Dataset, Dataset]:
    """Seed-deterministic shuffle, then partition into train/val/test.

    Sizes are floor allocations for val and test; the remainder goes to train.
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"fractions must sum to 1, got {fractions}")
    n = len(dataset)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_val = int(math.floor(n * fractions[1]))
    n_test = int(math.floor(n * fractions[2]))
    n_train = n - n_val - n_test
    idx_train = perm[:n_train]
    idx_val = perm[n_train : n_train + n_val]
    idx_test = perm[n_train + n_val :]

    def take(indices, tag):
        return Dataset(
            examples=[dataset.examples[int(i)] for i in indices],
            catalog=dataset.catalog,
            split=tag,
        )

    return take(idx_train, "train"), take(idx_val, "val"), take(idx_test, "test")


# ---------------------------------------------------------------------------
# Synthetic dataset

@dataclass
class SynthSpec:
    """Procedural body-layout generator configuration.

    Correlation rules: the head sits on top of the torso, limbs attach at the
    torso sides (left limb strictly left of the torso center), the garment is
    a vertical band over the dilated torso, and the accessory sits above the
    head. Limb and garment placement is therefore predictable from the torso,
    which is what the compatibility metric measures.

    Label-sets are sampled as near-nested prefixes of the canonical order
    (torso, head, limbs, garment, accessory), the way real parsing data
    composes outfits: each optional class continues the chain with its
    probability, is skipped-but-continued with probability ``p_skip``, and
    otherwise ends the chain. Longer label-sets are therefore progressively
    rarer and compositionally deeper, while every class appears in a
    consistent context.
    """

    n_examples: int = 100
    resolution: tuple[int, int] = (64, 64)
    p_head: float = 0.7
    p_limb: float = 0.55
    p_garment: float = 0.4
    p_accessory: float = 0.3
    p_skip: float = 0.15
    seed: int = 0

    def __post_init__(self):
        if self.n_examples < 1:
            raise DataError("n_examples must be >= 1")
        probs = (self.p_head, self.p_limb, self.p_garment, self.p_accessory, self.p_skip)
        for p in probs:
            if not 0.0 <= p <= 1.0:
                raise DataError(f"probability {p} outside [0, 1]")


def _rect(channels: np.ndarray, k: int, r0: int, r1: int, c0: int, c1: int) -> None:
    h, w = channels.shape[1:]
    r0, r1 = max(0, r0), min(h, r1)
    c0, c1 = max(0, c0), min(w, c1)
    if r1 > r0 and c1 > c0:
        channels[k, r0:r1, c0:c1] = 1


def _ellipse(channels: np.ndarray, k: int, cy: float, cx: float, ry: float, rx: float) -> None:
    h, w = channels.shape[1:]
    yy, xx = np.mgrid[0:h, 0:w]
    inside = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    channels[k][inside] = 1


def synthesize(spec: SynthSpec, catalog: ClassCatalog | None = None) -> Dataset:
    """Generate a correlated synthetic dataset of body layouts."""
    catalog = catalog or default_catalog()
    h, w = spec.resolution
    rng = np.random.default_rng(spec.seed)
    i_torso = catalog.index_of("torso")
    i_head = catalog.index_of("head")
    i_left = catalog.index_of("left_limb")
    i_right = catalog.index_of("right_limb")
    i_garment = catalog.index_of("garment")
    i_acc = catalog.index_of("accessory")

    chain = (
        (i_head, spec.p_head),
        (i_left, spec.p_limb),
        (i_right, spec.p_limb),
        (i_garment, spec.p_garment),
        (i_acc, spec.p_accessory),
    )

    examples = []
    for n in range(spec.n_examples):
        channels = np.zeros((catalog.count, h, w), dtype=np.uint8)

        # near-nested prefix of the chain; drawn before the shapes so the
        # shape randomness stream is identical across membership outcomes
        present = {i_torso}
        for cls, p in chain:
            u = rng.random()
            if u < p:
                present.add(cls)
            elif u >= p + spec.p_skip:
                break

        torso_w = int(rng.uniform(0.30, 0.38) * w)
        torso_h = int(rng.uniform(0.34, 0.42) * h)
        cx = int(rng.uniform(0.42, 0.58) * w)
        top = int(rng.uniform(0.30, 0.40) * h)
        t_r0, t_r1 = top, top + torso_h
        t_c0, t_c1 = cx - torso_w // 2, cx + (torso_w + 1) // 2
        _rect(channels, i_torso, t_r0, t_r1, t_c0, t_c1)

        if i_head in present:
            head_rx = max(2, int(torso_w * rng.uniform(0.22, 0.30)))
            head_ry = max(2, int(torso_h * rng.uniform(0.22, 0.32)))
            _ellipse(channels, i_head, t_r0 - head_ry - 1, cx, head_ry, head_rx)

        limb_w = max(2, int(torso_w * rng.uniform(0.22, 0.32)))
        limb_h = max(3, int(torso_h * rng.uniform(0.55, 0.85)))
        limb_top = t_r0 + int(torso_h * rng.uniform(0.0, 0.15))
        if i_left in present:
            _rect(channels, i_left, limb_top, limb_top + limb_h, t_c0 - limb_w, t_c0)
        if i_right in present:
            _rect(channels, i_right, limb_top, limb_top + limb_h, t_c1, t_c1 + limb_w)

        if i_garment in present:
            pad = 1
            band_w = max(2, int(torso_w * rng.uniform(0.35, 0.55)))
            b_c0 = cx - band_w // 2 + int(rng.uniform(-2, 2))
            _rect(
                channels, i_garment,
                t_r0 - pad, t_r1 + pad,
                max(b_c0, t_c0 - pad), min(b_c0 + band_w, t_c1 + pad),
            )

        if i_acc in present:
            head_rows = np.flatnonzero(channels[i_head].any(axis=1))
            acc_bottom = int(head_rows[0]) if head_rows.size else t_r0 - 1
            acc_h = max(2, int(h * rng.uniform(0.04, 0.08)))
            acc_w = max(3, int(torso_w * rng.uniform(0.35, 0.55)))
            _rect(
                channels, i_acc,
                acc_bottom - acc_h, acc_bottom + 1,
                cx - acc_w // 2, cx + (acc_w + 1) // 2,
            )

        map_ = SemanticMap(channels)
        examples.append(
            Example(
                map=map_,
                label_set=extract_label_set(map_),
                source_id=f"synth_{n:05d}",
                aspect_ratio=round(float(rng.normal(0.75, 0.05)), 4),
            )
        )
    return Dataset(examples=examples, catalog=catalog, split=None)
