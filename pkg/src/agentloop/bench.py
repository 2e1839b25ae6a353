"""Benchmark construction and bookkeeping.

Coding items are generated by applying seeded distortions to clean VQA
sources according to a category quota plan; search items are authored by
hand and only validated here. Every drawn parameter is derived from
``sha256(master_seed, item key)``, so a build is a pure function of
(sources, plan, master_seed) and regenerates bit-identically.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import imagekit
from .imagekit import DistortionOp, DistortionSpec, ImageBuffer, OpKind


class Task(str, Enum):
    CODING = "coding"
    SEARCH = "search"


class Split(str, Enum):
    SIMPLE = "simple"
    HARD = "hard"


class Category(str, Enum):
    ROTATION90 = "rotation90"
    ROTATION180 = "rotation180"
    DARK = "dark"
    OVEREXPOSE = "overexpose"
    BLUR = "blur"
    NOISE = "noise"
    NONE = "none"
    CROP = "crop"
    COMPOSITE = "composite"


SINGLE_CATEGORIES = (
    Category.ROTATION90,
    Category.ROTATION180,
    Category.DARK,
    Category.OVEREXPOSE,
    Category.BLUR,
    Category.NOISE,
    Category.NONE,
)

_CATEGORY_TO_KIND = {
    Category.ROTATION90: OpKind.ROTATE90,
    Category.ROTATION180: OpKind.ROTATE180,
    Category.DARK: OpKind.DARKEN,
    Category.OVEREXPOSE: OpKind.OVEREXPOSE,
    Category.BLUR: OpKind.BLUR,
    Category.NOISE: OpKind.NOISE,
    Category.NONE: OpKind.NONE,
}

COMPOSITE_KINDS = (
    OpKind.ROTATE90,
    OpKind.ROTATE180,
    OpKind.DARKEN,
    OpKind.OVEREXPOSE,
    OpKind.BLUR,
    OpKind.NOISE,
)

DARKEN_RANGE = (0.2, 0.5)
OVEREXPOSE_RANGE = (1.8, 3.0)
BLUR_SIGMA_RANGE = (1.0, 3.0)
NOISE_SIGMA_RANGE = (10.0, 50.0)


@dataclass(frozen=True)
class SourceItem:
    id: str
    image_path: str
    question: str
    gold_answers: tuple[str, ...]


@dataclass(frozen=True)
class PlanEntry:
    key: str
    category: Category
    count: int
    composite_kinds: tuple[OpKind, ...] | None = None


def default_test_plan(composite: int = 65, crop: int = 65) -> list[PlanEntry]:
    """10 items per single category plus a hard remainder of 200 total."""
    plan = [PlanEntry(c.value, c, 10) for c in SINGLE_CATEGORIES]
    plan.append(PlanEntry("composite", Category.COMPOSITE, composite))
    plan.append(PlanEntry("crop", Category.CROP, crop))
    return plan


def default_training_plan(per_category: int = 100) -> list[PlanEntry]:
    """12 evenly weighted categories: 7 singles, crop, 4 fixed composites."""
    plan = [PlanEntry(c.value, c, per_category) for c in SINGLE_CATEGORIES]
    plan.append(PlanEntry("crop", Category.CROP, per_category))
    combos = [
        ("rotate90_dark", (OpKind.ROTATE90, OpKind.DARKEN)),
        ("rotate180_overexpose", (OpKind.ROTATE180, OpKind.OVEREXPOSE)),
        ("blur_noise", (OpKind.BLUR, OpKind.NOISE)),
        ("dark_noise", (OpKind.DARKEN, OpKind.NOISE)),
    ]
    for key, kinds in combos:
        plan.append(PlanEntry(key, Category.COMPOSITE, per_category, kinds))
    return plan


@dataclass
class BenchItem:
    id: str
    image_path: str
    question: str
    gold_answers: list[str]
    category: Category
    split: Split
    task: Task
    distortion: DistortionSpec | None = None
    reference_queries: list[str] = field(default_factory=list)
    hops: int | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "image_path": self.image_path,
            "question": self.question,
            "gold_answers": list(self.gold_answers),
            "category": self.category.value,
            "split": self.split.value,
            "task": self.task.value,
            "distortion": self.distortion.to_dict() if self.distortion else None,
            "reference_queries": list(self.reference_queries),
            "hops": self.hops,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BenchItem":
        return cls(
            id=d["id"],
            image_path=d.get("image_path", ""),
            question=d["question"],
            gold_answers=list(d["gold_answers"]),
            category=Category(d["category"]),
            split=Split(d["split"]),
            task=Task(d["task"]),
            distortion=DistortionSpec.from_dict(d["distortion"]) if d.get("distortion") else None,
            reference_queries=list(d.get("reference_queries") or []),
            hops=d.get("hops"),
        )


@dataclass
class Manifest:
    items: list[BenchItem]

    def __post_init__(self) -> None:
        ids = [item.id for item in self.items]
        if len(set(ids)) != len(ids):
            raise ValueError("manifest item ids must be unique")

    def counts(self) -> dict[tuple[str, str, str], int]:
        out: dict[tuple[str, str, str], int] = {}
        for item in self.items:
            key = (item.task.value, item.category.value, item.split.value)
            out[key] = out.get(key, 0) + 1
        return out

    def by_id(self) -> dict[str, BenchItem]:
        return {item.id: item for item in self.items}


def save_manifest(manifest: Manifest, path: str | Path) -> None:
    lines = [json.dumps(item.to_dict(), sort_keys=True) for item in manifest.items]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_manifest(path: str | Path) -> Manifest:
    items = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            items.append(BenchItem.from_dict(json.loads(line)))
    return Manifest(items)


def split_difficulty(item: BenchItem) -> Split:
    """Simple = clean or a single distortion; composites and crops are hard."""
    if item.task is not Task.CODING:
        raise ValueError("difficulty is derived for coding items only")
    if item.category in (Category.COMPOSITE, Category.CROP):
        return Split.HARD
    return Split.SIMPLE


def derive_item_seed(master_seed: int, item_key: str) -> int:
    digest = hashlib.sha256(f"{master_seed}:{item_key}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def _draw_op(kind: OpKind, rng: np.random.Generator) -> DistortionOp:
    if kind is OpKind.DARKEN:
        return DistortionOp(kind, {"factor": round(float(rng.uniform(*DARKEN_RANGE)), 4)})
    if kind is OpKind.OVEREXPOSE:
        return DistortionOp(kind, {"factor": round(float(rng.uniform(*OVEREXPOSE_RANGE)), 4)})
    if kind is OpKind.BLUR:
        return DistortionOp(kind, {"sigma": round(float(rng.uniform(*BLUR_SIGMA_RANGE)), 4)})
    if kind is OpKind.NOISE:
        return DistortionOp(kind, {"sigma": round(float(rng.uniform(*NOISE_SIGMA_RANGE)), 4)})
    return DistortionOp(kind)


def _draw_spec(entry: PlanEntry, seed: int) -> DistortionSpec | None:
    if entry.category is Category.CROP:
        return None
    rng = np.random.Generator(np.random.PCG64(seed))
    if entry.category is Category.COMPOSITE:
        kinds = entry.composite_kinds
        if kinds is None:
            picked = rng.choice(len(COMPOSITE_KINDS), size=2, replace=False)
            kinds = tuple(COMPOSITE_KINDS[int(i)] for i in picked)
        ops = tuple(_draw_op(kind, rng) for kind in kinds)
    else:
        ops = (_draw_op(_CATEGORY_TO_KIND[entry.category], rng),)
    return DistortionSpec(ops, seed=seed)


def _embed_in_noise_canvas(img: ImageBuffer, rng: np.random.Generator) -> ImageBuffer:
    """Surround the source with seeded noise so answering requires a crop."""
    h, w = img.height, img.width
    pad_x = max(8, int(rng.integers(w // 4, max(w // 4 + 1, (3 * w) // 4 + 1))))
    pad_y = max(8, int(rng.integers(h // 4, max(h // 4 + 1, (3 * h) // 4 + 1))))
    canvas = rng.integers(0, 256, size=(h + 2 * pad_y, w + 2 * pad_x, 3), dtype=np.int64)
    canvas = canvas.astype(np.uint8)
    off_x = int(rng.integers(0, 2 * pad_x + 1))
    off_y = int(rng.integers(0, 2 * pad_y + 1))
    canvas[off_y : off_y + h, off_x : off_x + w] = img.array
    return ImageBuffer(canvas)


def build_coding_bench(
    sources: list[SourceItem],
    plan: list[PlanEntry],
    master_seed: int,
    out_dir: str | Path,
) -> Manifest:
    """Generate distorted images and the manifest for one quota plan."""
    total = sum(entry.count for entry in plan)
    if len(sources) < total:
        raise ValueError(f"plan needs {total} sources, got {len(sources)}")
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    image_dir.mkdir(parents=True, exist_ok=True)

    expanded = [entry for entry in plan for _ in range(entry.count)]
    order = np.random.Generator(np.random.PCG64(master_seed)).permutation(total)
    items: list[BenchItem] = []
    for slot, entry_idx in enumerate(order):
        entry = expanded[int(entry_idx)]
        source = sources[slot]
        item_id = f"{source.id}-{entry.key}"
        seed = derive_item_seed(master_seed, item_id)
        src_img = imagekit.load_png(source.image_path)
        spec = _draw_spec(entry, seed)
        if entry.category is Category.CROP:
            rng = np.random.Generator(np.random.PCG64(seed))
            out_img = _embed_in_noise_canvas(src_img, rng)
        else:
            out_img = imagekit.apply_spec(src_img, spec)
        rel_path = f"images/{item_id}.png"
        imagekit.save_png(out_img, out_dir / rel_path)
        item = BenchItem(
            id=item_id,
            image_path=rel_path,
            question=source.question,
            gold_answers=list(source.gold_answers),
            category=entry.category,
            split=Split.SIMPLE,
            task=Task.CODING,
            distortion=spec,
        )
        item.split = split_difficulty(item)
        items.append(item)
    items.sort(key=lambda it: it.id)
    return Manifest(items)


def _entry_matches(entry: PlanEntry, item: BenchItem) -> bool:
    if item.category is not entry.category:
        return False
    if entry.composite_kinds is not None:
        if item.distortion is None:
            return False
        kinds = tuple(op.kind for op in item.distortion.ops)
        return kinds == entry.composite_kinds
    if entry.category is Category.COMPOSITE and item.distortion is not None:
        # Keep fixed-combo rows and free-combo rows disjoint within a plan.
        return True
    return True


def validate_manifest(
    manifest: Manifest,
    expected_plan: list[PlanEntry] | None = None,
    base_dir: str | Path | None = None,
    task: Task = Task.CODING,
) -> list[str]:
    """Return a list of findings; an empty list means the manifest passes."""
    findings: list[str] = []
    seen: set[str] = set()
    for item in manifest.items:
        if item.id in seen:
            findings.append(f"duplicate id: {item.id}")
        seen.add(item.id)
        if not item.gold_answers or any(not a for a in item.gold_answers):
            findings.append(f"{item.id}: empty gold answers")
        if item.task is Task.CODING:
            if item.distortion is None and item.category not in (Category.CROP, Category.NONE):
                findings.append(f"{item.id}: missing distortion spec for {item.category.value}")
            if item.distortion is not None:
                n_real = sum(1 for op in item.distortion.ops if op.kind is not OpKind.NONE)
                if item.category is Category.COMPOSITE and n_real < 2:
                    findings.append(f"{item.id}: composite item with {n_real} distortion op(s)")
                if item.category in SINGLE_CATEGORIES and n_real > 1:
                    findings.append(f"{item.id}: single-category item with {n_real} ops")
            if split_difficulty(item) is not item.split:
                findings.append(
                    f"{item.id}: split {item.split.value} inconsistent with category {item.category.value}"
                )
        else:
            if item.distortion is not None:
                findings.append(f"{item.id}: search item carries a distortion spec")
        if base_dir is not None and item.image_path:
            if not (Path(base_dir) / item.image_path).is_file():
                findings.append(f"{item.id}: missing image file {item.image_path}")
    if expected_plan is not None:
        relevant = [it for it in manifest.items if it.task is task]
        matched: set[str] = set()
        fixed_first = sorted(
            expected_plan, key=lambda e: e.composite_kinds is None
        )
        for entry in fixed_first:
            got = [
                it
                for it in relevant
                if it.id not in matched and _entry_matches(entry, it)
            ]
            take = got[: entry.count] if len(got) >= entry.count else got
            for it in take:
                matched.add(it.id)
            if len(got) != entry.count:
                findings.append(
                    f"plan row {entry.key}: expected {entry.count} items, found {len(got)}"
                )
        extra = len(relevant) - len(matched)
        total = sum(e.count for e in expected_plan)
        if len(relevant) != total:
            findings.append(f"plan total: expected {total} items, found {len(relevant)}")
        elif extra:
            findings.append(f"{extra} item(s) match no plan row")
    return findings
