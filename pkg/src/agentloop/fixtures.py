"""Offline fixture pack: a small benchmark with scripted agents.

The pack bundles everything ``rollout --offline`` needs into one
directory: a manifest mixing coding and search items, the distorted
images, a closed search corpus, and per-item scripted model turns that
solve each task. Everything is a pure function of the seed, so reruns are
byte-identical.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .bench import (
    BenchItem,
    Category,
    Manifest,
    PlanEntry,
    SourceItem,
    Split,
    Task,
    build_coding_bench,
    save_manifest,
)
from .imagekit import ImageBuffer, save_png

_COLORS = [
    ("red", (220, 40, 40)),
    ("green", (40, 180, 60)),
    ("blue", (50, 70, 220)),
    ("yellow", (230, 220, 50)),
    ("cyan", (60, 210, 210)),
    ("magenta", (210, 60, 200)),
    ("orange", (240, 150, 40)),
    ("purple", (140, 60, 200)),
    ("brown", (150, 100, 60)),
    ("pink", (240, 160, 190)),
]

_REPAIR_SCRIPTS = {
    Category.ROTATION90: "rotate 270\nsave out",
    Category.ROTATION180: "rotate 180\nsave out",
    Category.DARK: "brightness 3.0\nsave out",
    Category.OVEREXPOSE: "brightness 0.4\nsave out",
    Category.BLUR: "denoise 1\nsave out",
    Category.NOISE: "denoise 1\nsave out",
    Category.NONE: "save out",
    Category.COMPOSITE: "denoise 1\nsave out",
    Category.CROP: "save out",
}

# (id suffix, question, gold answer, reference queries, facts for the corpus)
_SEARCH_TASKS = [
    ("ruler", "Which dynasty built the walled palace shown on this map?",
     "mira dynasty", ["which dynasty built the walled palace of veltara"],
     [("veltara palace", "The walled palace of Veltara was built by the Mira dynasty in 1410.")]),
    ("bridge", "What material is the long bridge in this photo made of?",
     "granite", ["what material is the seralt bridge made of"],
     [("seralt bridge", "The Seralt bridge spans the bay and is made of granite blocks.")]),
    ("bird", "Which island is home to the bird on this poster?",
     "kellan island", ["which island is home to the saffron kite bird"],
     [("saffron kite", "The saffron kite is a raptor found only on Kellan Island.")]),
    ("comet", "In which year was the comet on this plate first recorded?",
     "1835", ["when was the comet vesari first recorded"],
     [("comet vesari", "Comet Vesari was first recorded in 1835 by observers in Padua.")]),
    ("cheese", "Which valley produces the cheese shown on this label?",
     "doria valley", ["which valley produces arvel cheese"],
     [("arvel cheese", "Arvel cheese is aged in caves of the Doria valley.")]),
    ("founder", "Who founded the museum that keeps the statue in this picture?",
     "elena voss", ["which museum keeps the bronze statue of taren",
                    "who founded the halden museum"],
     [("taren statue", "The bronze statue of Taren is kept at the Halden museum."),
      ("halden museum", "The Halden museum was founded by Elena Voss in 1902.")]),
    ("peak", "How tall is the peak overlooking the town in this postcard?",
     "3120 meters", ["which peak overlooks the town of brenwick",
                     "how tall is mount corvai"],
     [("brenwick", "The town of Brenwick sits below Mount Corvai."),
      ("mount corvai", "Mount Corvai rises to 3120 meters.")]),
    ("author", "Who wrote the novel set in the lighthouse from this cover?",
     "marta keel", ["which novel is set in the ostrel lighthouse",
                    "who wrote the novel tidewatch"],
     [("ostrel lighthouse", "The novel Tidewatch is set in the Ostrel lighthouse."),
      ("tidewatch", "Tidewatch was written by Marta Keel.")]),
    ("river", "Which sea does the river in this satellite image empty into?",
     "sea of voss", ["which river flows through the city of almery",
                     "where does the river lenn empty"],
     [("almery", "The river Lenn flows through the city of Almery."),
      ("river lenn", "The river Lenn empties into the Sea of Voss.")]),
    ("train", "Which company operates the mountain railway on this ticket?",
     "corvai transit", ["which railway climbs mount corvai",
                        "who operates the corvai rack railway"],
     [("corvai railway", "The Corvai rack railway climbs Mount Corvai."),
      ("corvai transit", "The Corvai rack railway is operated by Corvai Transit.")]),
]


def _checker(rgb: tuple[int, int, int], size: int = 48, cell: int = 8) -> ImageBuffer:
    a = np.zeros((size, size, 3), dtype=np.uint8)
    a[:, :] = rgb
    for y in range(0, size, cell):
        for x in range(0, size, cell):
            if (x // cell + y // cell) % 2 == 0:
                a[y : y + cell, x : x + cell] = [c // 2 for c in rgb]
    return ImageBuffer(a)


def _coding_plan() -> list[PlanEntry]:
    plan = [PlanEntry(c.value, c, 1) for c in (
        Category.ROTATION90, Category.ROTATION180, Category.DARK, Category.OVEREXPOSE,
        Category.BLUR, Category.NOISE, Category.NONE,
    )]
    plan.append(PlanEntry("composite", Category.COMPOSITE, 2))
    plan.append(PlanEntry("crop", Category.CROP, 1))
    return plan


def build_fixture_pack(out_dir: str | Path, seed: int = 0) -> Path:
    """Write the 20-item offline pack and return its directory."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)

    sources = []
    for i, (name, rgb) in enumerate(_COLORS):
        path = out_dir / "images" / f"src-{name}.png"
        save_png(_checker(rgb), path)
        sources.append(
            SourceItem(
                id=f"c{i:02d}-{name}",
                image_path=str(path),
                question="Which color fills most of this image?",
                gold_answers=(name,),
            )
        )
    manifest = build_coding_bench(sources, _coding_plan(), master_seed=seed, out_dir=out_dir)

    items = list(manifest.items)
    corpus: list[dict] = []
    scripts: dict[str, list[str]] = {}
    for item in items:
        script = _REPAIR_SCRIPTS[item.category]
        scripts[item.id] = [
            f"<think>repair the picture first</think><code>{script}</code>",
            f"<think>now the color is clear</think><answer>{item.gold_answers[0]}</answer>",
        ]

    for i, (suffix, question, gold, refs, facts) in enumerate(_SEARCH_TASKS):
        item_id = f"s{i:02d}-{suffix}"
        rel = f"images/{item_id}.png"
        save_png(_checker(_COLORS[i][1], size=32, cell=16), out_dir / rel)
        item = BenchItem(
            id=item_id,
            image_path=rel,
            question=question,
            gold_answers=[gold],
            category=Category.NONE,
            split=Split.SIMPLE if len(refs) == 1 else Split.HARD,
            task=Task.SEARCH,
            reference_queries=list(refs),
            hops=len(refs),
        )
        items.append(item)
        for j, (title, text) in enumerate(facts):
            corpus.append({"id": f"{item_id}-d{j}", "title": title, "text": text})
        turns = [f"<think>find the fact</think><search>{q}</search>" for q in refs]
        turns.append(f"<think>that settles it</think><answer>{gold}</answer>")
        scripts[item_id] = turns

    items.sort(key=lambda it: it.id)
    save_manifest(Manifest(items), out_dir / "manifest.jsonl")
    with open(out_dir / "corpus.jsonl", "w", encoding="utf-8") as fh:
        for doc in corpus:
            fh.write(json.dumps(doc, sort_keys=True) + "\n")
    with open(out_dir / "scripts.jsonl", "w", encoding="utf-8") as fh:
        for item_id in sorted(scripts):
            fh.write(json.dumps({"id": item_id, "turns": scripts[item_id]}, sort_keys=True) + "\n")
    return out_dir


def load_scripts(path: str | Path) -> dict[str, list[str]]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            rec = json.loads(line)
            out[rec["id"]] = list(rec["turns"])
    return out
