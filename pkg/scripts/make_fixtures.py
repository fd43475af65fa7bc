#!/usr/bin/env python3
"""Generate the bundled fixture dataset: three synthetic images, one
annotation file per supported format, a source manifest, and the offline
mini benchmark. Everything is deterministic; outputs are committed so
tests and CLI examples run without this script, but re-running it must
reproduce the same files (PNG bytes depend on the Pillow version)."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from vptk.construct import InstructionSample, Turn, emit_jsonl
from vptk.ingest import SourceManifest, parse_detection
from vptk.geometry import BoxPrompt, PointPrompt

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"


def make_image(path: Path, size: tuple[int, int], seed: int) -> None:
    w, h = size
    rng = np.random.Generator(np.random.PCG64(seed))
    yy, xx = np.mgrid[0:h, 0:w]
    base = np.stack(
        [
            (xx * 255 / max(1, w - 1)).astype(np.uint8),
            (yy * 255 / max(1, h - 1)).astype(np.uint8),
            ((xx + yy) * 127 / max(1, w + h - 2)).astype(np.uint8),
        ],
        axis=-1,
    )
    # a few flat patches so overlays land on varied backgrounds
    for _ in range(4):
        x0, y0 = int(rng.integers(0, w - 8)), int(rng.integers(0, h - 8))
        pw, ph = int(rng.integers(6, 16)), int(rng.integers(6, 12))
        color = rng.integers(0, 255, size=3, dtype=np.uint8)
        base[y0 : min(h, y0 + ph), x0 : min(w, x0 + pw)] = color
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(base, mode="RGB").save(path, format="PNG", optimize=False)


def write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=1, ensure_ascii=False) + "\n", encoding="utf-8")


def main() -> None:
    images = [
        {"id": 1, "file_name": "scene0.png", "width": 64, "height": 48},
        {"id": 2, "file_name": "scene1.png", "width": 80, "height": 60},
        {"id": 3, "file_name": "scene2.png", "width": 72, "height": 54},
    ]
    for img, seed in zip(images, (11, 22, 33)):
        make_image(FIXTURES / "images" / img["file_name"], (img["width"], img["height"]), seed)

    categories = [
        {"id": 1, "name": "dog"},
        {"id": 2, "name": "bed"},
        {"id": 3, "name": "mattress"},
        {"id": 4, "name": "pillow"},
        {"id": 5, "name": "person"},
        {"id": 6, "name": "chessboard"},
        {"id": 7, "name": "pen"},
    ]

    # detection: scene0 carries the four-category natural example
    detection = {
        "images": images,
        "categories": categories,
        "annotations": [
            {"id": 101, "image_id": 1, "category_id": 1, "bbox": [6, 10, 26, 20]},
            {"id": 102, "image_id": 1, "category_id": 2, "bbox": [2, 6, 58, 38]},
            {"id": 103, "image_id": 1, "category_id": 3, "bbox": [4, 30, 54, 12]},
            {"id": 104, "image_id": 1, "category_id": 4, "bbox": [30, 8, 18, 12]},
            {"id": 201, "image_id": 2, "category_id": 5, "bbox": [8, 12, 20, 36]},
            {"id": 202, "image_id": 2, "category_id": 6, "bbox": [36, 24, 28, 20]},
            {"id": 301, "image_id": 3, "category_id": 5, "bbox": [10, 6, 24, 40]},
            {"id": 302, "image_id": 3, "category_id": 7, "bbox": [40, 20, 10, 4]},
        ],
    }
    write_json(FIXTURES / "annotations" / "detection.json", detection)

    # segmentation: polygons on scene0, uncompressed RLE on scene1
    segmentation = {
        "images": images,
        "categories": categories,
        "annotations": [
            {
                "id": 111,
                "image_id": 1,
                "category_id": 1,
                "segmentation": [[8, 12, 30, 12, 30, 28, 8, 28]],
            },
            {
                "id": 112,
                "image_id": 1,
                "category_id": 4,
                "segmentation": [[32, 10, 46, 10, 46, 18, 32, 18]],
            },
            {
                "id": 211,
                "image_id": 2,
                "category_id": 6,
                # column-major runs over the 80x60 raster: a solid block
                "segmentation": {"counts": [2166, 20, 40, 20, 40, 20, 40, 20, 40, 20, 2374], "size": [60, 80]},
            },
        ],
    }
    write_json(FIXTURES / "annotations" / "segmentation.json", segmentation)

    # one compressed entry, used to exercise the skip-with-warning path
    compressed = {
        "images": images,
        "categories": categories,
        "annotations": [
            {"id": 121, "image_id": 1, "category_id": 1, "segmentation": {"counts": "XYZ12", "size": [48, 64]}},
            {
                "id": 122,
                "image_id": 1,
                "category_id": 4,
                "segmentation": [[32, 10, 46, 10, 46, 18, 32, 18]],
            },
        ],
    }
    write_json(FIXTURES / "annotations" / "segmentation_compressed.json", compressed)

    refexp = {
        "images": images,
        "annotations": [
            {
                "id": 131,
                "image_id": 1,
                "bbox": [6, 10, 26, 20],
                "label": "dog",
                "expressions": ["the dog sleeping on the bed", "a light brown dog"],
            },
            {
                "id": 331,
                "image_id": 3,
                "bbox": [10, 6, 24, 40],
                "label": "person",
                "expressions": ["the girl holding a pen"],
            },
        ],
    }
    write_json(FIXTURES / "annotations" / "refexp.json", refexp)

    phrase_grounding = {
        "images": images,
        "items": [
            {
                "image_id": 1,
                "caption": "A man throws a ball to a dog",
                "regions": [
                    {"id": "r1", "bbox": [6, 10, 20, 30], "label": "man"},
                    {"id": "r2", "bbox": [30, 6, 10, 10], "label": "ball"},
                    {"id": "r3", "bbox": [44, 20, 18, 24], "label": "dog"},
                ],
                "phrases": [
                    {"start": 0, "end": 5, "region_ids": ["r1"]},
                    {"start": 13, "end": 19, "region_ids": ["r2"]},
                    {"start": 23, "end": 28, "region_ids": ["r3"]},
                ],
            },
            {
                "image_id": 2,
                "caption": "Two children play chess in the park",
                "regions": [
                    {"id": "r1", "bbox": [8, 12, 20, 36], "label": "children"},
                    {"id": "r2", "bbox": [36, 24, 28, 20], "label": "chessboard"},
                    {"id": "r3", "bbox": [2, 2, 76, 56], "label": "park"},
                ],
                "phrases": [
                    {"start": 0, "end": 12, "region_ids": ["r1"]},
                    {"start": 18, "end": 23, "region_ids": ["r2"]},
                    {"start": 27, "end": 35, "region_ids": ["r3"]},
                ],
            },
            {
                "image_id": 3,
                "caption": "a girl holding a pen",
                "regions": [
                    {"id": "r1", "bbox": [10, 6, 24, 40], "label": "girl"},
                    {"id": "r2", "bbox": [40, 20, 10, 4], "label": "pen"},
                ],
                "phrases": [
                    {"start": 0, "end": 6, "region_ids": ["r1"]},
                    {"start": 15, "end": 20, "region_ids": ["r2"]},
                ],
            },
        ],
    }
    write_json(FIXTURES / "annotations" / "phrase_grounding.json", phrase_grounding)

    grounding_qa = {
        "images": images,
        "items": [
            {
                "image_id": 1,
                "regions": [
                    {"id": "1", "bbox": [6, 10, 20, 30], "label": "man"},
                    {"id": "2", "bbox": [30, 6, 10, 10], "label": "ball"},
                    {"id": "3", "bbox": [44, 20, 18, 24], "label": "dog"},
                ],
                "qa": [
                    {
                        "question": "What is [R1](0.094, 0.208, 0.406, 0.833) doing?",
                        "answer": "He is throwing [R2] to the dog.",
                    },
                    {
                        "question": "Where is the ball [R2]?",
                        "answer": "It is in the air between [R1] and [R3](0.688, 0.417, 0.969, 0.917).",
                    },
                ],
            },
            {
                "image_id": 3,
                "regions": [
                    {"id": "1", "bbox": [10, 6, 24, 40], "label": "girl"},
                    {"id": "2", "bbox": [40, 20, 10, 4], "label": "pen"},
                ],
                "qa": [
                    {"question": "What is [R1] holding?", "answer": "[R1] is holding [R2], a pen."}
                ],
            },
        ],
    }
    write_json(FIXTURES / "annotations" / "grounding_qa.json", grounding_qa)

    manifest = [
        {"format_kind": "coco-det", "annotation_path": "fixtures/annotations/detection.json", "image_root": "fixtures/images", "domain": "natural"},
        {"format_kind": "coco-seg", "annotation_path": "fixtures/annotations/segmentation.json", "image_root": "fixtures/images", "domain": "natural"},
        {"format_kind": "refexp", "annotation_path": "fixtures/annotations/refexp.json", "image_root": "fixtures/images", "domain": "natural"},
        {"format_kind": "phrase-grounding", "annotation_path": "fixtures/annotations/phrase_grounding.json", "image_root": "fixtures/images", "domain": "natural"},
        {"format_kind": "grounding-qa", "annotation_path": "fixtures/annotations/grounding_qa.json", "image_root": "fixtures/images", "domain": "natural"},
    ]
    write_json(FIXTURES / "annotations" / "manifest.json", manifest)

    # offline mini benchmark: every task scorable without a judge
    det_manifest = SourceManifest(
        format_kind="coco-det",
        annotation_path=str(FIXTURES / "annotations" / "detection.json"),
        image_root="fixtures/images",
        domain="natural",
    )
    records = parse_detection(det_manifest)
    by_id = {r.image_id: r for r in records}

    def boxes(image_id: str, *region_ids: str):
        rec = by_id[image_id]
        return tuple(rec.region_by_id(rid).box for rid in region_ids)

    bench: list[InstructionSample] = []
    bench.append(
        InstructionSample(
            sample_id="bench-stage1-0",
            image_path="fixtures/images/scene0.png",
            domain="natural",
            prompts=boxes("1", "101", "102"),
            prompt_kind="box",
            task="stage1-label",
            turns=(
                Turn("user", "Please identify the category of each marked region in the image."),
                Turn("assistant", "<Mark 1>: dog\n<Mark 2>: bed"),
            ),
            source="1",
        )
    )
    bench.append(
        InstructionSample(
            sample_id="bench-stage1-1",
            image_path="fixtures/images/scene1.png",
            domain="natural",
            prompts=boxes("2", "201", "202"),
            prompt_kind="box",
            task="stage1-label",
            turns=(
                Turn("user", "Please identify the category of each marked region in the image."),
                Turn("assistant", "<Mark 1>: person\n<Mark 2>: chessboard"),
            ),
            source="2",
        )
    )
    bench.append(
        InstructionSample(
            sample_id="bench-cap-0",
            image_path="fixtures/images/scene0.png",
            domain="natural",
            prompts=boxes("1", "101"),
            prompt_kind="box",
            task="brief-caption",
            turns=(
                Turn("user", "Please provide a brief description of each marked region in the image."),
                Turn("assistant", "a brown dog sleeps on the mat"),
            ),
            source="1",
        )
    )
    bench.append(
        InstructionSample(
            sample_id="bench-cap-1",
            image_path="fixtures/images/scene1.png",
            domain="natural",
            prompts=boxes("2", "202"),
            prompt_kind="box",
            task="brief-caption",
            turns=(
                Turn("user", "Please provide a brief description of each marked region in the image."),
                Turn("assistant", "bright red kites fly over windy hills"),
            ),
            source="2",
        )
    )
    bench.append(
        InstructionSample(
            sample_id="bench-bin-0",
            image_path="fixtures/images/scene0.png",
            domain="natural",
            prompts=(PointPrompt(0.3, 0.4),),
            prompt_kind="point",
            task="binary",
            turns=(
                Turn("user", "Please identify the label of the marked region in the image. Is the region a (dog) or a (cat)?"),
                Turn("assistant", "dog"),
            ),
            source="1",
        )
    )
    bench.append(
        InstructionSample(
            sample_id="bench-bin-1",
            image_path="fixtures/images/scene2.png",
            domain="natural",
            prompts=(PointPrompt(0.6, 0.42),),
            prompt_kind="point",
            task="binary",
            turns=(
                Turn("user", "Please identify the label of the marked region in the image. Is the region a (pen) or a (pencil)?"),
                Turn("assistant", "pen"),
            ),
            source="3",
        )
    )
    (FIXTURES / "benchmark").mkdir(parents=True, exist_ok=True)
    emit_jsonl(bench, str(FIXTURES / "benchmark" / "mini_bench.jsonl"))

    judge_bench = [
        InstructionSample(
            sample_id="bench-qa-0",
            image_path="fixtures/images/scene0.png",
            domain="ocr",
            prompts=boxes("1", "101"),
            prompt_kind="box",
            task="qa",
            turns=(
                Turn("user", "What is <Mark 1> doing?"),
                Turn("assistant", "The dog is sleeping."),
            ),
            source="1",
        ),
        InstructionSample(
            sample_id="bench-qa-1",
            image_path="fixtures/images/scene2.png",
            domain="natural",
            prompts=boxes("3", "301", "302"),
            prompt_kind="box",
            task="reasoning",
            turns=(
                Turn("user", "Why might <Mark 1> be holding <Mark 2>?"),
                Turn("assistant", "She is writing something down."),
            ),
            source="3",
        ),
    ]
    emit_jsonl(judge_bench, str(FIXTURES / "benchmark" / "judge_bench.jsonl"))
    print(f"fixtures written under {FIXTURES}")


if __name__ == "__main__":
    main()
