import json
from pathlib import Path

import pytest

from vptk.geometry import BoxPrompt
from vptk.ingest import (
    AnnotationRecord,
    IoFailure,
    MalformedAnnotation,
    SourceManifest,
    dump_records,
    load_records,
    parse_detection,
    parse_grounding_qa,
    parse_manifest,
    parse_phrase_grounding,
    parse_refexp,
    parse_segmentation,
    validate_record,
)

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures" / "annotations"


def _manifest(kind: str, path: str) -> SourceManifest:
    return SourceManifest(
        format_kind=kind,
        annotation_path=str(FIXTURES / path),
        image_root="fixtures/images",
        domain="natural",
    )


def _write(tmp_path: Path, payload: dict) -> str:
    p = tmp_path / "ann.json"
    p.write_text(json.dumps(payload), encoding="utf-8")
    return str(p)


# --- detection -------------------------------------------------------------------


def test_parse_detection_fixture() -> None:
    records = parse_detection(_manifest("coco-det", "detection.json"))
    assert len(records) == 3
    scene0 = records[0]
    assert [r.label for r in scene0.regions] == ["dog", "bed", "mattress", "pillow"]
    validate_record(scene0)


def test_parse_detection_box_arithmetic(tmp_path) -> None:
    payload = {
        "images": [{"id": 1, "file_name": "x.png", "width": 100, "height": 100}],
        "categories": [{"id": 7, "name": "dog"}],
        "annotations": [{"id": 5, "image_id": 1, "category_id": 7, "bbox": [10, 10, 30, 40]}],
    }
    manifest = SourceManifest("coco-det", _write(tmp_path, payload), "", "natural")
    [record] = parse_detection(manifest)
    region = record.regions[0]
    assert region.box == BoxPrompt(0.1, 0.1, 0.4, 0.5)
    assert region.label == "dog"


def test_parse_detection_unknown_category(tmp_path) -> None:
    payload = {
        "images": [{"id": 1, "file_name": "x.png", "width": 10, "height": 10}],
        "categories": [],
        "annotations": [{"id": 5, "image_id": 1, "category_id": 9, "bbox": [1, 1, 2, 2]}],
    }
    manifest = SourceManifest("coco-det", _write(tmp_path, payload), "", "natural")
    with pytest.raises(MalformedAnnotation):
        parse_detection(manifest)


def test_parse_detection_missing_image(tmp_path) -> None:
    payload = {
        "images": [],
        "categories": [{"id": 7, "name": "dog"}],
        "annotations": [{"id": 5, "image_id": 1, "category_id": 7, "bbox": [1, 1, 2, 2]}],
    }
    manifest = SourceManifest("coco-det", _write(tmp_path, payload), "", "natural")
    with pytest.raises(MalformedAnnotation):
        parse_detection(manifest)


def test_parse_detection_empty_is_success(tmp_path) -> None:
    payload = {"images": [], "categories": [], "annotations": []}
    manifest = SourceManifest("coco-det", _write(tmp_path, payload), "", "natural")
    assert parse_detection(manifest) == []


def test_parse_detection_unreadable_file() -> None:
    manifest = SourceManifest("coco-det", "/nonexistent/foo.json", "", "natural")
    with pytest.raises(IoFailure):
        parse_detection(manifest)


def test_degenerate_box_inflated_and_flagged(tmp_path) -> None:
    payload = {
        "images": [{"id": 1, "file_name": "x.png", "width": 100, "height": 100}],
        "categories": [{"id": 7, "name": "dot"}],
        "annotations": [{"id": 5, "image_id": 1, "category_id": 7, "bbox": [50, 50, 0, 8]}],
    }
    manifest = SourceManifest("coco-det", _write(tmp_path, payload), "", "ocr")
    [record] = parse_detection(manifest)
    region = record.regions[0]
    assert region.inflated
    assert region.box.width >= 0.01 - 1e-12
    assert region.box.height == pytest.approx(0.08)


# --- segmentation ------------------------------------------------------------------


def test_parse_segmentation_fixture_masks_and_boxes() -> None:
    records, skipped = parse_segmentation(_manifest("coco-seg", "segmentation.json"))
    assert skipped == 0
    by_image = {r.image_id: r for r in records}
    dog = by_image["1"].regions[0]
    mask = dog.mask()
    # polygon (8,12)-(30,28): 22 x 16 pixels
    assert mask.count_set() == 22 * 16
    assert dog.box == mask.tight_box()


def test_parse_segmentation_polygon_half_cover(tmp_path) -> None:
    payload = {
        "images": [{"id": 1, "file_name": "x.png", "width": 10, "height": 10}],
        "categories": [{"id": 1, "name": "blob"}],
        "annotations": [
            {"id": 2, "image_id": 1, "category_id": 1, "segmentation": [[0, 0, 5, 0, 5, 10, 0, 10]]}
        ],
    }
    manifest = SourceManifest("coco-seg", _write(tmp_path, payload), "", "natural")
    records, _ = parse_segmentation(manifest)
    region = records[0].regions[0]
    assert region.mask().count_set() == 50
    assert region.box == BoxPrompt(0.0, 0.0, 0.5, 1.0)


def test_parse_segmentation_rle_sum_mismatch(tmp_path) -> None:
    payload = {
        "images": [{"id": 1, "file_name": "x.png", "width": 10, "height": 10}],
        "categories": [{"id": 1, "name": "blob"}],
        "annotations": [
            {"id": 2, "image_id": 1, "category_id": 1, "segmentation": {"counts": [5, 5], "size": [10, 10]}}
        ],
    }
    manifest = SourceManifest("coco-seg", _write(tmp_path, payload), "", "natural")
    with pytest.raises(MalformedAnnotation):
        parse_segmentation(manifest)


def test_parse_segmentation_compressed_skipped_with_count() -> None:
    records, skipped = parse_segmentation(_manifest("coco-seg", "segmentation_compressed.json"))
    assert skipped == 1
    # the remaining polygon entry still parses
    assert len(records) == 1 and len(records[0].regions) == 1


def test_segmentation_derived_box_equals_mask_extremes() -> None:
    records, _ = parse_segmentation(_manifest("coco-seg", "segmentation.json"))
    for record in records:
        for region in record.regions:
            assert region.box == region.mask().tight_box()


# --- referring expressions ------------------------------------------------------------


def test_parse_refexp_fixture() -> None:
    records = parse_refexp(_manifest("refexp", "refexp.json"))
    girl = records[1].regions[0]
    assert girl.expressions == ("the girl holding a pen",)
    dog = records[0].regions[0]
    assert dog.expressions == ("the dog sleeping on the bed", "a light brown dog")


def test_parse_refexp_requires_box_and_expressions(tmp_path) -> None:
    base = {
        "images": [{"id": 1, "file_name": "x.png", "width": 10, "height": 10}],
        "annotations": [{"id": 2, "image_id": 1, "expressions": ["a thing"]}],
    }
    manifest = SourceManifest("refexp", _write(tmp_path, base), "", "natural")
    with pytest.raises(MalformedAnnotation):
        parse_refexp(manifest)
    base["annotations"] = [{"id": 2, "image_id": 1, "bbox": [1, 1, 2, 2], "expressions": []}]
    manifest = SourceManifest("refexp", _write(tmp_path, base), "", "natural")
    with pytest.raises(MalformedAnnotation):
        parse_refexp(manifest)


# --- phrase grounding ----------------------------------------------------------------


def test_parse_phrase_grounding_fixture_links_sorted() -> None:
    records = parse_phrase_grounding(_manifest("phrase-grounding", "phrase_grounding.json"))
    assert len(records) == 3
    first = records[0]
    assert first.caption == "A man throws a ball to a dog"
    assert [l.char_start for l in first.links] == sorted(l.char_start for l in first.links)
    assert len(first.links) == 3
    for link in first.links:
        assert first.caption[link.char_start : link.char_end]


def test_parse_phrase_grounding_reversed_span(tmp_path) -> None:
    payload = {
        "images": [{"id": 1, "file_name": "x.png", "width": 10, "height": 10}],
        "items": [
            {
                "image_id": 1,
                "caption": "hello",
                "regions": [{"id": "r1", "bbox": [1, 1, 2, 2]}],
                "phrases": [{"start": 5, "end": 2, "region_ids": ["r1"]}],
            }
        ],
    }
    manifest = SourceManifest("phrase-grounding", _write(tmp_path, payload), "", "natural")
    with pytest.raises(MalformedAnnotation):
        parse_phrase_grounding(manifest)


def test_parse_phrase_grounding_overlapping_spans(tmp_path) -> None:
    payload = {
        "images": [{"id": 1, "file_name": "x.png", "width": 10, "height": 10}],
        "items": [
            {
                "image_id": 1,
                "caption": "hello world",
                "regions": [{"id": "r1", "bbox": [1, 1, 2, 2]}],
                "phrases": [
                    {"start": 0, "end": 7, "region_ids": ["r1"]},
                    {"start": 4, "end": 11, "region_ids": ["r1"]},
                ],
            }
        ],
    }
    manifest = SourceManifest("phrase-grounding", _write(tmp_path, payload), "", "natural")
    with pytest.raises(MalformedAnnotation):
        parse_phrase_grounding(manifest)


def test_parse_phrase_grounding_multi_box_phrase(tmp_path) -> None:
    payload = {
        "images": [{"id": 1, "file_name": "x.png", "width": 10, "height": 10}],
        "items": [
            {
                "image_id": 1,
                "caption": "two dogs",
                "regions": [
                    {"id": "r1", "bbox": [1, 1, 2, 2]},
                    {"id": "r2", "bbox": [5, 5, 2, 2]},
                ],
                "phrases": [{"start": 0, "end": 8, "region_ids": ["r1", "r2"]}],
            }
        ],
    }
    manifest = SourceManifest("phrase-grounding", _write(tmp_path, payload), "", "natural")
    [record] = parse_phrase_grounding(manifest)
    assert record.links[0].region_ids == ("r1", "r2")


# --- grounding QA --------------------------------------------------------------------


def test_parse_grounding_qa_fixture() -> None:
    records = parse_grounding_qa(_manifest("grounding-qa", "grounding_qa.json"))
    first = records[0]
    assert first.qa[0].region_ids == ("1", "2")
    assert first.qa[1].region_ids == ("2", "1", "3")


def test_parse_grounding_qa_dangling_placeholder(tmp_path) -> None:
    payload = {
        "images": [{"id": 1, "file_name": "x.png", "width": 10, "height": 10}],
        "items": [
            {
                "image_id": 1,
                "regions": [{"id": "1", "bbox": [1, 1, 2, 2]}],
                "qa": [{"question": "what is [R9]?", "answer": "no idea"}],
            }
        ],
    }
    manifest = SourceManifest("grounding-qa", _write(tmp_path, payload), "", "natural")
    with pytest.raises(MalformedAnnotation):
        parse_grounding_qa(manifest)


def test_parse_grounding_qa_answer_side_reference(tmp_path) -> None:
    payload = {
        "images": [{"id": 1, "file_name": "x.png", "width": 10, "height": 10}],
        "items": [
            {
                "image_id": 1,
                "regions": [{"id": "1", "bbox": [1, 1, 2, 2]}],
                "qa": [{"question": "what is here?", "answer": "that is [R1]"}],
            }
        ],
    }
    manifest = SourceManifest("grounding-qa", _write(tmp_path, payload), "", "natural")
    [record] = parse_grounding_qa(manifest)
    assert record.qa[0].region_ids == ("1",)


# --- round trip and determinism ---------------------------------------------------------


def test_records_serialize_deterministically(tmp_path) -> None:
    manifest = _manifest("phrase-grounding", "phrase_grounding.json")
    records = parse_manifest(manifest)
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    dump_records(records, str(p1))
    dump_records(parse_manifest(manifest), str(p2))
    assert p1.read_bytes() == p2.read_bytes()
    loaded = load_records(str(p1))
    assert loaded == records


def test_all_fixture_manifests_parse_and_validate() -> None:
    manifest_list = json.loads((FIXTURES / "manifest.json").read_text())
    assert len(manifest_list) == 5
    for entry in manifest_list:
        entry = {**entry, "annotation_path": str(ROOT / entry["annotation_path"])}
        manifest = SourceManifest.from_json(entry)
        records = parse_manifest(manifest)
        assert records
        for record in records:
            validate_record(record)
