"""Parsers that normalize heterogeneous source annotations into one record
shape.

Five canonical input formats are supported, all JSON: detection and
segmentation files in the de-facto images/annotations/categories layout,
plus project-defined layouts for referring expressions, phrase-grounded
captions, and grounding QA (exotic sources are converted externally).
Every parser is total: it returns records or raises a structured error
naming the offending entry, and a shared `validate_record` pass must
accept everything a parser emits.

Records carry normalized corner boxes everywhere; pixel boxes exist only
inside this module. Degenerate source boxes (zero width or height, as in
point-like OCR annotations) are inflated to a minimum side and flagged
rather than dropped.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import (
    BinaryMask,
    BoxPrompt,
    MalformedRle,
    decode_rle,
    encode_rle,
    rasterize_polygon,
)

logger = logging.getLogger(__name__)

DOMAINS = ("natural", "document", "ocr", "remote-sensing", "screenshot", "multi-panel")
FORMAT_KINDS = ("coco-det", "coco-seg", "refexp", "phrase-grounding", "grounding-qa")

MIN_BOX_SIDE = 0.01


class IoFailure(OSError):
    """Annotation file could not be read or decoded."""


class MalformedAnnotation(ValueError):
    """An entry violates the format contract; message names the entry."""


@dataclass(frozen=True)
class Region:
    """One annotated region: a normalized box plus optional mask, label,
    and referring expressions."""

    region_id: str
    box: BoxPrompt
    label: str | None = None
    expressions: tuple[str, ...] = ()
    mask_counts: tuple[int, ...] | None = None  # column-major RLE of the mask
    mask_size: tuple[int, int] | None = None  # (height, width) pixels
    inflated: bool = False

    def mask(self) -> BinaryMask | None:
        if self.mask_counts is None or self.mask_size is None:
            return None
        return decode_rle(list(self.mask_counts), self.mask_size)


@dataclass(frozen=True)
class PhraseLink:
    """A caption span [char_start, char_end) grounded to one or more regions."""

    char_start: int
    char_end: int
    region_ids: tuple[str, ...]


@dataclass(frozen=True)
class QaEntry:
    """A question/answer pair whose text may reference regions via [R<id>]
    placeholders (optionally followed by literal coordinates)."""

    question: str
    answer: str
    region_ids: tuple[str, ...]


@dataclass(frozen=True)
class AnnotationRecord:
    """Normalized view of one source image and its annotations."""

    image_id: str
    image_path: str
    image_size: tuple[int, int]  # (width, height) pixels
    domain: str
    regions: tuple[Region, ...] = ()
    caption: str | None = None
    links: tuple[PhraseLink, ...] = ()
    qa: tuple[QaEntry, ...] = ()

    def region_by_id(self, region_id: str) -> Region:
        for r in self.regions:
            if r.region_id == region_id:
                return r
        raise KeyError(region_id)

    def to_json(self) -> dict:
        out: dict = {
            "image_id": self.image_id,
            "image_path": self.image_path,
            "image_size": list(self.image_size),
            "domain": self.domain,
            "regions": [
                {
                    "region_id": r.region_id,
                    "box": [r.box.x1, r.box.y1, r.box.x2, r.box.y2],
                    "label": r.label,
                    "expressions": list(r.expressions),
                    "mask_counts": list(r.mask_counts) if r.mask_counts is not None else None,
                    "mask_size": list(r.mask_size) if r.mask_size is not None else None,
                    "inflated": r.inflated,
                }
                for r in self.regions
            ],
            "caption": self.caption,
            "links": [
                {"char_start": l.char_start, "char_end": l.char_end, "region_ids": list(l.region_ids)}
                for l in self.links
            ],
            "qa": [
                {"question": q.question, "answer": q.answer, "region_ids": list(q.region_ids)}
                for q in self.qa
            ],
        }
        return out

    @staticmethod
    def from_json(obj: dict) -> "AnnotationRecord":
        regions = tuple(
            Region(
                region_id=r["region_id"],
                box=BoxPrompt(*r["box"]),
                label=r.get("label"),
                expressions=tuple(r.get("expressions") or ()),
                mask_counts=tuple(r["mask_counts"]) if r.get("mask_counts") is not None else None,
                mask_size=tuple(r["mask_size"]) if r.get("mask_size") is not None else None,
                inflated=bool(r.get("inflated", False)),
            )
            for r in obj["regions"]
        )
        links = tuple(
            PhraseLink(l["char_start"], l["char_end"], tuple(l["region_ids"]))
            for l in obj.get("links") or ()
        )
        qa = tuple(
            QaEntry(q["question"], q["answer"], tuple(q["region_ids"]))
            for q in obj.get("qa") or ()
        )
        return AnnotationRecord(
            image_id=obj["image_id"],
            image_path=obj["image_path"],
            image_size=tuple(obj["image_size"]),
            domain=obj["domain"],
            regions=regions,
            caption=obj.get("caption"),
            links=links,
            qa=qa,
        )


@dataclass(frozen=True)
class SourceManifest:
    """Where one source dataset lives and how to read it."""

    format_kind: str
    annotation_path: str
    image_root: str
    domain: str

    def __post_init__(self) -> None:
        if self.format_kind not in FORMAT_KINDS:
            raise ValueError(f"format_kind {self.format_kind!r} not one of {FORMAT_KINDS}")
        if self.domain not in DOMAINS:
            raise ValueError(f"domain {self.domain!r} not one of {DOMAINS}")

    @staticmethod
    def from_json(obj: dict) -> "SourceManifest":
        return SourceManifest(
            format_kind=obj["format_kind"],
            annotation_path=obj["annotation_path"],
            image_root=obj.get("image_root", ""),
            domain=obj["domain"],
        )


def validate_record(record: AnnotationRecord) -> None:
    """Invariant check every parser output must pass."""
    ids = [r.region_id for r in record.regions]
    if len(set(ids)) != len(ids):
        raise MalformedAnnotation(f"image {record.image_id}: duplicate region ids")
    known = set(ids)
    if record.links and record.caption is None:
        raise MalformedAnnotation(f"image {record.image_id}: links without caption")
    prev_end = -1
    for link in record.links:
        if not (0 <= link.char_start < link.char_end <= len(record.caption or "")):
            raise MalformedAnnotation(
                f"image {record.image_id}: span ({link.char_start}, {link.char_end}) outside caption"
            )
        if link.char_start < prev_end:
            raise MalformedAnnotation(f"image {record.image_id}: overlapping phrase spans")
        prev_end = link.char_end
        for rid in link.region_ids:
            if rid not in known:
                raise MalformedAnnotation(f"image {record.image_id}: link to unknown region {rid}")
    for entry in record.qa:
        for rid in entry.region_ids:
            if rid not in known:
                raise MalformedAnnotation(f"image {record.image_id}: qa reference to unknown region {rid}")


# --- shared pieces ------------------------------------------------------------------


def _load_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise IoFailure(f"cannot parse {path}: {exc}") from exc


def _image_index(doc: dict, manifest: SourceManifest) -> dict:
    images = {}
    for entry in doc.get("images", []):
        images[entry["id"]] = {
            "image_id": str(entry["id"]),
            "path": str(Path(manifest.image_root) / entry["file_name"]),
            "size": (int(entry["width"]), int(entry["height"])),
        }
    return images


def _norm_xywh(bbox: list[float], size: tuple[int, int], where: str) -> tuple[BoxPrompt, bool]:
    """Pixel (x, y, w, h) to a normalized corner box; inflates zero sides."""
    w_img, h_img = size
    if w_img <= 0 or h_img <= 0:
        raise MalformedAnnotation(f"{where}: image size {size} unusable")
    x, y, w, h = (float(v) for v in bbox)
    if w < 0 or h < 0 or x < 0 or y < 0 or x + w > w_img or y + h > h_img:
        raise MalformedAnnotation(f"{where}: bbox {bbox} outside {w_img}x{h_img} image")
    x1, y1, x2, y2 = x / w_img, y / h_img, (x + w) / w_img, (y + h) / h_img
    inflated = False
    if x2 <= x1:
        cx = min(max((x1 + x2) / 2, MIN_BOX_SIDE / 2), 1 - MIN_BOX_SIDE / 2)
        x1, x2 = cx - MIN_BOX_SIDE / 2, cx + MIN_BOX_SIDE / 2
        inflated = True
    if y2 <= y1:
        cy = min(max((y1 + y2) / 2, MIN_BOX_SIDE / 2), 1 - MIN_BOX_SIDE / 2)
        y1, y2 = cy - MIN_BOX_SIDE / 2, cy + MIN_BOX_SIDE / 2
        inflated = True
    return BoxPrompt(x1, y1, x2, y2), inflated


def _group_by_image(annotations: list[dict]) -> dict:
    grouped: dict = {}
    for i, ann in enumerate(annotations):
        grouped.setdefault(ann.get("image_id"), []).append((i, ann))
    return grouped


# --- parsers ------------------------------------------------------------------------


def parse_detection(manifest: SourceManifest) -> list[AnnotationRecord]:
    """Detection boxes: one record per image, labels from category ids."""
    doc = _load_json(manifest.annotation_path)
    images = _image_index(doc, manifest)
    categories = {c["id"]: str(c["name"]) for c in doc.get("categories", [])}
    records = []
    for image_id, entries in _group_by_image(doc.get("annotations", [])).items():
        if image_id not in images:
            idx = entries[0][0]
            raise MalformedAnnotation(f"annotation {idx}: unknown image id {image_id}")
        info = images[image_id]
        regions = []
        for idx, ann in entries:
            if ann.get("category_id") not in categories:
                raise MalformedAnnotation(
                    f"annotation {idx}: unknown category id {ann.get('category_id')}"
                )
            box, inflated = _norm_xywh(ann["bbox"], info["size"], f"annotation {idx}")
            regions.append(
                Region(
                    region_id=str(ann.get("id", idx)),
                    box=box,
                    label=categories[ann["category_id"]],
                    inflated=inflated,
                )
            )
        record = AnnotationRecord(
            image_id=info["image_id"],
            image_path=info["path"],
            image_size=info["size"],
            domain=manifest.domain,
            regions=tuple(regions),
        )
        validate_record(record)
        records.append(record)
    return records


def parse_segmentation(manifest: SourceManifest) -> tuple[list[AnnotationRecord], int]:
    """Segmentation masks (polygons or uncompressed RLE) with derived boxes.

    Compressed string-packed RLE entries are skipped; the second return
    value counts the skips (each also logs a warning).
    """
    doc = _load_json(manifest.annotation_path)
    images = _image_index(doc, manifest)
    categories = {c["id"]: str(c["name"]) for c in doc.get("categories", [])}
    records = []
    skipped = 0
    for image_id, entries in _group_by_image(doc.get("annotations", [])).items():
        if image_id not in images:
            idx = entries[0][0]
            raise MalformedAnnotation(f"annotation {idx}: unknown image id {image_id}")
        info = images[image_id]
        w_img, h_img = info["size"]
        regions = []
        for idx, ann in entries:
            seg = ann.get("segmentation")
            if isinstance(seg, dict):
                counts = seg.get("counts")
                if isinstance(counts, str):
                    logger.warning("annotation %d: compressed RLE skipped", idx)
                    skipped += 1
                    continue
                declared_h, declared_w = seg.get("size", (h_img, w_img))
                if (declared_h, declared_w) != (h_img, w_img):
                    raise MalformedAnnotation(
                        f"annotation {idx}: RLE size {seg.get('size')} != image size"
                    )
                try:
                    mask = decode_rle(counts, (h_img, w_img))
                except MalformedRle as exc:
                    raise MalformedAnnotation(f"annotation {idx}: {exc}") from exc
            elif isinstance(seg, list):
                bits = np.zeros((h_img, w_img), dtype=bool)
                for poly in seg:
                    pts = [(poly[i], poly[i + 1]) for i in range(0, len(poly), 2)]
                    bits |= rasterize_polygon(pts, (h_img, w_img)).bits
                mask = BinaryMask(width=w_img, height=h_img, bits=bits)
            else:
                raise MalformedAnnotation(f"annotation {idx}: unsupported segmentation")
            if mask.count_set() == 0:
                raise MalformedAnnotation(f"annotation {idx}: empty mask")
            label = categories.get(ann.get("category_id"))
            if ann.get("category_id") is not None and label is None:
                raise MalformedAnnotation(
                    f"annotation {idx}: unknown category id {ann.get('category_id')}"
                )
            regions.append(
                Region(
                    region_id=str(ann.get("id", idx)),
                    box=mask.tight_box(),
                    label=label,
                    mask_counts=tuple(encode_rle(mask)),
                    mask_size=(h_img, w_img),
                )
            )
        record = AnnotationRecord(
            image_id=info["image_id"],
            image_path=info["path"],
            image_size=info["size"],
            domain=manifest.domain,
            regions=tuple(regions),
        )
        validate_record(record)
        records.append(record)
    return records, skipped


def parse_refexp(manifest: SourceManifest) -> list[AnnotationRecord]:
    """Referring expressions: every region carries >= 1 expression."""
    doc = _load_json(manifest.annotation_path)
    images = _image_index(doc, manifest)
    records = []
    for image_id, entries in _group_by_image(doc.get("annotations", [])).items():
        if image_id not in images:
            idx = entries[0][0]
            raise MalformedAnnotation(f"annotation {idx}: unknown image id {image_id}")
        info = images[image_id]
        regions = []
        for idx, ann in entries:
            if "bbox" not in ann:
                raise MalformedAnnotation(f"annotation {idx}: missing box")
            expressions = tuple(str(e) for e in ann.get("expressions", []))
            if not expressions:
                raise MalformedAnnotation(f"annotation {idx}: no expressions")
            box, inflated = _norm_xywh(ann["bbox"], info["size"], f"annotation {idx}")
            regions.append(
                Region(
                    region_id=str(ann.get("id", idx)),
                    box=box,
                    label=ann.get("label"),
                    expressions=expressions,
                    inflated=inflated,
                )
            )
        record = AnnotationRecord(
            image_id=info["image_id"],
            image_path=info["path"],
            image_size=info["size"],
            domain=manifest.domain,
            regions=tuple(regions),
        )
        validate_record(record)
        records.append(record)
    return records


def parse_phrase_grounding(manifest: SourceManifest) -> list[AnnotationRecord]:
    """Captions with character-span phrase links to regions."""
    doc = _load_json(manifest.annotation_path)
    images = _image_index(doc, manifest)
    records = []
    for i, item in enumerate(doc.get("items", [])):
        image_id = item.get("image_id")
        if image_id not in images:
            raise MalformedAnnotation(f"item {i}: unknown image id {image_id}")
        info = images[image_id]
        caption = str(item["caption"])
        regions = []
        for j, reg in enumerate(item.get("regions", [])):
            box, inflated = _norm_xywh(reg["bbox"], info["size"], f"item {i} region {j}")
            regions.append(
                Region(
                    region_id=str(reg["id"]),
                    box=box,
                    label=reg.get("label"),
                    inflated=inflated,
                )
            )
        links = []
        for j, phrase in enumerate(item.get("phrases", [])):
            start, end = int(phrase["start"]), int(phrase["end"])
            if not (0 <= start < end <= len(caption)):
                raise MalformedAnnotation(f"item {i} phrase {j}: span ({start}, {end}) invalid")
            rids = tuple(str(r) for r in phrase.get("region_ids", []))
            if not rids:
                raise MalformedAnnotation(f"item {i} phrase {j}: no linked regions")
            links.append(PhraseLink(start, end, rids))
        links.sort(key=lambda l: l.char_start)
        for prev, cur in zip(links, links[1:]):
            if cur.char_start < prev.char_end:
                raise MalformedAnnotation(f"item {i}: overlapping phrase spans")
        record = AnnotationRecord(
            image_id=info["image_id"],
            image_path=info["path"],
            image_size=info["size"],
            domain=manifest.domain,
            regions=tuple(regions),
            caption=caption,
            links=tuple(links),
        )
        validate_record(record)
        records.append(record)
    return records


_PLACEHOLDER_CHECK = re.compile(r"\[R([A-Za-z0-9_-]+)\]")


def parse_grounding_qa(manifest: SourceManifest) -> list[AnnotationRecord]:
    """QA pairs whose text references regions via [R<id>] placeholders."""
    doc = _load_json(manifest.annotation_path)
    images = _image_index(doc, manifest)
    records = []
    for i, item in enumerate(doc.get("items", [])):
        image_id = item.get("image_id")
        if image_id not in images:
            raise MalformedAnnotation(f"item {i}: unknown image id {image_id}")
        info = images[image_id]
        regions = []
        for j, reg in enumerate(item.get("regions", [])):
            box, inflated = _norm_xywh(reg["bbox"], info["size"], f"item {i} region {j}")
            regions.append(
                Region(region_id=str(reg["id"]), box=box, label=reg.get("label"), inflated=inflated)
            )
        known = {r.region_id for r in regions}
        qa_entries = []
        for j, entry in enumerate(item.get("qa", [])):
            question, answer = str(entry["question"]), str(entry["answer"])
            referenced = []
            for text in (question, answer):
                for match in _PLACEHOLDER_CHECK.finditer(text):
                    rid = match.group(1)
                    if rid not in known:
                        raise MalformedAnnotation(
                            f"item {i} qa {j}: unresolvable placeholder [R{rid}]"
                        )
                    if rid not in referenced:
                        referenced.append(rid)
            qa_entries.append(QaEntry(question, answer, tuple(referenced)))
        record = AnnotationRecord(
            image_id=info["image_id"],
            image_path=info["path"],
            image_size=info["size"],
            domain=manifest.domain,
            regions=tuple(regions),
            qa=tuple(qa_entries),
        )
        validate_record(record)
        records.append(record)
    return records


def parse_manifest(manifest: SourceManifest) -> list[AnnotationRecord]:
    """Dispatch on format kind; segmentation skip counts are logged only."""
    if manifest.format_kind == "coco-det":
        return parse_detection(manifest)
    if manifest.format_kind == "coco-seg":
        return parse_segmentation(manifest)[0]
    if manifest.format_kind == "refexp":
        return parse_refexp(manifest)
    if manifest.format_kind == "phrase-grounding":
        return parse_phrase_grounding(manifest)
    return parse_grounding_qa(manifest)


# --- record JSONL ----------------------------------------------------------------------


def dump_records(records: list[AnnotationRecord], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record.to_json(), ensure_ascii=False, separators=(",", ":")))
            f.write("\n")


def load_records(path: str) -> list[AnnotationRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                records.append(AnnotationRecord.from_json(json.loads(line)))
    return records
