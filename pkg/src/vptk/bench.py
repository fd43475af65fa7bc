"""End-to-end benchmark evaluation.

Pairs a benchmark JSONL (instruction samples) with a model-predictions
JSONL, dispatches the right metric per task tag, and aggregates scores by
(domain, prompt kind, task) cells. Word metrics and binary accuracy run
offline; QA/reasoning/relationship tasks are graded by the judge client
against the set-of-marks rendering of each sample, or left unscored when
judging is disabled.

Accounting is conservative: every benchmark sample lands in exactly one
of scored / missing-prediction / unscored buckets, and each cell keeps
its per-item values so aggregate means stay recomputable. Reports embed
the benchmark's content hash so scores can never be attributed to a
mutated benchmark file.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .construct import InstructionSample, load_jsonl
from .geometry import VisualPromptSet
from .judge import JudgeClient
from .metrics import (
    DegenerateIdf,
    Embedder,
    EmptyText,
    HashedBagEmbedder,
    binary_choice_accuracy,
    cider,
    meteor_lite,
    semantic_iou,
    semantic_similarity,
)
from .som_render import render_marks, style_for_domain

CAPTION_TASKS = ("multi-target-caption", "brief-caption", "detailed-caption")
JUDGE_TASKS = ("qa", "reasoning", "inter-relationship")


class UnknownTask(ValueError):
    """Benchmark sample carries a task tag with no metric mapping."""


class NoOverlap(ValueError):
    """Predictions and benchmark share no sample ids."""


class Misaligned(ValueError):
    """Prediction ids violate the one-per-sample / must-exist contract."""


_BINARY_Q = re.compile(r"\(([^()]+)\)\s+or\s+an?\s+\(([^()]+)\)")


@dataclass(frozen=True)
class PredictionRecord:
    sample_id: str
    model: str
    response: str


def load_predictions(path: str) -> dict[str, PredictionRecord]:
    preds: dict[str, PredictionRecord] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            obj = json.loads(line)
            rec = PredictionRecord(
                sample_id=obj["sample_id"],
                model=obj.get("model", "unknown"),
                response=obj["response"],
            )
            if rec.sample_id in preds:
                raise Misaligned(f"duplicate prediction for {rec.sample_id}")
            preds[rec.sample_id] = rec
    return preds


def dump_predictions(preds: list[PredictionRecord], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for p in preds:
            f.write(
                json.dumps(
                    {"sample_id": p.sample_id, "model": p.model, "response": p.response},
                    ensure_ascii=False,
                    separators=(",", ":"),
                )
            )
            f.write("\n")


def echo_predictions(samples: list[InstructionSample], model: str = "echo") -> list[PredictionRecord]:
    """The ceiling predictor: every response equals the ground-truth answer."""
    return [
        PredictionRecord(sample_id=s.sample_id, model=model, response=_ground_truth(s))
        for s in samples
    ]


def _ground_truth(sample: InstructionSample) -> str:
    return "\n".join(t.text for t in sample.turns if t.role == "assistant")


def _question_text(sample: InstructionSample) -> str:
    return "\n".join(t.text for t in sample.turns if t.role == "user")


@dataclass
class EvalConfig:
    model_name: str = "unknown"
    no_judge: bool = False
    judge: JudgeClient | None = None
    embedder: Embedder | None = None
    image_root: str = "."  # sample image paths resolve against this


@dataclass
class CellResult:
    """Scores for one (domain, prompt_kind, task) cell."""

    metrics: dict[str, dict] = field(default_factory=dict)
    # metric name -> {"value": float, "support": int, "per_item": {id: float}}
    error_counts: dict[str, int] = field(default_factory=dict)

    def note_error(self, kind: str) -> None:
        self.error_counts[kind] = self.error_counts.get(kind, 0) + 1


@dataclass
class EvalReport:
    model: str
    benchmark_hash: str
    total_samples: int
    cells: dict[tuple[str, str, str], CellResult]
    missing_ids: list[str]
    unscored_ids: list[str]
    config_snapshot: dict

    def scored_ids(self) -> set[str]:
        ids: set[str] = set()
        for cell in self.cells.values():
            for metric in cell.metrics.values():
                ids.update(metric["per_item"].keys())
        return ids

    def conserves(self) -> bool:
        counted = len(self.scored_ids()) + len(self.missing_ids) + len(self.unscored_ids)
        return counted == self.total_samples

    def to_json(self) -> dict:
        return {
            "model": self.model,
            "benchmark_hash": self.benchmark_hash,
            "total_samples": self.total_samples,
            "cells": [
                {
                    "domain": d,
                    "prompt_kind": pk,
                    "task": t,
                    "metrics": cell.metrics,
                    "error_counts": cell.error_counts,
                }
                for (d, pk, t), cell in sorted(self.cells.items())
            ],
            "missing_ids": sorted(self.missing_ids),
            "unscored_ids": sorted(self.unscored_ids),
            "config_snapshot": self.config_snapshot,
        }

    @staticmethod
    def from_json(obj: dict) -> "EvalReport":
        cells = {}
        for entry in obj["cells"]:
            cells[(entry["domain"], entry["prompt_kind"], entry["task"])] = CellResult(
                metrics=entry["metrics"], error_counts=entry["error_counts"]
            )
        return EvalReport(
            model=obj["model"],
            benchmark_hash=obj["benchmark_hash"],
            total_samples=obj["total_samples"],
            cells=cells,
            missing_ids=list(obj["missing_ids"]),
            unscored_ids=list(obj["unscored_ids"]),
            config_snapshot=obj["config_snapshot"],
        )


def _mean(values: dict[str, float]) -> float:
    return sum(values.values()) / len(values)


def run_eval(benchmark_path: str, predictions_path: str, cfg: EvalConfig) -> EvalReport:
    """Score a predictions file against a benchmark file.

    Missing predictions are enumerated, never silently dropped; judge-task
    samples become `unscored_ids` when judging is disabled.
    """
    bench = load_jsonl(benchmark_path)
    bench_hash = hashlib.sha256(Path(benchmark_path).read_bytes()).hexdigest()
    preds = load_predictions(predictions_path)
    bench_ids = {s.sample_id for s in bench}
    unknown = sorted(set(preds) - bench_ids)
    if unknown:
        raise Misaligned(f"predictions for ids not in the benchmark: {unknown[:5]}")
    if bench and not (set(preds) & bench_ids):
        raise NoOverlap("no prediction matches any benchmark sample id")

    for sample in bench:
        if sample.task not in ("stage1-label", "binary") + CAPTION_TASKS + JUDGE_TASKS:
            raise UnknownTask(sample.task)

    embedder = cfg.embedder or HashedBagEmbedder()
    cells: dict[tuple[str, str, str], CellResult] = {}
    missing: list[str] = []
    unscored: list[str] = []

    def cell_for(sample: InstructionSample) -> CellResult:
        key = (sample.domain, sample.prompt_kind, sample.task)
        return cells.setdefault(key, CellResult())

    # group caption samples per cell for corpus-level consensus scoring
    caption_groups: dict[tuple[str, str, str], list[InstructionSample]] = {}

    for sample in bench:
        if sample.sample_id not in preds:
            missing.append(sample.sample_id)
            continue
        if sample.task in JUDGE_TASKS and (cfg.no_judge or cfg.judge is None):
            unscored.append(sample.sample_id)
            continue
        cell = cell_for(sample)
        response = preds[sample.sample_id].response
        gt = _ground_truth(sample)

        if sample.task == "stage1-label":
            try:
                iou = semantic_iou(response, gt)
                sim = semantic_similarity(response, gt, embedder)
            except EmptyText:
                cell.note_error("empty_text")
                continue
            _add_item(cell, "semantic_iou", sample.sample_id, iou)
            _add_item(cell, "semantic_similarity", sample.sample_id, sim)
        elif sample.task in CAPTION_TASKS:
            caption_groups.setdefault(
                (sample.domain, sample.prompt_kind, sample.task), []
            ).append(sample)
        elif sample.task == "binary":
            match = _BINARY_Q.search(_question_text(sample))
            if not match:
                cell.note_error("unparseable_binary_question")
                continue
            class_a, class_b = match.group(1), match.group(2)
            accuracy, _ = binary_choice_accuracy([(response, class_a, class_b, gt.strip())])
            _add_item(cell, "accuracy", sample.sample_id, accuracy)
        else:  # judge tasks with a live judge
            overlay = render_marks(
                str(Path(cfg.image_root) / sample.image_path),
                VisualPromptSet(sample.prompts),
                style_for_domain(sample.domain, sample.prompt_kind),
            )
            score = cfg.judge.score_response(
                overlay.png_bytes, _question_text(sample), response, reference=gt
            )
            _add_item(cell, "judge_score_0_100", sample.sample_id, 10.0 * score.score)

    for key, group in caption_groups.items():
        cell = cells.setdefault(key, CellResult())
        candidates = {s.sample_id: preds[s.sample_id].response for s in group}
        references = {s.sample_id: [_ground_truth(s)] for s in group}
        for sample in group:
            try:
                m = meteor_lite(candidates[sample.sample_id], references[sample.sample_id])
            except EmptyText:
                cell.note_error("empty_text")
                candidates.pop(sample.sample_id)
                references.pop(sample.sample_id)
                continue
            _add_item(cell, "meteor_lite", sample.sample_id, m)
        if candidates:
            try:
                _, per_item = cider(candidates, references)
                for sid, value in per_item.items():
                    _add_item(cell, "cider", sid, value)
            except DegenerateIdf:
                cell.note_error("degenerate_idf")

    for cell in cells.values():
        for name, metric in cell.metrics.items():
            metric["value"] = _mean(metric["per_item"])
            metric["support"] = len(metric["per_item"])

    return EvalReport(
        model=cfg.model_name,
        benchmark_hash=bench_hash,
        total_samples=len(bench),
        cells=cells,
        missing_ids=missing,
        unscored_ids=unscored,
        config_snapshot={
            "no_judge": cfg.no_judge,
            "embedder": type(embedder).__name__,
            "image_root": cfg.image_root,
        },
    )


def _add_item(cell: CellResult, metric: str, sample_id: str, value: float) -> None:
    entry = cell.metrics.setdefault(metric, {"value": 0.0, "support": 0, "per_item": {}})
    entry["per_item"][sample_id] = value


# --- rendering -------------------------------------------------------------------------


def render_report(report: EvalReport, format: str = "structured") -> bytes:
    """Serialize a report: canonical JSON, or a domain-by-prompt-kind grid."""
    if format == "structured":
        return (
            json.dumps(report.to_json(), ensure_ascii=False, sort_keys=True, indent=1) + "\n"
        ).encode("utf-8")
    if format != "table-text":
        raise ValueError(f"unknown report format {format!r}")

    domains = sorted({d for d, _, _ in report.cells})
    kinds = ("box", "point")
    rows: dict[str, dict[tuple[str, str], float]] = {}
    for (domain, kind, task), cell in sorted(report.cells.items()):
        for metric, entry in sorted(cell.metrics.items()):
            rows.setdefault(f"{task}/{metric}", {})[(domain, kind)] = entry["value"]

    label_width = max([len(r) for r in rows] + [12]) + 2
    col_width = 9
    lines = []
    header1 = " " * label_width + "".join(d.center(col_width * 2) + "|" for d in domains)
    header2 = " " * label_width + "".join(
        "".join(k.rjust(col_width) for k in kinds) + "|" for _ in domains
    )
    lines.append(header1.rstrip("|"))
    lines.append(header2.rstrip("|"))
    lines.append("-" * len(header2))
    for label, values in sorted(rows.items()):
        row = label.ljust(label_width)
        for domain in domains:
            for kind in kinds:
                v = values.get((domain, kind))
                row += (f"{v:.3f}" if v is not None else "-").rjust(col_width)
            row += "|"
        lines.append(row.rstrip("|"))
    lines.append("")
    lines.append(f"model: {report.model}")
    lines.append(f"benchmark: sha256:{report.benchmark_hash[:16]}")
    lines.append(
        f"samples: {report.total_samples} total, {len(report.scored_ids())} scored, "
        f"{len(report.missing_ids)} missing, {len(report.unscored_ids)} unscored"
    )
    return ("\n".join(lines) + "\n").encode("utf-8")
