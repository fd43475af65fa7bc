"""Acceptance suite: one test per release criterion, each printing its own
pass line (run with -s or -v to watch them land). Tolerances are pinned
here and nowhere else."""

import io
import json
import math
import re
import threading
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from mock_judge import MockJudgeServer
from vptk.augment import AugmentConfig, jitter_box
from vptk.bench import EvalConfig, dump_predictions, echo_predictions, run_eval
from vptk.construct import (
    COORD_LITERAL,
    InstructionSample,
    Stage1Config,
    Turn,
    assemble_gpt4v_prompt,
    build_stage1,
    emit_jsonl,
    invert_grounding,
    load_jsonl,
    parse_gpt4v_response,
    reconstruct_qa,
)
from vptk.curation import CurationDecision, CurationStore
from vptk.encoder import (
    EncoderConfig,
    embed_prompts,
    grad_check,
    init_params,
    load_params,
    save_params,
)
from vptk.geometry import BoxPrompt, PointPrompt, VisualPromptSet
from vptk.ingest import SourceManifest, parse_detection, parse_grounding_qa, parse_phrase_grounding
from vptk.judge import JudgeClient, JudgeConfig, UnscorableResponse, score_pair_ratio
from vptk.metrics import binary_choice_accuracy, cider, meteor_lite, semantic_iou
from vptk.som_render import render_marks

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"
DATA = Path(__file__).resolve().parent / "data"


def _passed(name: str) -> None:
    print(f"[ACCEPT] {name}: PASS")


def _manifest(kind: str, name: str) -> SourceManifest:
    return SourceManifest(
        format_kind=kind,
        annotation_path=str(FIXTURES / "annotations" / name),
        image_root="fixtures/images",
        domain="natural",
    )


# 1. Encoder gradient check -----------------------------------------------------------


def test_accept_encoder_gradient_check() -> None:
    start = time.monotonic()
    minimal = EncoderConfig(num_frequencies=1, hidden_dim=2, llm_dim=2)
    worst = 0.0
    for seed in range(10):
        worst = max(worst, grad_check(EncoderConfig(), seed=seed))
        worst = max(worst, grad_check(minimal, seed=seed))
    elapsed = time.monotonic() - start
    assert worst < 1e-4, f"max relative error {worst:.3e}"
    assert elapsed < 60.0, f"took {elapsed:.1f}s"
    _passed(f"encoder gradient check (err={worst:.2e}, {elapsed:.1f}s)")


# 2. Encoder contracts ------------------------------------------------------------------


def test_accept_encoder_contracts(tmp_path) -> None:
    cfg = EncoderConfig(num_frequencies=8, hidden_dim=24, llm_dim=32, capacity=16, rng_seed=3)
    params = init_params(cfg)

    def prompts_of(n: int) -> VisualPromptSet:
        items = []
        for i in range(n):
            if i % 2 == 0:
                items.append(PointPrompt(0.05 + 0.05 * i, 0.9 - 0.04 * i))
            else:
                items.append(BoxPrompt(0.02 * i, 0.01 * i, 0.5 + 0.02 * i, 0.55 + 0.02 * i))
        return VisualPromptSet(tuple(items))

    for n in range(1, cfg.capacity + 1):
        batch = embed_prompts(prompts_of(n), params)
        assert batch.tokens.shape == (cfg.capacity + 2, cfg.llm_dim)
        invalid = batch.tokens[1 + n : cfg.capacity + 1]
        for row in invalid:
            assert np.array_equal(row, invalid[0]) if len(invalid) else True

    base = prompts_of(3)
    perm = VisualPromptSet((base[1], base[2], base[0]))
    a = embed_prompts(base, params).tokens
    b = embed_prompts(perm, params).tokens
    assert np.array_equal(b[1], a[2]) and np.array_equal(b[2], a[3]) and np.array_equal(b[3], a[1])
    untouched = np.ones(cfg.capacity + 2, dtype=bool)
    untouched[[1, 2, 3]] = False
    assert np.array_equal(a[untouched], b[untouched])

    path = tmp_path / "params.vpe"
    save_params(params, str(path))
    assert load_params(str(path)).equals(params)
    _passed("encoder contracts (shape, padding, permutation, params round-trip)")


# 3. Augmentation statistics ---------------------------------------------------------------


def test_accept_augmentation_statistics() -> None:
    box = BoxPrompt(0.2, 0.2, 0.6, 0.6)
    cfg = AugmentConfig(sigma_scale=0.1)

    assert jitter_box(box, AugmentConfig(sigma_scale=0.0), seed=99) == box

    n = 10_000
    dx = np.empty(n)
    dy = np.empty(n)
    for seed in range(n):
        out = jitter_box(box, cfg, seed)
        assert 0.0 <= out.x1 < out.x2 <= 1.0 and 0.0 <= out.y1 < out.y2 <= 1.0
        cx, cy = out.center
        dx[seed] = cx - 0.4
        dy[seed] = cy - 0.4
    assert abs(dx.mean()) < 0.004 and abs(dy.mean()) < 0.004
    sigma_w = 0.1 * box.width
    assert abs(dx.std(ddof=1) - sigma_w) / sigma_w < 0.05

    golden = jitter_box(box, cfg, seed=42)
    assert (golden.x1, golden.y1, golden.x2, golden.y2) == (
        0.244306953763268,
        0.24212460259345978,
        0.6262729587345135,
        0.6689532602295568,
    )
    _passed(
        f"augmentation statistics (mean={dx.mean():+.4f}, std={dx.std(ddof=1):.4f} vs {sigma_w})"
    )


# 4. Pipeline correctness on the bundled fixtures -----------------------------------------------


def test_accept_pipeline_correctness(tmp_path) -> None:
    grounded = parse_phrase_grounding(_manifest("phrase-grounding", "phrase_grounding.json"))
    assert len(grounded) == 3
    for record in grounded:
        sample = invert_grounding(record)
        n_links = len(record.links)
        assert len(sample.prompts) == n_links  # single-box links in the bundled fixtures
        for i, link in enumerate(record.links):
            assert sample.prompts[i] == record.region_by_id(link.region_ids[0]).box
        answer = sample.turns[-1].text
        positions = [answer.find(f"(Mark {k})") for k in range(1, n_links + 1)]
        assert all(p >= 0 for p in positions) and positions == sorted(positions)

    qa_records = parse_grounding_qa(_manifest("grounding-qa", "grounding_qa.json"))
    qa_samples = []
    for record in qa_records:
        qa_samples.extend(reconstruct_qa(record))
    assert qa_samples
    for sample in qa_samples:
        for turn in sample.turns:
            assert not COORD_LITERAL.search(turn.text)

    def full_run(path: Path) -> None:
        det = parse_detection(_manifest("coco-det", "detection.json"))
        samples = []
        stage1, _ = build_stage1(det, "box", Stage1Config(augment=True), seed=2024)
        samples += stage1
        samples += [invert_grounding(r) for r in grounded]
        for record in qa_records:
            samples += reconstruct_qa(record)
        emit_jsonl(samples, str(path))

    p1, p2 = tmp_path / "run1.jsonl", tmp_path / "run2.jsonl"
    full_run(p1)
    full_run(p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert load_jsonl(str(p1)) == load_jsonl(str(p2))
    _passed("pipeline correctness (inversion order, coord sweep, round-trip, determinism)")


# 5. Template fidelity -----------------------------------------------------------------------


def test_accept_template_fidelity() -> None:
    det = parse_detection(_manifest("coco-det", "detection.json"))
    scene0 = det[0]
    text, plan = assemble_gpt4v_prompt(scene0, "natural")
    assert "<Mark 1>: dog\n<Mark 2>: bed\n<Mark 3>: mattress\n<Mark 4>: pillow" in text
    assert [e.mark_id for e in plan] == [1, 2, 3, 4]

    worked = (DATA / "gpt4v_response_natural.txt").read_text(encoding="utf-8")
    parsed = parse_gpt4v_response(
        worked, ["per_mark", "per_mark", "relationship", "qa"], n_marks=4
    )
    assert len(parsed.per_mark[1]) == 4
    assert parsed.per_mark[1][1] == "Light brown dog sleeping peacefully on a bed."
    assert len(parsed.per_mark[2]) == 4
    assert len(parsed.relationships[3]) == 4
    assert len(parsed.qa_pairs[4]) == 4
    assert "What color is the dog" in parsed.qa_pairs[4][0][0]
    _passed("template fidelity (category block verbatim, worked response 4/4/4/4)")


# 6. Metric oracles ---------------------------------------------------------------------------


def test_accept_metric_oracles() -> None:
    from test_metrics import TOY_CORPUS_CANDS, TOY_CORPUS_REFS, _oracle_cider

    _, per_item = cider(TOY_CORPUS_CANDS, TOY_CORPUS_REFS)
    oracle = _oracle_cider(TOY_CORPUS_CANDS, TOY_CORPUS_REFS)
    for cid in oracle:
        assert per_item[cid] == pytest.approx(oracle[cid], abs=1e-6)

    assert semantic_iou("brown dog", "dog") == 0.5
    assert semantic_iou("a dog", "a dog") == 1.0
    assert semantic_iou("cat", "dog") == 0.0

    assert meteor_lite("a large brown dog", ["a large brown dog"]) == pytest.approx(
        1.0 - 0.5 * (1.0 / 4.0) ** 3, abs=1e-9
    )
    text7 = "a brown dog sleeps on the mat"
    assert meteor_lite(text7, [text7]) == pytest.approx(1.0 - 0.5 * (1.0 / 7.0) ** 3, abs=1e-9)
    assert meteor_lite("purple engines hum", ["bright kites fly"]) == 0.0

    from test_metrics import BINARY_FIXTURE

    responses = [(t, a, b, gt) for t, a, b, gt, _ in BINARY_FIXTURE]
    assert len(responses) == 10
    _, verdicts = binary_choice_accuracy(responses)
    assert verdicts == [want for *_, want in BINARY_FIXTURE]
    _passed("metric oracles (CIDEr vs brute force, S-IoU exact, METEOR golden, binary rules)")


# 7. End-to-end ceiling -------------------------------------------------------------------------


def test_accept_end_to_end_ceiling(tmp_path) -> None:
    start = time.monotonic()
    bench_path = str(FIXTURES / "benchmark" / "mini_bench.jsonl")
    samples = load_jsonl(bench_path)
    preds_path = tmp_path / "echo.jsonl"
    dump_predictions(echo_predictions(samples), str(preds_path))
    report = run_eval(
        bench_path, str(preds_path), EvalConfig(no_judge=True, image_root=str(ROOT))
    )
    stage1 = report.cells[("natural", "box", "stage1-label")]
    assert stage1.metrics["semantic_iou"]["value"] == 1.0
    captions = report.cells[("natural", "box", "brief-caption")]
    for value in captions.metrics["cider"]["per_item"].values():
        assert value == pytest.approx(10.0, abs=1e-9)
    binary = report.cells[("natural", "point", "binary")]
    assert binary.metrics["accuracy"]["value"] == 1.0
    assert report.conserves()
    assert len(report.scored_ids()) + len(report.missing_ids) == report.total_samples
    elapsed = time.monotonic() - start
    assert elapsed < 30.0
    _passed(f"end-to-end ceiling (S-IoU 1.0, CIDEr 10.0, accuracy 1.0, {elapsed:.1f}s offline)")


# 8. Judge client against a local mock ------------------------------------------------------------


def test_accept_judge_client(tmp_path, monkeypatch) -> None:
    monkeypatch.setenv("JUDGE_API_KEY", "k")

    with MockJudgeServer(default_response="Score: 8\nGood detail.", delay=0.02) as server:
        cfg = JudgeConfig(
            base_url=server.base_url,
            model="mock",
            cache_dir=str(tmp_path / "cache"),
            backoff_base=0.001,
            max_concurrent=4,
        )
        client = JudgeClient(cfg)

        client.complete("identical request", b"img")
        before = server.request_count
        client.complete("identical request", b"img")
        assert server.request_count == before  # cache hit

        threads = [
            threading.Thread(target=client.complete, args=(f"p{i}",)) for i in range(12)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert server.max_in_flight <= 4

        result = client.score_response(b"png", "what is marked?", "a dog")
        assert result.score == 8

        server.script.append((200, "Score: 11"))
        server.script.append((200, "Score: 11"))
        with pytest.raises(UnscorableResponse):
            client.score_response(b"png", "out of range?", "answer")

    assert score_pair_ratio([8, 8], [10, 10]) == 80.0
    _passed("judge client (cache hit, concurrency <= 4, score parsing, ratio 80.0)")


# 9. Curation durability ----------------------------------------------------------------------


def _candidates(n: int) -> list[InstructionSample]:
    return [
        InstructionSample(
            sample_id=f"cand-{i:03d}",
            image_path="fixtures/images/scene0.png",
            domain="natural",
            prompts=(BoxPrompt(0.1, 0.1, 0.5, 0.5),),
            prompt_kind="box",
            task="qa",
            turns=(Turn("user", f"Q{i} about <Mark 1>?"), Turn("assistant", f"A{i}.")),
            source="fixture",
        )
        for i in range(n)
    ]


def test_accept_curation_durability(tmp_path) -> None:
    candidates = _candidates(40)
    log_path = str(tmp_path / "decisions.jsonl")
    script: list[CurationDecision] = []
    for i in range(100):
        sid = f"cand-{i % 40:03d}"
        action = ("accept", "reject", "edit")[i % 3]
        edit = None
        if action == "edit":
            edit = replace(
                candidates[i % 40],
                turns=(Turn("user", "u"), Turn("assistant", f"edited answer {i}")),
            )
        script.append(
            CurationDecision(
                timestamp=float(i), sample_id=sid, reviewer=f"rev{i % 3}", action=action, edit=edit
            )
        )

    store = CurationStore(candidates, log_path)
    for decision in script[:63]:
        store.record(decision)
    mid_state = (store.stats(), store.export_jsonl())
    store.close()  # kill mid-run; only the log survives

    resumed = CurationStore(candidates, log_path)
    assert (resumed.stats(), resumed.export_jsonl()) == mid_state
    for decision in script[63:]:
        resumed.record(decision)

    last: dict[str, CurationDecision] = {}
    for decision in script:
        last[decision.sample_id] = decision
    expected = [
        sid for sid in (f"cand-{i:03d}" for i in range(40))
        if sid in last and last[sid].action in ("accept", "edit")
    ]
    exported = resumed.export()
    assert [s.sample_id for s in exported] == expected
    for sample in exported:
        if last[sample.sample_id].action == "edit":
            assert sample == last[sample.sample_id].edit  # edits applied verbatim

    replayed = CurationStore(candidates, log_path)
    assert replayed.export_jsonl() == resumed.export_jsonl()
    assert replayed.export_jsonl() == replayed.export_jsonl()
    _passed("curation durability (100 decisions, restart replay, deterministic export)")


# 10. Renderer determinism ---------------------------------------------------------------------


def test_accept_renderer_determinism() -> None:
    scene = str(FIXTURES / "images" / "scene0.png")
    prompts = VisualPromptSet((BoxPrompt(0.1, 0.15, 0.45, 0.6), BoxPrompt(0.55, 0.3, 0.9, 0.85)))

    a = render_marks(scene, prompts)
    b = render_marks(scene, prompts)
    assert a.png_bytes == b.png_bytes

    source = np.array(Image.open(scene).convert("RGB"))
    rendered = np.array(Image.open(io.BytesIO(a.png_bytes)).convert("RGB"))
    h, w = source.shape[:2]
    touched = np.zeros((h, w), dtype=bool)
    for box in prompts:
        x0, y0 = round(box.x1 * w), round(box.y1 * h)
        x1, y1 = round(box.x2 * w), round(box.y2 * h)
        touched[y0:y1, x0 : x0 + 2] = True
        touched[y0:y1, x1 - 2 : x1] = True
        touched[y0 : y0 + 2, x0:x1] = True
        touched[y1 - 2 : y1, x0:x1] = True
    for cx0, cy0, cx1, cy1 in a.chip_rects:
        touched[cy0:cy1, cx0:cx1] = True
    assert np.array_equal(rendered[~touched], source[~touched])

    rng = np.random.default_rng(13)
    for _ in range(1000):
        x1 = float(rng.choice([0.0, 0.9]) + rng.uniform(0, 0.05))
        y1 = float(rng.choice([0.0, 0.9]) + rng.uniform(0, 0.05))
        x2 = min(1.0, x1 + float(rng.uniform(0.03, 0.1)))
        y2 = min(1.0, y1 + float(rng.uniform(0.03, 0.1)))
        if x2 <= x1 or y2 <= y1:
            continue
        overlay = render_marks(scene, VisualPromptSet((BoxPrompt(x1, y1, x2, y2),)))
        cx0, cy0, cx1, cy1 = overlay.chip_rects[0]
        assert 0 <= cx0 < cx1 <= w and 0 <= cy0 < cy1 <= h
    _passed("renderer determinism (byte-equal rerenders, untouched pixels, 1000 corner chips)")
