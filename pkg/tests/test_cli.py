import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from mock_judge import MockJudgeServer
from vptk.cli import main
from vptk.construct import load_jsonl, render_gpt4v_response

ROOT = Path(__file__).resolve().parent.parent
MANIFEST = str(ROOT / "fixtures" / "annotations" / "manifest.json")
MINI_BENCH = str(ROOT / "fixtures" / "benchmark" / "mini_bench.jsonl")


@pytest.fixture()
def runner() -> CliRunner:
    return CliRunner()


def test_cli_grad_check(runner) -> None:
    config = {"num_frequencies": 2, "hidden_dim": 4, "llm_dim": 4, "capacity": 4}
    with runner.isolated_filesystem():
        Path("cfg.json").write_text(json.dumps(config))
        result = runner.invoke(main, ["encoder", "grad-check", "--seed", "1", "--config", "cfg.json"])
    assert result.exit_code == 0, result.output
    assert "max relative error" in result.output


def test_cli_encoder_init_embed(runner, tmp_path) -> None:
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"num_frequencies": 2, "hidden_dim": 4, "llm_dim": 6, "capacity": 4}))
    params = tmp_path / "enc.vpe"
    result = runner.invoke(main, ["encoder", "init", "--config", str(cfg), "--out", str(params)])
    assert result.exit_code == 0, result.output
    prompts = tmp_path / "prompts.jsonl"
    prompts.write_text('{"kind":"point","x":0.5,"y":0.5}\n{"kind":"box","x1":0.1,"y1":0.1,"x2":0.9,"y2":0.9}\n')
    result = runner.invoke(
        main, ["encoder", "embed", "--params", str(params), "--prompts", str(prompts)]
    )
    assert result.exit_code == 0, result.output
    assert "tokens: 6 x 6, N=2" in result.output


def test_cli_construct_and_eval_pipeline(runner, tmp_path) -> None:
    stage1 = tmp_path / "stage1.jsonl"
    result = runner.invoke(
        main,
        ["construct", "stage1", "--manifest", MANIFEST, "--out", str(stage1), "--seed", "3"],
        catch_exceptions=False,
    )
    assert result.exit_code == 0, result.output
    assert load_jsonl(str(stage1))

    invert = tmp_path / "invert.jsonl"
    result = runner.invoke(main, ["construct", "invert", "--manifest", MANIFEST, "--out", str(invert)])
    assert result.exit_code == 0, result.output
    assert len(load_jsonl(str(invert))) == 3

    qa = tmp_path / "qa.jsonl"
    result = runner.invoke(
        main, ["construct", "reconstruct-qa", "--manifest", MANIFEST, "--out", str(qa)]
    )
    assert result.exit_code == 0, result.output

    preds = tmp_path / "preds.jsonl"
    bench_samples = load_jsonl(MINI_BENCH)
    with open(preds, "w") as f:
        for s in bench_samples:
            answer = "\n".join(t.text for t in s.turns if t.role == "assistant")
            f.write(json.dumps({"sample_id": s.sample_id, "model": "echo", "response": answer}) + "\n")
    report = tmp_path / "report.json"
    result = runner.invoke(
        main,
        [
            "eval", "run", "--bench", MINI_BENCH, "--preds", str(preds),
            "--no-judge", "--image-root", str(ROOT), "--out", str(report),
        ],
    )
    assert result.exit_code == 0, result.output
    result = runner.invoke(main, ["eval", "render", "--report", str(report), "--format", "table"])
    assert result.exit_code == 0, result.output
    assert "stage1-label/semantic_iou" in result.output


def test_cli_render_and_jitter(runner, tmp_path) -> None:
    prompts = tmp_path / "prompts.jsonl"
    prompts.write_text('{"kind":"box","x1":0.1,"y1":0.1,"x2":0.6,"y2":0.7}\n')
    out_png = tmp_path / "out.png"
    image = str(ROOT / "fixtures" / "images" / "scene1.png")
    result = runner.invoke(
        main, ["render-som", "--in", image, "--prompts", str(prompts), "--out", str(out_png)]
    )
    assert result.exit_code == 0, result.output
    assert out_png.stat().st_size > 0

    jittered = tmp_path / "jittered.jsonl"
    result = runner.invoke(
        main,
        ["augment", "jitter", "--sigma", "0.3", "--seed", "11", "--in", str(prompts), "--out", str(jittered)],
    )
    assert result.exit_code == 0, result.output
    obj = json.loads(jittered.read_text())
    assert obj["kind"] == "box"


def test_cli_metrics_commands(runner, tmp_path) -> None:
    preds = tmp_path / "p.jsonl"
    refs = tmp_path / "r.jsonl"
    preds.write_text(
        '{"sample_id":"a","response":"a brown dog sleeps on the mat"}\n'
        '{"sample_id":"b","response":"bright red kites fly over windy hills"}\n'
    )
    refs.write_text(
        '{"sample_id":"a","text":"a brown dog sleeps on the mat"}\n'
        '{"sample_id":"b","text":"bright red kites fly over windy hills"}\n'
    )
    for cmd, key in (("cider", "cider"), ("siou", "semantic_iou"), ("ss", "semantic_similarity"), ("meteor", "meteor_lite")):
        result = runner.invoke(main, ["metrics", cmd, "--preds", str(preds), "--refs", str(refs)])
        assert result.exit_code == 0, f"{cmd}: {result.output}"
        assert json.loads(result.output)[key] == pytest.approx(10.0 if cmd == "cider" else 1.0, abs=0.01)


def test_cli_gpt4v_gen_against_mock(runner, tmp_path, monkeypatch) -> None:
    monkeypatch.setenv("JUDGE_API_KEY", "k")
    # one-image detection source with two labeled regions
    ann = {
        "images": [{"id": 1, "file_name": "scene2.png", "width": 72, "height": 54}],
        "categories": [{"id": 1, "name": "girl"}, {"id": 2, "name": "pen"}],
        "annotations": [
            {"id": 1, "image_id": 1, "category_id": 1, "bbox": [10, 6, 24, 40]},
            {"id": 2, "image_id": 1, "category_id": 2, "bbox": [40, 20, 10, 4]},
        ],
    }
    ann_path = tmp_path / "det.json"
    ann_path.write_text(json.dumps(ann))
    manifest = tmp_path / "manifest.json"
    manifest.write_text(
        json.dumps(
            [
                {
                    "format_kind": "coco-det",
                    "annotation_path": str(ann_path),
                    "image_root": "fixtures/images",
                    "domain": "natural",
                }
            ]
        )
    )
    reply = render_gpt4v_response(
        [
            ("per_mark", "Short Description", {1: "a girl", 2: "a pen"}),
            ("per_mark", "Detailed Description", {1: "a girl writing notes", 2: "a blue ballpoint pen"}),
            ("relationship", "Inter-Relationship Analysis", [((1, 2), "the girl holds the pen")]),
            ("qa", "Q&A and Conversations", [("Who holds <Mark 2>?", "<Mark 1> does.")]),
        ]
    )
    out = tmp_path / "gen.jsonl"
    with MockJudgeServer(default_response=reply) as server:
        result = runner.invoke(
            main,
            [
                "construct", "gpt4v-gen",
                "--manifest", str(manifest),
                "--out", str(out),
                "--domain", "natural",
                "--base-url", server.base_url,
                "--cache-dir", str(tmp_path / "cache"),
                "--image-root", str(ROOT),
            ],
        )
    assert result.exit_code == 0, result.output
    samples = load_jsonl(str(out))
    assert [s.task for s in samples] == [
        "brief-caption", "detailed-caption", "inter-relationship", "qa",
    ]
    assert all(s.generator == "gpt4v" for s in samples)


def test_cli_gpt4v_gen_quarantines_after_retry(runner, tmp_path, monkeypatch) -> None:
    monkeypatch.setenv("JUDGE_API_KEY", "k")
    ann = {
        "images": [{"id": 1, "file_name": "scene2.png", "width": 72, "height": 54}],
        "categories": [{"id": 1, "name": "girl"}],
        "annotations": [{"id": 1, "image_id": 1, "category_id": 1, "bbox": [10, 6, 24, 40]}],
    }
    ann_path = tmp_path / "det.json"
    ann_path.write_text(json.dumps(ann))
    manifest = tmp_path / "manifest.json"
    manifest.write_text(
        json.dumps(
            [
                {
                    "format_kind": "coco-det",
                    "annotation_path": str(ann_path),
                    "image_root": "fixtures/images",
                    "domain": "natural",
                }
            ]
        )
    )
    out = tmp_path / "gen.jsonl"
    reject = tmp_path / "rejects.jsonl"
    with MockJudgeServer(default_response="I refuse to follow templates.") as server:
        result = runner.invoke(
            main,
            [
                "construct", "gpt4v-gen",
                "--manifest", str(manifest),
                "--out", str(out),
                "--domain", "natural",
                "--base-url", server.base_url,
                "--cache-dir", str(tmp_path / "cache"),
                "--image-root", str(ROOT),
                "--reject", str(reject),
            ],
        )
        assert result.exit_code == 0, result.output
        assert server.request_count == 2  # original + exactly one re-request
    assert load_jsonl(str(out)) == []
    rejects = [json.loads(l) for l in reject.read_text().splitlines()]
    assert len(rejects) == 1 and rejects[0]["image_id"] == "1"


def test_cli_curate_export(runner, tmp_path) -> None:
    candidates = tmp_path / "cands.jsonl"
    from vptk.construct import InstructionSample, Turn, emit_jsonl
    from vptk.curation import CurationDecision, CurationStore
    from vptk.geometry import BoxPrompt

    samples = [
        InstructionSample(
            sample_id=f"c{i}",
            image_path="fixtures/images/scene0.png",
            domain="natural",
            prompts=(BoxPrompt(0.1, 0.1, 0.5, 0.5),),
            prompt_kind="box",
            task="qa",
            turns=(Turn("user", "q"), Turn("assistant", "a")),
            source="x",
        )
        for i in range(3)
    ]
    emit_jsonl(samples, str(candidates))
    log = tmp_path / "log.jsonl"
    store = CurationStore(samples, str(log))
    store.record(CurationDecision(1.0, "c1", "alice", "accept"))
    store.close()
    result = runner.invoke(
        main,
        ["curate", "export", "--candidates", str(candidates), "--log", str(log)],
    )
    assert result.exit_code == 0, result.output
    assert json.loads(result.output)["sample_id"] == "c1"
