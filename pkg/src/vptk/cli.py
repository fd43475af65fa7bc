"""Command-line entry points, one subgroup per subsystem.

Everything speaks JSONL on disk: prompt lists, annotation records,
instruction samples, predictions, and reports. Run `vptk --help` for the
full tree.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import augment as aug
from . import bench as bench_mod
from . import construct as con
from . import ingest as ing
from . import metrics as met
from .encoder import EncoderConfig, embed_prompts, grad_check, init_params, load_params, save_params
from .geometry import BoxPrompt, VisualPromptSet, prompt_from_json
from .judge import JudgeClient, JudgeConfig, score_pair_ratio
from .som_render import MarkStyle, OCR_STYLE, render_alpha_blend, render_marks


@click.group()
def main() -> None:
    """Visual prompting toolkit."""


# --- encoder --------------------------------------------------------------------


@main.group()
def encoder() -> None:
    """Coordinate prompt encoder: checks, embedding, parameter files."""


def _load_encoder_config(path: str | None) -> EncoderConfig:
    if path is None:
        return EncoderConfig()
    return EncoderConfig(**json.loads(Path(path).read_text()))


@encoder.command("grad-check")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
def encoder_grad_check(seed: int, config_path: str | None) -> None:
    """Analytic vs finite-difference gradients; prints the max error."""
    cfg = _load_encoder_config(config_path)
    err = grad_check(cfg, seed)
    click.echo(f"max relative error: {err:.3e}")
    if err >= 1e-4:
        raise SystemExit(1)


@encoder.command("init")
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def encoder_init(config_path: str | None, out_path: str) -> None:
    """Initialize parameters from the config seed and write them."""
    params = init_params(_load_encoder_config(config_path))
    save_params(params, out_path)
    click.echo(f"wrote {out_path}")


@encoder.command("embed")
@click.option("--params", "params_path", required=True, type=click.Path(exists=True))
@click.option("--prompts", "prompts_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", default=None, type=click.Path())
def encoder_embed(params_path: str, prompts_path: str, out_path: str | None) -> None:
    """Embed a prompt JSONL (one prompt object per line) into tokens."""
    params = load_params(params_path)
    prompts = []
    with open(prompts_path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                prompts.append(prompt_from_json(json.loads(line)))
    batch = embed_prompts(VisualPromptSet(tuple(prompts)), params)
    click.echo(f"tokens: {batch.tokens.shape[0]} x {batch.tokens.shape[1]}, N={batch.n_prompts}")
    if out_path:
        np.save(out_path, batch.tokens)
        click.echo(f"wrote {out_path}")


# --- augment ----------------------------------------------------------------------


@main.group(name="augment")
def augment_group() -> None:
    """Noise-based prompt simulation."""


@augment_group.command("jitter")
@click.option("--sigma", default=0.1, show_default=True, type=float)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def augment_jitter(sigma: float, seed: int, in_path: str, out_path: str) -> None:
    """Jitter every box in a prompt JSONL; line i uses seed+i."""
    cfg = aug.AugmentConfig(sigma_scale=sigma)
    passed_through = 0
    with open(in_path, "r", encoding="utf-8") as fin, open(out_path, "w", encoding="utf-8") as fout:
        for i, line in enumerate(l for l in fin if l.strip()):
            prompt = prompt_from_json(json.loads(line))
            if isinstance(prompt, BoxPrompt):
                prompt = aug.jitter_box(prompt, cfg, seed + i)
            else:
                passed_through += 1
            fout.write(json.dumps(prompt.to_json(), separators=(",", ":")) + "\n")
    if passed_through:
        click.echo(f"passed through {passed_through} non-box prompts", err=True)


# --- ingest ------------------------------------------------------------------------


@main.group(name="ingest")
def ingest_group() -> None:
    """Source annotation parsing."""


@ingest_group.command("run")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def ingest_run(manifest_path: str, out_path: str) -> None:
    """Parse every source in a manifest file into record JSONL."""
    entries = json.loads(Path(manifest_path).read_text())
    records = []
    for entry in entries:
        records.extend(ing.parse_manifest(ing.SourceManifest.from_json(entry)))
    ing.dump_records(records, out_path)
    click.echo(f"wrote {len(records)} records to {out_path}")


def _records_from_manifest(manifest_path: str) -> list[ing.AnnotationRecord]:
    entries = json.loads(Path(manifest_path).read_text())
    records = []
    for entry in entries:
        records.extend(ing.parse_manifest(ing.SourceManifest.from_json(entry)))
    return records


# --- construct -----------------------------------------------------------------------


@main.group(name="construct")
def construct_group() -> None:
    """Instruction-sample construction."""


@construct_group.command("stage1")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--mode", type=click.Choice(["box", "point"]), default="box", show_default=True)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--augment", "do_augment", is_flag=True)
@click.option("--capacity", default=16, show_default=True, type=int)
def construct_stage1(manifest_path, out_path, mode, seed, do_augment, capacity) -> None:
    """Alignment-stage classification samples from detection/segmentation."""
    records = _records_from_manifest(manifest_path)
    cfg = con.Stage1Config(capacity=capacity, augment=do_augment)
    samples, skipped = con.build_stage1(records, mode, cfg, seed)
    con.emit_jsonl(samples, out_path)
    click.echo(f"wrote {len(samples)} samples ({skipped} records skipped) to {out_path}")


@construct_group.command("invert")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def construct_invert(manifest_path, out_path) -> None:
    """Multi-target captions from phrase-grounded records."""
    records = _records_from_manifest(manifest_path)
    samples = [con.invert_grounding(r, ordinal=i) for i, r in enumerate(records) if r.links]
    con.emit_jsonl(samples, out_path)
    click.echo(f"wrote {len(samples)} samples to {out_path}")


@construct_group.command("reconstruct-qa")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def construct_reconstruct_qa(manifest_path, out_path) -> None:
    """Prompt-referenced conversations from grounding QA records."""
    records = _records_from_manifest(manifest_path)
    samples = []
    for i, record in enumerate(records):
        samples.extend(con.reconstruct_qa(record, ordinal=i))
    con.emit_jsonl(samples, out_path)
    click.echo(f"wrote {len(samples)} samples to {out_path}")


@construct_group.command("gpt4v-gen")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--domain", required=True)
@click.option("--base-url", required=True)
@click.option("--model", default="gpt-4-vision-preview", show_default=True)
@click.option("--cache-dir", default=".judge_cache", show_default=True)
@click.option("--reject", "reject_path", default=None, type=click.Path())
@click.option("--image-root", default=".", show_default=True)
@click.option("--templates", "template_dir", default=None, type=click.Path(exists=True))
def construct_gpt4v_gen(
    manifest_path, out_path, domain, base_url, model, cache_dir, reject_path, image_root, template_dir
) -> None:
    """Assisted generation: render marks, prompt the model, parse, emit."""
    records = _records_from_manifest(manifest_path)
    client = JudgeClient(JudgeConfig(base_url=base_url, model=model, cache_dir=cache_dir))

    def render_fn(record, plan):
        prompts = VisualPromptSet(tuple(r.box for r in record.regions))
        styles = [e.style for e in plan]
        path = str(Path(image_root) / record.image_path)
        return render_marks(path, prompts, styles).png_bytes

    samples, rejects = con.generate_with_model(
        records, domain, client.complete, render_fn, template_dir
    )
    con.emit_jsonl(samples, out_path)
    click.echo(f"wrote {len(samples)} samples to {out_path}")
    if rejects:
        target = reject_path or out_path + ".rejects"
        with open(target, "w", encoding="utf-8") as f:
            for r in rejects:
                f.write(json.dumps(r, ensure_ascii=False) + "\n")
        click.echo(f"quarantined {len(rejects)} records to {target}", err=True)


@construct_group.command("baseline-coords")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def construct_baseline_coords(in_path, out_path) -> None:
    """Coordinates-in-text ablation over a sample JSONL."""
    samples = con.load_jsonl(in_path)
    converted = [con.coords_in_text_baseline(s) for s in samples]
    con.emit_jsonl(converted, out_path)
    click.echo(f"wrote {len(converted)} samples to {out_path}")


# --- rendering ---------------------------------------------------------------------------


@main.command("render-som")
@click.option("--in", "image_path", required=True, type=click.Path(exists=True))
@click.option("--prompts", "prompts_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--style", type=click.Choice(["natural", "ocr"]), default="natural", show_default=True)
@click.option("--alpha", default=None, type=float, help="Alpha-blend fill instead of marks.")
def render_som(image_path, prompts_path, out_path, style, alpha) -> None:
    """Draw numbered marks (or an alpha-blended fill) onto an image."""
    prompts = []
    with open(prompts_path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                prompts.append(prompt_from_json(json.loads(line)))
    prompt_set = VisualPromptSet(tuple(prompts))
    if alpha is not None:
        overlay = render_alpha_blend(image_path, prompt_set, alpha)
    else:
        overlay = render_marks(image_path, prompt_set, OCR_STYLE if style == "ocr" else MarkStyle())
    Path(out_path).write_bytes(overlay.png_bytes)
    click.echo(f"wrote {out_path} ({overlay.content_hash[:16]})")


# --- metrics -----------------------------------------------------------------------------


@main.group(name="metrics")
def metrics_group() -> None:
    """Stand-alone metric computation over prediction/reference JSONL."""


def _read_pairs(preds_path: str, refs_path: str) -> tuple[dict[str, str], dict[str, list[str]]]:
    preds: dict[str, str] = {}
    with open(preds_path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                obj = json.loads(line)
                preds[obj["sample_id"]] = obj["response"]
    refs: dict[str, list[str]] = {}
    with open(refs_path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                obj = json.loads(line)
                refs[obj["sample_id"]] = obj.get("references") or [obj["text"]]
    return preds, refs


@metrics_group.command("cider")
@click.option("--preds", "preds_path", required=True, type=click.Path(exists=True))
@click.option("--refs", "refs_path", required=True, type=click.Path(exists=True))
def metrics_cider(preds_path, refs_path) -> None:
    preds, refs = _read_pairs(preds_path, refs_path)
    corpus, per_item = met.cider(preds, refs)
    click.echo(json.dumps({"cider": corpus, "per_item": per_item}, indent=1, sort_keys=True))


@metrics_group.command("siou")
@click.option("--preds", "preds_path", required=True, type=click.Path(exists=True))
@click.option("--refs", "refs_path", required=True, type=click.Path(exists=True))
def metrics_siou(preds_path, refs_path) -> None:
    preds, refs = _read_pairs(preds_path, refs_path)
    per_item = {sid: met.semantic_iou(preds[sid], refs[sid][0]) for sid in preds}
    value = sum(per_item.values()) / len(per_item)
    click.echo(json.dumps({"semantic_iou": value, "per_item": per_item}, indent=1, sort_keys=True))


@metrics_group.command("ss")
@click.option("--preds", "preds_path", required=True, type=click.Path(exists=True))
@click.option("--refs", "refs_path", required=True, type=click.Path(exists=True))
def metrics_ss(preds_path, refs_path) -> None:
    preds, refs = _read_pairs(preds_path, refs_path)
    emb = met.HashedBagEmbedder()
    per_item = {sid: met.semantic_similarity(preds[sid], refs[sid][0], emb) for sid in preds}
    value = sum(per_item.values()) / len(per_item)
    click.echo(
        json.dumps({"semantic_similarity": value, "per_item": per_item}, indent=1, sort_keys=True)
    )


@metrics_group.command("meteor")
@click.option("--preds", "preds_path", required=True, type=click.Path(exists=True))
@click.option("--refs", "refs_path", required=True, type=click.Path(exists=True))
def metrics_meteor(preds_path, refs_path) -> None:
    preds, refs = _read_pairs(preds_path, refs_path)
    per_item = {sid: met.meteor_lite(preds[sid], refs[sid]) for sid in preds}
    value = sum(per_item.values()) / len(per_item)
    click.echo(json.dumps({"meteor_lite": value, "per_item": per_item}, indent=1, sort_keys=True))


@metrics_group.command("binary")
@click.option("--preds", "preds_path", required=True, type=click.Path(exists=True))
@click.option("--refs", "refs_path", required=True, type=click.Path(exists=True))
def metrics_binary(preds_path, refs_path) -> None:
    """Refs lines need class_a, class_b, and gt fields."""
    preds: dict[str, str] = {}
    with open(preds_path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                obj = json.loads(line)
                preds[obj["sample_id"]] = obj["response"]
    cases = []
    with open(refs_path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                obj = json.loads(line)
                cases.append((preds[obj["sample_id"]], obj["class_a"], obj["class_b"], obj["gt"]))
    accuracy, _ = met.binary_choice_accuracy(cases)
    click.echo(json.dumps({"accuracy": accuracy, "support": len(cases)}))


# --- judge ---------------------------------------------------------------------------------


@main.group(name="judge")
def judge_group() -> None:
    """External judge scoring."""


@judge_group.command("score")
@click.option("--bench", "bench_path", required=True, type=click.Path(exists=True))
@click.option("--preds", "preds_path", required=True, type=click.Path(exists=True))
@click.option("--base-url", required=True)
@click.option("--model", default="gpt-4-vision-preview", show_default=True)
@click.option("--cache-dir", default=".judge_cache", show_default=True)
@click.option("--image-root", default=".", show_default=True)
@click.option("--out", "out_path", default=None, type=click.Path())
def judge_score(bench_path, preds_path, base_url, model, cache_dir, image_root, out_path) -> None:
    """Judge every judge-task sample; prints per-sample scores and the mean."""
    client = JudgeClient(JudgeConfig(base_url=base_url, model=model, cache_dir=cache_dir))
    report = bench_mod.run_eval(
        bench_path,
        preds_path,
        bench_mod.EvalConfig(model_name=model, judge=client, image_root=image_root),
    )
    blob = bench_mod.render_report(report)
    if out_path:
        Path(out_path).write_bytes(blob)
        click.echo(f"wrote {out_path}")
    else:
        sys.stdout.buffer.write(blob)


# --- eval ----------------------------------------------------------------------------------


@main.group(name="eval")
def eval_group() -> None:
    """Benchmark evaluation."""


@eval_group.command("run")
@click.option("--bench", "bench_path", required=True, type=click.Path(exists=True))
@click.option("--preds", "preds_path", required=True, type=click.Path(exists=True))
@click.option("--no-judge", is_flag=True, help="Leave judge-task cells unscored.")
@click.option("--base-url", default=None, help="Judge endpoint (required unless --no-judge).")
@click.option("--model", default="unknown", show_default=True)
@click.option("--judge-model", default="gpt-4-vision-preview", show_default=True)
@click.option("--cache-dir", default=".judge_cache", show_default=True)
@click.option("--image-root", default=".", show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def eval_run(
    bench_path, preds_path, no_judge, base_url, model, judge_model, cache_dir, image_root, out_path
) -> None:
    """Score predictions against a benchmark and write the report."""
    judge = None
    if not no_judge:
        if base_url is None:
            raise click.UsageError("--base-url is required unless --no-judge is set")
        judge = JudgeClient(JudgeConfig(base_url=base_url, model=judge_model, cache_dir=cache_dir))
    cfg = bench_mod.EvalConfig(
        model_name=model, no_judge=no_judge, judge=judge, image_root=image_root
    )
    report = bench_mod.run_eval(bench_path, preds_path, cfg)
    Path(out_path).write_bytes(bench_mod.render_report(report, "structured"))
    scored = len(report.scored_ids())
    click.echo(
        f"wrote {out_path}: {scored} scored, {len(report.missing_ids)} missing, "
        f"{len(report.unscored_ids)} unscored of {report.total_samples}"
    )


@eval_group.command("render")
@click.option("--report", "report_path", required=True, type=click.Path(exists=True))
@click.option("--format", "fmt", type=click.Choice(["structured", "table"]), default="table", show_default=True)
def eval_render(report_path, fmt) -> None:
    """Pretty-print a stored report."""
    report = bench_mod.EvalReport.from_json(json.loads(Path(report_path).read_text()))
    fmt_name = "table-text" if fmt == "table" else "structured"
    sys.stdout.buffer.write(bench_mod.render_report(report, fmt_name))


# --- curate ----------------------------------------------------------------------------------


@main.group(name="curate")
def curate_group() -> None:
    """Human review service."""


@curate_group.command("serve")
@click.option("--candidates", "candidates_path", required=True, type=click.Path(exists=True))
@click.option("--log", "log_path", required=True, type=click.Path())
@click.option("--addr", default="127.0.0.1:8000", show_default=True)
@click.option("--image-root", default=".", show_default=True)
@click.option("--frontend", "frontend_dir", default=None, type=click.Path())
def curate_serve(candidates_path, log_path, addr, image_root, frontend_dir) -> None:
    """Serve the review API (and the frontend, if built) over HTTP."""
    import uvicorn

    from .curation import build_app, load_store

    if frontend_dir is None:
        default_dist = Path(__file__).resolve().parent.parent.parent / "frontend" / "dist"
        frontend_dir = str(default_dist) if default_dist.is_dir() else None
    store = load_store(candidates_path, log_path)
    app = build_app(store, image_root=image_root, frontend_dir=frontend_dir)
    host, _, port = addr.partition(":")
    uvicorn.run(app, host=host, port=int(port or 8000), log_level="warning")


@curate_group.command("export")
@click.option("--candidates", "candidates_path", required=True, type=click.Path(exists=True))
@click.option("--log", "log_path", required=True, type=click.Path(exists=True))
@click.option("--status", default="accepted", show_default=True)
@click.option("--out", "out_path", default=None, type=click.Path())
def curate_export(candidates_path, log_path, status, out_path) -> None:
    """Replay a decision log and emit the curated subset."""
    from .curation import load_store

    store = load_store(candidates_path, log_path)
    statuses = ("accepted", "edited") if status == "accepted" else (status,)
    blob = store.export_jsonl(statuses)
    if out_path:
        Path(out_path).write_bytes(blob)
        click.echo(f"wrote {out_path}")
    else:
        sys.stdout.buffer.write(blob)


if __name__ == "__main__":
    main()
