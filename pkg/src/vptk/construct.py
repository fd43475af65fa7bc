"""The instruction-sample factory.

Takes normalized annotation records and produces conversation samples:

  * alignment-stage classification samples (point or box prompts mapped
    to category labels),
  * inverted grounding captions (ground-truth boxes become the input
    prompts, the caption becomes the answer with each grounded phrase
    annotated by its mark id),
  * reconstructed grounding QA (region placeholders in the text replaced
    by mark references, coordinates discarded),
  * set-of-marks prompt assembly for an external multimodal generator,
    plus the strict parser for its sectioned responses,
  * the coordinates-in-text baseline that moves prompts into the prompt
    text instead of the prompt channel.

The canonical mark reference in emitted text is "<Mark k>"; responses
that use the "<Region k>" variant are normalized on parse. Prompt and
role templates live in the package's templates/ directory as data files
(one role + one format file per domain plus the shared public wrapper), so
adding a domain needs no code change.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

from .augment import AugmentConfig, DeterministicRng, jitter_box, sample_mask_points
from .geometry import (
    BoxPrompt,
    PointPrompt,
    VisualPrompt,
    VisualPromptSet,
    prompt_from_json,
)
from .ingest import DOMAINS, AnnotationRecord, Region
from .som_render import MarkStyle, style_for_domain

TASK_TAGS = (
    "stage1-label",
    "multi-target-caption",
    "brief-caption",
    "detailed-caption",
    "inter-relationship",
    "qa",
    "reasoning",
    "binary",
)

MARK_TOKEN = re.compile(r"<Mark (\d+)>")
REGION_TOKEN = re.compile(r"<Region\s+(\d+)>")
# [R<id>] placeholders with an optional trailing "(x1, y1, ...)" literal
PLACEHOLDER = re.compile(r"\[R([A-Za-z0-9_-]+)\](\(\s*-?\d*\.?\d+(?:\s*,\s*-?\d*\.?\d+)*\s*\))?")
COORD_LITERAL = re.compile(r"\(\s*0?\.\d+\s*,")


class InvalidSample(ValueError):
    """An instruction sample violates its invariants; message lists them."""


class DuplicateId(ValueError):
    """Two samples share a sample_id in one emitted file."""


class UnknownDomain(KeyError):
    """No role/format template exists for the requested domain."""


class EmptyRegions(ValueError):
    """A record without regions cannot drive prompt assembly."""


class Unsupported(ValueError):
    """Operation does not apply to this sample's prompt kind."""


class IncompleteResponse(ValueError):
    """A response section is missing mark entries; carries the raw text."""

    def __init__(self, role_index: int, missing: set[int], raw_text: str):
        super().__init__(f"role {role_index} missing marks {sorted(missing)}")
        self.role_index = role_index
        self.missing = set(missing)
        self.raw_text = raw_text


class MalformedResponse(ValueError):
    """A response line cannot be parsed; carries the raw text."""

    def __init__(self, line_no: int, reason: str, raw_text: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.raw_text = raw_text


@dataclass(frozen=True)
class Turn:
    role: str  # user | assistant
    text: str


@dataclass(frozen=True)
class InstructionSample:
    """One training/benchmark record: image + prompts + conversation."""

    sample_id: str
    image_path: str
    domain: str
    prompts: tuple[VisualPrompt, ...]
    prompt_kind: str  # point | box
    task: str
    turns: tuple[Turn, ...]
    source: str
    generator: str = "rule"  # rule | gpt4v
    prompt_channel: str = "encoder"  # encoder | text
    text_coords: tuple[tuple[float, float, float, float], ...] = ()

    def n_marks(self) -> int:
        if self.prompt_channel == "text":
            return len(self.text_coords)
        return len(self.prompts)

    def to_json(self) -> dict:
        out = {
            "sample_id": self.sample_id,
            "image_path": self.image_path,
            "domain": self.domain,
            "prompts": [p.to_json() for p in self.prompts],
            "prompt_kind": self.prompt_kind,
            "task": self.task,
            "turns": [{"role": t.role, "text": t.text} for t in self.turns],
            "provenance": {"source": self.source, "generator": self.generator},
        }
        if self.prompt_channel != "encoder":
            out["prompt_channel"] = self.prompt_channel
            out["text_coords"] = [list(c) for c in self.text_coords]
        return out

    @staticmethod
    def from_json(obj: dict) -> "InstructionSample":
        return InstructionSample(
            sample_id=obj["sample_id"],
            image_path=obj["image_path"],
            domain=obj["domain"],
            prompts=tuple(prompt_from_json(p) for p in obj["prompts"]),
            prompt_kind=obj["prompt_kind"],
            task=obj["task"],
            turns=tuple(Turn(t["role"], t["text"]) for t in obj["turns"]),
            source=obj["provenance"]["source"],
            generator=obj["provenance"]["generator"],
            prompt_channel=obj.get("prompt_channel", "encoder"),
            text_coords=tuple(tuple(c) for c in obj.get("text_coords", ())),
        )


def sample_violations(sample: InstructionSample) -> list[str]:
    """All invariant violations, empty when the sample is valid."""
    problems: list[str] = []
    if sample.task not in TASK_TAGS:
        problems.append(f"unknown task {sample.task!r}")
    if sample.domain not in DOMAINS:
        problems.append(f"unknown domain {sample.domain!r}")
    if sample.prompt_kind not in ("point", "box"):
        problems.append(f"unknown prompt_kind {sample.prompt_kind!r}")
    roles = {t.role for t in sample.turns}
    if "user" not in roles or "assistant" not in roles:
        problems.append("needs at least one user and one assistant turn")
    if any(t.role not in ("user", "assistant") for t in sample.turns):
        problems.append("turn role outside user/assistant")
    if any(not t.text.strip() for t in sample.turns):
        problems.append("empty turn text")
    if sample.prompt_channel == "encoder":
        if not sample.prompts:
            problems.append("prompts empty")
        if sample.text_coords:
            problems.append("text_coords present on encoder-channel sample")
    elif sample.prompt_channel == "text":
        if sample.prompts:
            problems.append("prompts present on text-channel sample")
        if not sample.text_coords:
            problems.append("text_coords empty")
    else:
        problems.append(f"unknown prompt_channel {sample.prompt_channel!r}")
    n = sample.n_marks()
    for turn in sample.turns:
        for match in MARK_TOKEN.finditer(turn.text):
            k = int(match.group(1))
            if not 1 <= k <= n:
                problems.append(f"mark token <Mark {k}> outside 1..{n}")
    return problems


def validate_sample(sample: InstructionSample) -> None:
    problems = sample_violations(sample)
    if problems:
        raise InvalidSample("; ".join(problems))


# --- JSONL ------------------------------------------------------------------------


def emit_jsonl(samples: list[InstructionSample], path: str) -> None:
    """One validated sample per line, stable field order, UTF-8."""
    seen: set[str] = set()
    lines = []
    for sample in samples:
        validate_sample(sample)
        if sample.sample_id in seen:
            raise DuplicateId(sample.sample_id)
        seen.add(sample.sample_id)
        lines.append(json.dumps(sample.to_json(), ensure_ascii=False, separators=(",", ":")))
    with open(path, "w", encoding="utf-8") as f:
        for line in lines:
            f.write(line)
            f.write("\n")


def load_jsonl(path: str) -> list[InstructionSample]:
    samples = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                samples.append(InstructionSample.from_json(json.loads(line)))
    return samples


# --- stage-1 classification samples --------------------------------------------------


STAGE1_USER_TEMPLATES = (
    "Please identify the category of each marked region in the image.",
    "What is the category of each marked region?",
    "Name the category of every marked region.",
    "For each marked region, tell me its category.",
)


@dataclass
class Stage1Config:
    capacity: int = 16
    augment: bool = False
    augment_cfg: AugmentConfig = field(default_factory=AugmentConfig)
    points_per_region: int = 1


def _chunks(seq: list, size: int) -> list[list]:
    return [seq[i : i + size] for i in range(0, len(seq), size)]


def build_stage1(
    records: list[AnnotationRecord],
    mode: str,
    cfg: Stage1Config,
    seed: int,
) -> tuple[list[InstructionSample], int]:
    """Per image, classification samples asking the category of each mark.

    Box mode uses region boxes (optionally jittered); point mode samples one
    pixel per region from its mask. Images with more regions than the
    encoder capacity split into consecutive samples of at most `capacity`
    prompts, order preserved. Records whose regions carry no labels (or no
    masks in point mode) are skipped; the second return value counts them.
    """
    if mode not in ("point", "box"):
        raise ValueError(f"mode must be point or box, got {mode!r}")
    rng = DeterministicRng(seed)
    samples: list[InstructionSample] = []
    skipped = 0
    for record_idx, record in enumerate(records):
        usable: list[tuple[Region, str]] = []
        for region in record.regions:
            if region.label is None:
                continue
            if mode == "point" and region.mask_counts is None:
                continue
            usable.append((region, region.label))
        if not usable:
            skipped += 1
            continue
        template = STAGE1_USER_TEMPLATES[rng.next_below(len(STAGE1_USER_TEMPLATES))]
        part_seed = rng.next_u64()
        for part_idx, chunk in enumerate(_chunks(usable, cfg.capacity)):
            prompts: list[VisualPrompt] = []
            labels: list[str] = []
            for region_idx, (region, label) in enumerate(chunk):
                if mode == "box":
                    box = region.box
                    if cfg.augment:
                        box = jitter_box(
                            box, cfg.augment_cfg, seed=(part_seed + part_idx * 1000 + region_idx)
                        )
                    prompts.append(box)
                else:
                    mask = region.mask()
                    point = sample_mask_points(
                        mask, k=1, seed=(part_seed + part_idx * 1000 + region_idx)
                    )[0]
                    prompts.append(point)
                labels.append(label)
            answer = "\n".join(f"<Mark {k}>: {label}" for k, label in enumerate(labels, start=1))
            suffix = f"-p{part_idx}" if part_idx else ""
            sample = InstructionSample(
                sample_id=f"stage1-{mode}-{record_idx:04d}-{record.image_id}{suffix}",
                image_path=record.image_path,
                domain=record.domain,
                prompts=tuple(prompts),
                prompt_kind=mode,
                task="stage1-label",
                turns=(Turn("user", template), Turn("assistant", answer)),
                source=record.image_id,
            )
            validate_sample(sample)
            samples.append(sample)
    return samples, skipped


# --- grounding inversion ----------------------------------------------------------------


INVERT_USER_TEMPLATE = (
    "Please write one caption for the image that covers all {n} marked regions."
)


def invert_grounding(record: AnnotationRecord, ordinal: int | None = None) -> InstructionSample:
    """Swap a phrase-grounded caption's inputs and outputs.

    The linked boxes become the input prompts in order of phrase
    appearance; the answer is the original caption with each grounded
    phrase immediately followed by its mark reference(s). A phrase linked
    to several boxes contributes one mark per box. ``ordinal`` keeps
    sample ids unique when several records share an image id.
    """
    if record.caption is None or not record.links:
        raise EmptyRegions(f"record {record.image_id} has no grounded caption")
    prompts: list[VisualPrompt] = []
    pieces: list[str] = []
    cursor = 0
    next_mark = 1
    for link in record.links:  # ingest sorts links by char_start
        pieces.append(record.caption[cursor : link.char_end])
        mark_ids = []
        for rid in link.region_ids:
            prompts.append(record.region_by_id(rid).box)
            mark_ids.append(next_mark)
            next_mark += 1
        pieces.append(" (" + ", ".join(f"Mark {k}" for k in mark_ids) + ")")
        cursor = link.char_end
    pieces.append(record.caption[cursor:])
    answer = "".join(pieces)
    n = len(prompts)
    prefix = f"invert-{ordinal:04d}" if ordinal is not None else "invert"
    sample = InstructionSample(
        sample_id=f"{prefix}-{record.image_id}",
        image_path=record.image_path,
        domain=record.domain,
        prompts=tuple(prompts),
        prompt_kind="box",
        task="multi-target-caption",
        turns=(Turn("user", INVERT_USER_TEMPLATE.format(n=n)), Turn("assistant", answer)),
        source=record.image_id,
    )
    validate_sample(sample)
    return sample


# --- grounding QA reconstruction ------------------------------------------------------------


def reconstruct_qa(record: AnnotationRecord, ordinal: int | None = None) -> list[InstructionSample]:
    """Rewrite grounding QA into prompt-referenced conversations.

    Every referenced region becomes a prompt; each [R<id>] placeholder
    (with any trailing coordinate literal) is replaced by "<Mark k>" where
    k follows first-appearance order across question then answer. QA
    entries without region references are dropped (nothing to prompt).
    """
    prefix = f"qa-{ordinal:04d}" if ordinal is not None else "qa"
    samples: list[InstructionSample] = []
    for qa_idx, entry in enumerate(record.qa):
        order: list[str] = []

        def assign(match: re.Match) -> str:
            rid = match.group(1)
            if rid not in order:
                order.append(rid)
            return f"<Mark {order.index(rid) + 1}>"

        question = PLACEHOLDER.sub(assign, entry.question)
        answer = PLACEHOLDER.sub(assign, entry.answer)
        if not order:
            continue
        prompts = tuple(record.region_by_id(rid).box for rid in order)
        sample = InstructionSample(
            sample_id=f"{prefix}-{record.image_id}-{qa_idx}",
            image_path=record.image_path,
            domain=record.domain,
            prompts=prompts,
            prompt_kind="box",
            task="qa",
            turns=(Turn("user", question), Turn("assistant", answer)),
            source=record.image_id,
        )
        validate_sample(sample)
        samples.append(sample)
    return samples


# --- templates and prompt assembly ------------------------------------------------------------


_ROLE_HEADER = re.compile(r"<Role\s*(\d+)\s*\(([^)]*)\)>")

# first-sentence wording of the public wrapper per domain
_DOMAIN_SURFACE = {domain: "image" for domain in DOMAINS} | {"screenshot": "screen-shot"}
_MARKER_PHRASES = {
    "point-dot": "a green point",
    "box-outline": "a green rectangle",
    "polygon-outline": "a red polygon",
}
_COUNT_WORDS = {1: "one", 2: "two", 3: "three", 4: "four", 5: "five"}


@dataclass(frozen=True)
class RoleSpec:
    index: int
    title: str
    kind: str  # per_mark | relationship | qa


@dataclass(frozen=True)
class RoleTemplateSet:
    """One domain's role prompt, format block, and declared role kinds."""

    domain: str
    role_text: str
    format_text: str
    public_text: str
    roles: tuple[RoleSpec, ...]


def _role_kind(title: str) -> str:
    lowered = title.lower()
    if "q&a" in lowered or "conversation" in lowered:
        return "qa"
    if "relationship" in lowered:
        return "relationship"
    return "per_mark"


def _read_template(rel_path: str, template_dir: str | None) -> str:
    if template_dir is not None:
        path = Path(template_dir) / rel_path
        if not path.exists():
            raise UnknownDomain(rel_path)
        return path.read_text(encoding="utf-8")
    base = resources.files("vptk") / "templates"
    target = base / rel_path
    try:
        return target.read_text(encoding="utf-8")
    except (FileNotFoundError, NotADirectoryError) as exc:
        raise UnknownDomain(rel_path) from exc


def load_role_templates(domain: str, template_dir: str | None = None) -> RoleTemplateSet:
    """Load a domain's template set from the packaged (or given) directory."""
    role_text = _read_template(f"{domain}/role.txt", template_dir)
    format_text = _read_template(f"{domain}/format.txt", template_dir)
    public_text = _read_template("public.txt", template_dir)
    roles = tuple(
        RoleSpec(index=int(m.group(1)), title=m.group(2).strip(), kind=_role_kind(m.group(2)))
        for m in _ROLE_HEADER.finditer(role_text)
    )
    if not roles:
        raise UnknownDomain(f"{domain}: role.txt declares no roles")
    return RoleTemplateSet(
        domain=domain,
        role_text=role_text,
        format_text=format_text,
        public_text=public_text,
        roles=roles,
    )


@dataclass(frozen=True)
class MarkPlanEntry:
    mark_id: int
    region_id: str
    style: MarkStyle


def category_block(labels: list[str]) -> str:
    return "\n".join(f"<Mark {k}>: {label}" for k, label in enumerate(labels, start=1))


def assemble_gpt4v_prompt(
    record: AnnotationRecord,
    domain: str,
    template_dir: str | None = None,
    prompt_kind: str = "box",
) -> tuple[str, list[MarkPlanEntry]]:
    """Build the full generation prompt plus the mark rendering plan.

    The prompt is the public wrapper with the per-mark category list and
    the domain's role/format blocks spliced in; the plan names each
    region's mark id and draw style (mark order = region order).
    """
    if not record.regions:
        raise EmptyRegions(f"record {record.image_id} has no regions")
    templates = load_role_templates(domain, template_dir)
    labels = [r.label or "object" for r in record.regions]
    style = style_for_domain(domain, prompt_kind)
    count_word = _COUNT_WORDS.get(len(templates.roles), str(len(templates.roles)))
    text = (
        templates.public_text.replace("<<SURFACE>>", _DOMAIN_SURFACE[domain])
        .replace("<<MARKER>>", _MARKER_PHRASES[style.shape])
        .replace("<<CATEGORIES>>", category_block(labels))
        .replace("<<ROLE_COUNT>>", count_word)
        .replace("<<ROLE>>", templates.role_text.strip())
        .replace("<<FORMAT>>", templates.format_text.strip())
    )
    plan = [
        MarkPlanEntry(mark_id=k, region_id=r.region_id, style=style)
        for k, r in enumerate(record.regions, start=1)
    ]
    return text, plan


# --- response parsing ------------------------------------------------------------------------


_QA_LINE = re.compile(
    r'^\{\s*"question"\s*:\s*"(?P<q>.*?)"\s*,\s*"[aA]nswer"\s*:\s*"(?P<a>.*?)"\s*\}\s*,?$'
)
_MARK_LINE = re.compile(r"^<Mark (\d+)>\s*:\s*(.*)$")
_REL_LINE = re.compile(r"^((?:<Mark \d+>\s*)+):\s*(.*)$")


def normalize_mark_tokens(text: str) -> str:
    """Canonicalize "<Region k>" and spaced "<Mark  k>" to "<Mark k>"."""
    text = REGION_TOKEN.sub(lambda m: f"<Mark {int(m.group(1))}>", text)
    text = re.sub(r"<Mark\s+(\d+)\s*>", lambda m: f"<Mark {int(m.group(1))}>", text)
    return text


@dataclass(frozen=True)
class ParsedResponse:
    """Structured view of one sectioned generation response."""

    per_mark: dict[int, dict[int, str]]  # role index -> mark id -> text
    relationships: dict[int, list[tuple[tuple[int, ...], str]]]
    qa_pairs: dict[int, list[tuple[str, str]]]


def parse_gpt4v_response(text: str, expected_roles: list[str], n_marks: int) -> ParsedResponse:
    """Parse a sectioned response against the declared role kinds.

    ``expected_roles`` lists the kind of each role section in order
    (per_mark | relationship | qa). Raises IncompleteResponse when a
    per-mark section misses ids, MalformedResponse on unparseable lines;
    both carry the raw text for retry logic.
    """
    canonical = normalize_mark_tokens(text)
    headers = list(_ROLE_HEADER.finditer(canonical))
    if len(headers) < len(expected_roles):
        missing_role = len(headers) + 1
        raise IncompleteResponse(missing_role, set(range(1, n_marks + 1)), text)

    sections: list[str] = []
    for i, header in enumerate(headers[: len(expected_roles)]):
        start = header.end()
        end = headers[i + 1].start() if i + 1 < len(headers) else len(canonical)
        sections.append(canonical[start:end])

    per_mark: dict[int, dict[int, str]] = {}
    relationships: dict[int, list[tuple[tuple[int, ...], str]]] = {}
    qa_pairs: dict[int, list[tuple[str, str]]] = {}

    for role_idx, (kind, section) in enumerate(zip(expected_roles, sections), start=1):
        lines = [l.strip() for l in section.splitlines() if l.strip()]
        if kind == "per_mark":
            entries: dict[int, str] = {}
            for line in lines:
                m = _MARK_LINE.match(line)
                if m:
                    entries[int(m.group(1))] = m.group(2).strip()
            expected_ids = set(range(1, n_marks + 1))
            missing = expected_ids - set(entries)
            if missing:
                raise IncompleteResponse(role_idx, missing, text)
            extra = set(entries) - expected_ids
            if extra:
                raise MalformedResponse(0, f"role {role_idx} has unexpected marks {sorted(extra)}", text)
            per_mark[role_idx] = entries
        elif kind == "relationship":
            entries_rel: list[tuple[tuple[int, ...], str]] = []
            for line in lines:
                m = _REL_LINE.match(line)
                if not m:
                    continue
                ids = tuple(int(x) for x in re.findall(r"<Mark (\d+)>", m.group(1)))
                entries_rel.append((ids, m.group(2).strip()))
            if not entries_rel:
                raise IncompleteResponse(role_idx, set(range(1, n_marks + 1)), text)
            relationships[role_idx] = entries_rel
        elif kind == "qa":
            pairs: list[tuple[str, str]] = []
            for line_no, line in enumerate(lines, start=1):
                if not line.startswith("{"):
                    continue
                m = _QA_LINE.match(line)
                if m:
                    pairs.append((m.group("q"), m.group("a")))
                    continue
                try:
                    obj = json.loads(line.rstrip(","))
                    question = obj["question"]
                    answer = obj.get("answer", obj.get("Answer"))
                    if answer is None:
                        raise KeyError("answer")
                    pairs.append((str(question), str(answer)))
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise MalformedResponse(line_no, f"bad QA line: {exc}", text) from exc
            if not pairs:
                raise MalformedResponse(0, f"role {role_idx} produced no QA pairs", text)
            qa_pairs[role_idx] = pairs
        else:
            raise ValueError(f"unknown expected role kind {kind!r}")
    return ParsedResponse(per_mark=per_mark, relationships=relationships, qa_pairs=qa_pairs)


def render_gpt4v_response(
    roles: list[tuple[str, str, object]],
) -> str:
    """Inverse of `parse_gpt4v_response` for well-formed content.

    ``roles`` holds (kind, title, payload) triples where payload matches the
    kind: {mark: text}, [(ids, text)], or [(q, a)]. Used to build synthetic
    responses for tests and mock services.
    """
    parts: list[str] = []
    for idx, (kind, title, payload) in enumerate(roles, start=1):
        parts.append(f"<Role {idx} ({title})>")
        if kind == "per_mark":
            for k in sorted(payload):
                parts.append(f"<Mark {k}>: {payload[k]}")
        elif kind == "relationship":
            for ids, text in payload:
                parts.append("".join(f"<Mark {k}>" for k in ids) + f": {text}")
        elif kind == "qa":
            for q, a in payload:
                parts.append(json.dumps({"question": q, "answer": a}, ensure_ascii=False))
        else:
            raise ValueError(f"unknown role kind {kind!r}")
    return "\n".join(parts) + "\n"


# --- generation pipeline wiring -----------------------------------------------------------------


GEN_USER_TEMPLATES = {
    "brief-caption": "Please provide a brief description of each marked region in the image.",
    "detailed-caption": "Please provide a detailed description of each marked region in the image.",
    "inter-relationship": "Please analyze the relationships between the marked regions in the image.",
}

# canonical task phrasings used when building evaluation queries
EVAL_PROMPT_PHRASINGS = {
    "brief-caption": GEN_USER_TEMPLATES["brief-caption"],
    "detailed-caption": GEN_USER_TEMPLATES["detailed-caption"],
    "binary": (
        "Please identify the labels of each marked region in the image. "
        "Is the region a (Class A) or a (Class B)?"
    ),
    "regional-ocr": "Please provide the OCR results for the marked region in the image.",
}


def samples_from_response(
    record: AnnotationRecord,
    parsed: ParsedResponse,
    roles: tuple[RoleSpec, ...],
    prompt_kind: str = "box",
) -> list[InstructionSample]:
    """Turn one parsed generation response into instruction samples.

    Per-mark roles become listing samples (first per-mark role is the brief
    caption, later ones detailed); relationship roles one analysis sample;
    QA roles one multi-turn conversation sample.
    """
    prompts = tuple(r.box for r in record.regions)
    samples: list[InstructionSample] = []
    per_mark_seen = 0
    for spec in roles:
        if spec.kind == "per_mark":
            entries = parsed.per_mark.get(spec.index)
            if entries is None:
                continue
            task = "brief-caption" if per_mark_seen == 0 and len(parsed.per_mark) > 1 else "detailed-caption"
            per_mark_seen += 1
            answer = "\n".join(f"<Mark {k}>: {entries[k]}" for k in sorted(entries))
            samples.append(
                InstructionSample(
                    sample_id=f"gen-{record.image_id}-r{spec.index}",
                    image_path=record.image_path,
                    domain=record.domain,
                    prompts=prompts,
                    prompt_kind=prompt_kind,
                    task=task,
                    turns=(Turn("user", GEN_USER_TEMPLATES[task]), Turn("assistant", answer)),
                    source=record.image_id,
                    generator="gpt4v",
                )
            )
        elif spec.kind == "relationship":
            entries_rel = parsed.relationships.get(spec.index)
            if not entries_rel:
                continue
            answer = "\n".join(
                "".join(f"<Mark {k}>" for k in ids) + f": {text}" for ids, text in entries_rel
            )
            samples.append(
                InstructionSample(
                    sample_id=f"gen-{record.image_id}-r{spec.index}",
                    image_path=record.image_path,
                    domain=record.domain,
                    prompts=prompts,
                    prompt_kind=prompt_kind,
                    task="inter-relationship",
                    turns=(
                        Turn("user", GEN_USER_TEMPLATES["inter-relationship"]),
                        Turn("assistant", answer),
                    ),
                    source=record.image_id,
                    generator="gpt4v",
                )
            )
        elif spec.kind == "qa":
            pairs = parsed.qa_pairs.get(spec.index)
            if not pairs:
                continue
            turns: list[Turn] = []
            for q, a in pairs:
                turns.append(Turn("user", q))
                turns.append(Turn("assistant", a))
            samples.append(
                InstructionSample(
                    sample_id=f"gen-{record.image_id}-r{spec.index}",
                    image_path=record.image_path,
                    domain=record.domain,
                    prompts=prompts,
                    prompt_kind=prompt_kind,
                    task="qa",
                    turns=tuple(turns),
                    source=record.image_id,
                    generator="gpt4v",
                )
            )
    for sample in samples:
        validate_sample(sample)
    return samples


def generate_with_model(
    records: list[AnnotationRecord],
    domain: str,
    complete_fn,
    render_fn,
    template_dir: str | None = None,
    prompt_kind: str = "box",
) -> tuple[list[InstructionSample], list[dict]]:
    """Drive the assisted-generation loop over a record batch.

    ``complete_fn(prompt_text, png_bytes) -> response_text`` abstracts the
    model client; ``render_fn(record, plan) -> png_bytes`` produces the
    marked image. A response that fails parsing gets exactly one stricter
    re-request; a second failure quarantines the record into the reject
    list (image id, error, raw text) instead of raising.
    """
    templates = load_role_templates(domain, template_dir)
    kinds = [r.kind for r in templates.roles]
    samples: list[InstructionSample] = []
    rejects: list[dict] = []
    for record in records:
        prompt, plan = assemble_gpt4v_prompt(record, domain, template_dir, prompt_kind)
        png = render_fn(record, plan)
        n = len(record.regions)
        reply = complete_fn(prompt, png)
        try:
            parsed = parse_gpt4v_response(reply, kinds, n)
        except (IncompleteResponse, MalformedResponse) as first_error:
            strict = (
                prompt
                + "\n\nYour previous reply did not follow the required format. Answer again"
                " and follow the output templates exactly, covering every mark."
            )
            reply = complete_fn(strict, png)
            try:
                parsed = parse_gpt4v_response(reply, kinds, n)
            except (IncompleteResponse, MalformedResponse) as second_error:
                rejects.append(
                    {
                        "image_id": record.image_id,
                        "first_error": str(first_error),
                        "second_error": str(second_error),
                        "raw_text": reply,
                    }
                )
                continue
        samples.extend(samples_from_response(record, parsed, templates.roles, prompt_kind))
    return samples, rejects


# --- ablation baseline -----------------------------------------------------------------------


def coords_in_text_baseline(sample: InstructionSample) -> InstructionSample:
    """Move box prompts out of the prompt channel into the prompt text.

    The first user turn gains a coordinate preamble naming each mark's
    normalized corners at 3-decimal precision; the prompt channel empties.
    Point-prompt samples are unsupported (the ablation is defined on boxes).
    """
    if sample.prompt_kind != "box" or any(not isinstance(p, BoxPrompt) for p in sample.prompts):
        raise Unsupported("coords-in-text baseline applies to box-prompt samples only")
    coords = tuple(
        (round(p.x1, 3), round(p.y1, 3), round(p.x2, 3), round(p.y2, 3)) for p in sample.prompts
    )
    preamble_lines = [
        f"<Mark {k}> is the region [{c[0]:.3f},{c[1]:.3f},{c[2]:.3f},{c[3]:.3f}]."
        for k, c in enumerate(coords, start=1)
    ]
    preamble = "\n".join(preamble_lines)
    new_turns = []
    prefixed = False
    for turn in sample.turns:
        if turn.role == "user" and not prefixed:
            new_turns.append(Turn("user", preamble + "\n" + turn.text))
            prefixed = True
        else:
            new_turns.append(turn)
    out = replace(
        sample,
        sample_id=sample.sample_id + "-coords",
        prompts=(),
        prompt_channel="text",
        text_coords=coords,
        turns=tuple(new_turns),
    )
    validate_sample(out)
    return out


def parse_text_coords(text: str) -> list[tuple[float, float, float, float]]:
    """Read back the bracketed coordinate groups a baseline sample emits."""
    groups = re.findall(r"\[(\d\.\d{3}),(\d\.\d{3}),(\d\.\d{3}),(\d\.\d{3})\]", text)
    return [tuple(float(v) for v in g) for g in groups]
