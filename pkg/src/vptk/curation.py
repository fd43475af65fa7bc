"""Human review service: the filtering pass that turns generated candidate
samples into a benchmark.

Candidates load once; every reviewer decision (accept / reject / edit with
a full replacement sample) appends to a JSONL log before it is
acknowledged, and the in-memory state is always exactly the replay of
that log over the candidate set. Later decisions supersede earlier ones
per sample, so reviewers can change their minds without log mutation, the
log stays append-only, and any crash recovers by replaying the prefix
that made it to disk.

Queueing uses leases, not assignment: `next_pending` hands the
lowest-ordinal pending sample not currently leased to someone else, and a
lease silently expires after ten minutes so abandoned sessions never
strand a sample.

The HTTP surface (FastAPI) is documented in `build_app`; all responses
are JSON except the overlay PNG endpoint. A static frontend directory can
be mounted at / for the browser review UI.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from .construct import InstructionSample, sample_violations
from .geometry import VisualPromptSet
from .som_render import BadImage, render_marks, style_for_domain

LEASE_SECONDS = 600.0


class CorruptLog(ValueError):
    """A decision log line failed to parse; message names the line."""


class NotFound(KeyError):
    """Decision references a sample id outside the candidate set."""


class BadEdit(ValueError):
    """Edit payload violates sample invariants; carries the violation list."""

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


@dataclass(frozen=True)
class CurationDecision:
    timestamp: float
    sample_id: str
    reviewer: str
    action: str  # accept | reject | edit
    edit: InstructionSample | None = None
    note: str = ""

    def to_json(self) -> dict:
        out = {
            "timestamp": self.timestamp,
            "sample_id": self.sample_id,
            "reviewer": self.reviewer,
            "action": self.action,
            "note": self.note,
        }
        out["edit"] = self.edit.to_json() if self.edit is not None else None
        return out

    @staticmethod
    def from_json(obj: dict) -> "CurationDecision":
        edit = obj.get("edit")
        return CurationDecision(
            timestamp=float(obj["timestamp"]),
            sample_id=obj["sample_id"],
            reviewer=obj["reviewer"],
            action=obj["action"],
            edit=InstructionSample.from_json(edit) if edit else None,
            note=obj.get("note", ""),
        )


class CurationStore:
    """Candidates + append-only decision log + derived per-sample status.

    All log appends serialize through one lock and fsync before the call
    returns; readers see a state identical to replaying the on-disk log.
    """

    def __init__(self, candidates: list[InstructionSample], log_path: str, time_fn=time.time):
        self._order = [s.sample_id for s in candidates]
        self._candidates = {s.sample_id: s for s in candidates}
        if len(self._candidates) != len(candidates):
            raise ValueError("duplicate sample ids in candidate set")
        self._log_path = log_path
        self._time = time_fn
        self._lock = threading.Lock()
        self._status: dict[str, str] = {sid: "pending" for sid in self._order}
        self._edits: dict[str, InstructionSample] = {}
        self._leases: dict[str, tuple[str, float]] = {}  # sample_id -> (reviewer, expiry)
        self._replay()
        self._log_file = open(self._log_path, "a", encoding="utf-8")

    # --- log ------------------------------------------------------------------

    def _replay(self) -> None:
        path = Path(self._log_path)
        if not path.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
            path.touch()
            return
        with open(path, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                if not line.endswith("\n"):
                    raise CorruptLog(f"line {line_no}: truncated (no trailing newline)")
                try:
                    decision = CurationDecision.from_json(json.loads(line))
                except (json.JSONDecodeError, KeyError, ValueError) as exc:
                    raise CorruptLog(f"line {line_no}: {exc}") from exc
                self._apply(decision, validate=False)

    def _apply(self, decision: CurationDecision, validate: bool) -> None:
        sid = decision.sample_id
        if sid not in self._candidates:
            raise NotFound(sid)
        if decision.action == "accept":
            self._status[sid] = "accepted"
            self._edits.pop(sid, None)
        elif decision.action == "reject":
            self._status[sid] = "rejected"
            self._edits.pop(sid, None)
        elif decision.action == "edit":
            if decision.edit is None:
                raise BadEdit(["edit action without replacement sample"])
            if validate:
                problems = sample_violations(decision.edit)
                if decision.edit.sample_id != sid:
                    problems.append("edited sample_id must match the original")
                if problems:
                    raise BadEdit(problems)
            self._status[sid] = "edited"
            self._edits[sid] = decision.edit
        else:
            raise BadEdit([f"unknown action {decision.action!r}"])

    def record(self, decision: CurationDecision) -> dict:
        """Validate, apply, and durably append one decision."""
        with self._lock:
            self._apply(decision, validate=True)
            self._log_file.write(json.dumps(decision.to_json(), ensure_ascii=False))
            self._log_file.write("\n")
            self._log_file.flush()
            os.fsync(self._log_file.fileno())
            self._leases.pop(decision.sample_id, None)
            return {"sample_id": decision.sample_id, "status": self._status[decision.sample_id]}

    # --- queue -----------------------------------------------------------------

    def next_pending(self, reviewer: str) -> InstructionSample | None:
        now = self._time()
        with self._lock:
            for sid, (holder, expiry) in list(self._leases.items()):
                if expiry <= now:
                    del self._leases[sid]
            for sid in self._order:
                if self._status[sid] != "pending":
                    continue
                lease = self._leases.get(sid)
                if lease is not None and lease[0] != reviewer:
                    continue
                self._leases[sid] = (reviewer, now + LEASE_SECONDS)
                return self._candidates[sid]
        return None

    # --- views -----------------------------------------------------------------

    def sample(self, sample_id: str) -> InstructionSample:
        sid = sample_id
        if sid not in self._candidates:
            raise NotFound(sid)
        return self._edits.get(sid, self._candidates[sid])

    def status(self, sample_id: str) -> str:
        if sample_id not in self._status:
            raise NotFound(sample_id)
        return self._status[sample_id]

    def stats(self) -> dict:
        counts = {"pending": 0, "accepted": 0, "rejected": 0, "edited": 0}
        with self._lock:
            for status in self._status.values():
                counts[status] += 1
        counts["total"] = len(self._order)
        return counts

    def export(self, statuses: tuple[str, ...] = ("accepted", "edited")) -> list[InstructionSample]:
        """Kept samples in candidate order: accepted verbatim, edits applied."""
        out = []
        with self._lock:
            for sid in self._order:
                if self._status[sid] in statuses:
                    out.append(self._edits.get(sid, self._candidates[sid]))
        return out

    def export_jsonl(self, statuses: tuple[str, ...] = ("accepted", "edited")) -> bytes:
        lines = [
            json.dumps(s.to_json(), ensure_ascii=False, separators=(",", ":"))
            for s in self.export(statuses)
        ]
        return ("\n".join(lines) + "\n" if lines else "").encode("utf-8")

    def close(self) -> None:
        self._log_file.close()


def load_store(candidates_path: str, log_path: str, time_fn=time.time) -> CurationStore:
    from .construct import load_jsonl

    return CurationStore(load_jsonl(candidates_path), log_path, time_fn=time_fn)


# --- HTTP surface ---------------------------------------------------------------------


def build_app(store: CurationStore, image_root: str = ".", frontend_dir: str | None = None):
    """FastAPI app over a store.

    GET  /api/stats                     -> status counts
    GET  /api/queue/next?reviewer=NAME  -> next leased pending sample or null
    GET  /api/samples/{id}              -> current (possibly edited) sample
    POST /api/decisions                 -> record accept/reject/edit
    GET  /api/export?status=accepted    -> curated JSONL
    GET  /api/images/{id}?marks=1       -> PNG, set-of-marks overlay optional
    """
    from fastapi import FastAPI, HTTPException, Query, Response
    from fastapi.staticfiles import StaticFiles

    app = FastAPI(title="curation service")

    @app.get("/api/stats")
    def stats():
        return store.stats()

    @app.get("/api/queue/next")
    def queue_next(reviewer: str = Query(min_length=1)):
        sample = store.next_pending(reviewer)
        if sample is None:
            return {"sample": None}
        return {"sample": sample.to_json(), "status": store.status(sample.sample_id)}

    @app.get("/api/samples/{sample_id}")
    def get_sample(sample_id: str):
        try:
            sample = store.sample(sample_id)
        except NotFound:
            raise HTTPException(status_code=404, detail=f"unknown sample {sample_id}")
        return {"sample": sample.to_json(), "status": store.status(sample_id)}

    @app.post("/api/decisions")
    def post_decision(payload: dict):
        try:
            decision = CurationDecision(
                timestamp=float(payload.get("timestamp") or time.time()),
                sample_id=payload["sample_id"],
                reviewer=payload["reviewer"],
                action=payload["action"],
                edit=(
                    InstructionSample.from_json(payload["edit"])
                    if payload.get("edit")
                    else None
                ),
                note=payload.get("note", ""),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=f"bad decision payload: {exc}")
        try:
            return store.record(decision)
        except NotFound as exc:
            raise HTTPException(status_code=404, detail=f"unknown sample {exc}")
        except BadEdit as exc:
            raise HTTPException(status_code=409, detail={"violations": exc.violations})

    @app.get("/api/export")
    def export(status: str = "accepted"):
        statuses = ("accepted", "edited") if status == "accepted" else (status,)
        return Response(content=store.export_jsonl(statuses), media_type="application/jsonl")

    @app.get("/api/images/{sample_id}")
    def image(sample_id: str, marks: int = 0):
        try:
            sample = store.sample(sample_id)
        except NotFound:
            raise HTTPException(status_code=404, detail=f"unknown sample {sample_id}")
        path = str(Path(image_root) / sample.image_path)
        try:
            if marks:
                overlay = render_marks(
                    path,
                    VisualPromptSet(sample.prompts),
                    style_for_domain(sample.domain, sample.prompt_kind),
                )
                return Response(content=overlay.png_bytes, media_type="image/png")
            with open(path, "rb") as f:
                return Response(content=f.read(), media_type="image/png")
        except (BadImage, OSError):
            raise HTTPException(status_code=404, detail=f"image unavailable for {sample_id}")

    if frontend_dir and Path(frontend_dir).is_dir():
        app.mount("/", StaticFiles(directory=frontend_dir, html=True), name="frontend")
    return app
