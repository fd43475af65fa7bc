"""Reference training-schedule constants for the two-phase recipe this
toolkit's data feeds.

No trainer lives in this package; these are the documented settings the
alignment pretraining (phase 1: visual prompt encoder + projector, vision
encoder and LLM frozen) and the instruction fine-tuning (phase 2:
projector + LLM, encoders frozen) were run with. They are recorded so
downstream configs can cite one authoritative place.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class TrainPhaseConfig:
    batch_size: int
    epochs: int
    warmup_epochs: float
    learning_rate: float
    lr_schedule: str
    gradient_clip: float
    weight_decay: float
    optimizer: str


ALIGNMENT_PHASE = TrainPhaseConfig(
    batch_size=256,
    epochs=1,
    warmup_epochs=0.03,
    learning_rate=4e-5,
    lr_schedule="cosine",
    gradient_clip=8.0,
    weight_decay=0.0,
    optimizer="adamw",
)

INSTRUCTION_PHASE = TrainPhaseConfig(
    batch_size=64,
    epochs=1,
    warmup_epochs=0.03,
    learning_rate=1e-5,
    lr_schedule="cosine",
    gradient_clip=8.0,
    weight_decay=0.0,
    optimizer="adamw",
)

# LLM input budget the samples must fit within (tokens)
MAX_SEQUENCE_LENGTH = 3072
