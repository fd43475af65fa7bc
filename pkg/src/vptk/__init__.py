"""vptk: a toolkit for visual prompting data work.

Subpackages cover normalized prompt geometry, a verifiable coordinate
prompt encoder, noise-based prompt augmentation, annotation ingestion,
instruction-sample construction (including set-of-marks prompt assembly
and multimodal-model response parsing), deterministic overlay rendering,
an external judge client, region-level text metrics, benchmark
evaluation, and a human curation service.
"""

__version__ = "0.1.0"
