"""Experiment runner: persistence, metrics, stage pipeline and CLI."""

from .arrayio import load_array, save_array, sha256_file, write_json, read_json
from .metrics import (
    length_scale,
    min_l2_error,
    relative_error,
    relative_variation,
)
from .pipeline import STAGES, run_pipeline, run_stage

__all__ = [
    "STAGES",
    "length_scale",
    "load_array",
    "min_l2_error",
    "read_json",
    "relative_error",
    "relative_variation",
    "run_pipeline",
    "run_stage",
    "save_array",
    "sha256_file",
    "write_json",
]
