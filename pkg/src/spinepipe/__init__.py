"""Deterministic sagittal spine MRI processing pipeline.

Ingests DICOM series, detects vertebral bodies with a vector-field
regression decoder, labels anatomical levels, extracts intervertebral
volumes and writes CSV/JSON reports. All neural-network inference is
delegated to pluggable backends; everything in this package is exact,
deterministic numerics.
"""

from .config import PipelineConfig
from .dicom import SliceRecord, Volume, assemble_volume, parse_dicom_file, write_dicom
from .pipeline import run_detection_pipeline, run_grading
from .report import DetectionReport, GradingScores, read_report_json, write_report
from .tensorio import read_tensor, write_tensor

__version__ = "0.1.0"

__all__ = [
    "DetectionReport",
    "GradingScores",
    "PipelineConfig",
    "SliceRecord",
    "Volume",
    "assemble_volume",
    "parse_dicom_file",
    "read_report_json",
    "read_tensor",
    "run_detection_pipeline",
    "run_grading",
    "write_dicom",
    "write_report",
    "write_tensor",
    "__version__",
]
