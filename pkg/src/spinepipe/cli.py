"""Command line interface.

Usage::

    spine run --input <dicom-dir> --mode {lumbar|wholespine}
              --backend {oracle|files:<dir>} [--grade]
              --out <path> [--format {csv|json}] [--config <file>]

Exit codes: 0 on success, 2 on input or configuration errors, 3 when a
backend fails or violates its output contract.

The ``oracle`` backend expects an ``oracle.json`` ground-truth sidecar in
the input directory (see :mod:`spinepipe.synthetic`); ``files:<dir>``
reads precomputed tensors from the given directory.
"""

import argparse
import sys
import warnings

from . import synthetic
from .backends import FileBackend, ModelBackend, OracleBackend
from .config import PipelineConfig
from .dicom import assemble_volume, parse_dicom_file
from .errors import BackendFailure, DicomError, ShapeMismatch, SpineError
from .pipeline import run_detection_pipeline, run_grading
from .report import write_report

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_BACKEND = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spine", description="Sagittal spine MRI detection pipeline"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the pipeline on a DICOM series")
    run.add_argument("--input", required=True, help="directory of DICOM slices")
    run.add_argument(
        "--mode",
        choices=("lumbar", "wholespine"),
        default="wholespine",
        help="patch-planning preset (default: wholespine)",
    )
    run.add_argument(
        "--backend",
        required=True,
        help="model backend: 'oracle' or 'files:<directory>'",
    )
    run.add_argument(
        "--grade", action="store_true", help="also grade lumbar intervertebral volumes"
    )
    run.add_argument("--out", required=True, help="report output path")
    run.add_argument(
        "--format", choices=("csv", "json"), default="json", help="report format"
    )
    run.add_argument("--config", help="JSON config file overriding mode defaults")
    return parser


def _load_volume(input_dir):
    from pathlib import Path

    directory = Path(input_dir)
    if not directory.is_dir():
        raise DicomError(f"input directory {directory} does not exist")
    records = []
    skipped = 0
    for path in sorted(directory.iterdir()):
        if not path.is_file() or path.name == synthetic.ORACLE_SIDECAR:
            continue
        try:
            records.append(parse_dicom_file(path.read_bytes()))
        except DicomError as exc:
            skipped += 1
            warnings.warn(f"skipping {path.name}: {exc}", stacklevel=2)
    if not records and skipped:
        raise DicomError(f"no parseable DICOM slices among {skipped} files")
    return assemble_volume(records)


def _make_backend(spec: str, volume, input_dir, config) -> ModelBackend:
    if spec == "oracle":
        annotations = synthetic.load_oracle_sidecar(input_dir)
        return OracleBackend(volume, annotations, config)
    if spec.startswith("files:"):
        return FileBackend(spec[len("files:") :])
    raise SpineError(f"unknown backend {spec!r}")


def run_command(args) -> int:
    config = PipelineConfig.for_mode(args.mode)
    if args.config:
        config = config.with_file(args.config)
    try:
        volume = _load_volume(args.input)
    except (OSError, SpineError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    try:
        backend = _make_backend(args.backend, volume, args.input, config)
        report = run_detection_pipeline(volume, backend, config)
        if args.grade:
            report = run_grading(volume, report, backend)
    except (BackendFailure, ShapeMismatch) as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (OSError, SpineError) as exc:
        # OSError here means sidecar/config material was unreadable.
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    try:
        write_report(report, args.format, args.out)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    levels = ", ".join(v.level for v in report.vertebrae) or "none"
    print(f"{len(report.vertebrae)} vertebrae ({levels}); {len(report.ivvs)} IVVs")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        try:
            return run_command(args)
        except SpineError as exc:
            # Config errors surface here from PipelineConfig parsing.
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INPUT
    return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
