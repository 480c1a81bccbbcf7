"""End-to-end orchestration: volume in, labelled report out.

``run_detection_pipeline`` chains the stages: plan patches, extract and
run the detection backend per patch, stitch, decode landmarks, group
quadrilaterals, link slices into 3D instances, then label the instances
via appearance vectors, recalibration, the height probability map and
beam decoding. ``run_grading`` adds intervertebral volumes and grading
scores for the lumbar level pairs. Both are deterministic: the same
volume, backend and config produce byte-identical reports.
"""

import math

import numpy as np

from . import backends as backends_mod
from . import decode, ivv, labelling, patches
from .backends import call_backend
from .config import PipelineConfig
from .errors import NoGradablePairs
from .report import DetectionReport, IVVRecord, PolygonRecord, VertebraRecord

# Level pairs eligible for grading, bottom-up. Pairs above L1-T12 are
# reported ungraded because grading models are trained only this far.
GRADABLE_PAIRS = (
    ("S1", "L5"),
    ("L5", "L4"),
    ("L4", "L3"),
    ("L3", "L2"),
    ("L2", "L1"),
    ("L1", "T12"),
)


def _vertebra_record(level: str, vertebra: decode.Vertebra3D) -> VertebraRecord:
    polygons = []
    for s in sorted(vertebra.polygons):
        poly = vertebra.polygons[s]
        polygons.append(
            PolygonRecord(
                slice_index=s,
                tl=tuple(poly.corner("tl")),
                tr=tuple(poly.corner("tr")),
                br=tuple(poly.corner("br")),
                bl=tuple(poly.corner("bl")),
                centroid=tuple(poly.centroid),
                score=poly.score,
            )
        )
    return VertebraRecord(
        level=level,
        confidence=vertebra.confidence,
        centroid=tuple(vertebra.centroid_3d),
        bounds=vertebra.bounds,
        polygons=tuple(polygons),
    )


def _vertebra_from_record(record: VertebraRecord) -> decode.Vertebra3D:
    polygons = {}
    for p in record.polygons:
        polygons[p.slice_index] = decode.VBPolygon(
            slice_index=p.slice_index,
            corners=np.array([p.tl, p.tr, p.br, p.bl], dtype=np.float64),
            centroid=np.array(p.centroid, dtype=np.float64),
            score=p.score,
        )
    return decode.Vertebra3D(polygons=polygons)


def run_detection_pipeline(
    volume,
    backend: backends_mod.ModelBackend,
    config: PipelineConfig | None = None,
    refinement=None,
) -> DetectionReport:
    """Detect, link and label vertebrae; returns an ungraded report.

    A scan in which nothing is detected yields an empty report rather
    than an error. Instances are reported bottom-to-top (descending
    centroid row).
    """
    config = config or PipelineConfig()
    n_slices, height, width = volume.data.shape
    grid = patches.plan_patches(
        (height, width),
        (volume.spacing[1], volume.spacing[2]),
        config.edge_mm,
        config.overlap_frac,
        config.out_px,
    )
    out_dims = (config.out_px, config.out_px)

    per_slice = []
    for s in range(n_slices):
        outputs = []
        for spec in grid.specs:
            patch = patches.extract_patch(volume.data[s], spec, out_dims)
            raw = call_backend(backend.detect, patch)
            outputs.append((spec, backends_mod.check_detect_output(raw, out_dims)))
        tensor = patches.reassemble(outputs, (height, width))
        landmarks = decode.decode_landmarks(tensor[:5], config.detect_threshold)
        grp = tensor[5:].reshape(4, 2, height, width)
        polygons = decode.group_quadrilaterals(landmarks, grp, slice_index=s)
        per_slice.append((s, polygons))

    vertebrae = decode.link_slices(per_slice, config.iou_threshold)
    if not vertebrae:
        return DetectionReport()
    # Bottom-to-top: descending centroid row, then slice and column for
    # deterministic ordering of pathological ties.
    vertebrae.sort(key=lambda v: (-v.centroid_3d[1], v.centroid_3d[0], v.centroid_3d[2]))

    detections = []
    heights = []
    for vertebra in vertebrae:
        context = labelling.extract_vb_context_volume(
            volume,
            vertebra,
            config.expand_axial_coronal,
            config.expand_sagittal,
        )
        raw = call_backend(backend.appearance, context)
        probs = backends_mod.check_appearance_output(raw)
        probs = labelling.recalibrate(probs, config.softmax_temperature)
        _, _, r0, r1, _, _ = vertebra.bounds
        h1 = min(max(int(math.floor(r0)), 0), height - 1)
        h2 = min(max(int(math.ceil(r1)), 0), height - 1)
        detections.append((h1, h2, probs))
        heights.append(float(vertebra.centroid_3d[1]))

    pmap = labelling.build_height_map(detections, height)
    pmap = labelling.refine(pmap, refinement)
    sequence = labelling.beam_decode(
        pmap, heights, config.beam_width, config.skip_penalty
    )
    records = tuple(
        _vertebra_record(level, vertebra)
        for level, vertebra in zip(sequence.labels, vertebrae)
    )
    return DetectionReport(vertebrae=records)


def run_grading(
    volume,
    report: DetectionReport,
    backend: backends_mod.ModelBackend,
) -> DetectionReport:
    """Locate and grade the lumbar intervertebral volumes.

    Every consecutive pair from S1-L5 up to L1-T12 whose two levels both
    appear in the report is located, extracted and sent to the backend.
    Raises :class:`NoGradablePairs` when no pair qualifies.
    """
    by_level = {record.level: record for record in report.vertebrae}
    pairs = [
        (lower, upper)
        for lower, upper in GRADABLE_PAIRS
        if lower in by_level and upper in by_level
    ]
    if not pairs:
        raise NoGradablePairs("report holds no consecutive gradable level pair")

    ivv_records = []
    for lower, upper in pairs:
        spec = ivv.locate_ivv(
            _vertebra_from_record(by_level[upper]),
            _vertebra_from_record(by_level[lower]),
            level_pair=(upper, lower),
        )
        block = ivv.extract_ivv_volume(volume, spec)
        scores = backends_mod.check_grade_output(call_backend(backend.grade, block))
        ivv_records.append(
            IVVRecord(
                upper_level=upper,
                lower_level=lower,
                center=spec.center,
                rotation_rad=spec.rotation_rad,
                width_px=spec.width_px,
                height_px=spec.height_px,
                slice_range=spec.slice_range,
                scores=scores,
            )
        )
    return DetectionReport(vertebrae=report.vertebrae, ivvs=tuple(ivv_records))
