"""Anatomical level labelling of detected vertebrae.

Each detected vertebra gets an appearance probability vector over the
23-level alphabet S1, L5..L1, T12..T1, C7..C3 (index 0 is S1, index 22 is
C3). Because appearance models are typically overconfident, the vectors
are recalibrated with a temperature softmax before sequence decoding.
Per-vertebra vectors are spread over the image rows each vertebra spans,
forming a height-indexed probability map that an optional refinement
backend may adjust. A beam search then assigns one level per detection,
reading levels bottom-to-top, never repeating a level, and paying a
penalty for each skipped level. The only legal repeats are the anchors at
the ends of the alphabet: a doubled S1 or C3 is resolved after decoding
by relabelling into the extended alphabet (S2 below S1, C2 above C3).
"""

import dataclasses
import math
import warnings
from typing import Sequence

import numpy as np

from . import kernels
from .errors import (
    BackendFailure,
    EmptyDetection,
    NoDetections,
    OutOfRange,
    ShapeMismatch,
)
from .patches import crop_padded

LEVELS = (
    "S1",
    "L5",
    "L4",
    "L3",
    "L2",
    "L1",
    "T12",
    "T11",
    "T10",
    "T9",
    "T8",
    "T7",
    "T6",
    "T5",
    "T4",
    "T3",
    "T2",
    "T1",
    "C7",
    "C6",
    "C5",
    "C4",
    "C3",
)
EXTENDED_LEVELS = ("S2",) + LEVELS + ("C2",)

N_LEVELS = len(LEVELS)
S1 = 0
C3 = N_LEVELS - 1

DEFAULT_TEMPERATURE = 10.0
DEFAULT_BEAM_WIDTH = 100
DEFAULT_SKIP_PENALTY = 0.1
DEFAULT_EXPAND_AXIAL_CORONAL = 1.0
DEFAULT_EXPAND_SAGITTAL = 0.5
CONTEXT_DIMS = (224, 224, 16)

_PROB_EPS = 1e-12
_SUM_TOL = 1e-6


def _check_prob_vector(p: np.ndarray) -> np.ndarray:
    v = np.asarray(p, dtype=np.float64)
    if v.shape != (N_LEVELS,):
        raise ShapeMismatch(f"probability vector must be ({N_LEVELS},), got {v.shape}")
    if (v < 0).any() or abs(float(v.sum()) - 1.0) > _SUM_TOL:
        raise ValueError("probabilities must be non-negative and sum to 1")
    return v


def recalibrate(p: np.ndarray, temperature: float = DEFAULT_TEMPERATURE) -> np.ndarray:
    """Temperature-softmax recalibration of a probability vector.

    Computes ``softmax(log(p + 1e-12) / T)``, which equals the normalized
    power ``(p + 1e-12)^(1/T)``. Temperatures above one flatten the
    distribution; T = 1 reproduces the input up to the epsilon.
    """
    if temperature <= 0.0:
        raise ValueError("temperature must be positive")
    v = _check_prob_vector(p)
    q = np.power(v + _PROB_EPS, 1.0 / temperature)
    return q / q.sum()


@dataclasses.dataclass
class HeightProbabilityMap:
    """Per-image-row level probabilities, shape (H, 23).

    Rows spanned by no detection are all zero; covered rows sum to one.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != N_LEVELS:
            raise ShapeMismatch(f"height map must be (H, {N_LEVELS}), got {v.shape}")
        self.values = v

    def covered_rows(self) -> np.ndarray:
        return self.values.sum(axis=1) > 0.0


def build_height_map(
    detections: Sequence[tuple[int, int, np.ndarray]], height: int
) -> HeightProbabilityMap:
    """Spread per-detection probability vectors over their row spans.

    Each detection is (h1, h2, p) with inclusive row bounds; every row in
    [h1, h2] receives p. Rows covered by several detections average the
    contributing vectors and renormalize.
    """
    if height < 1:
        raise ValueError("height must be positive")
    sums = np.zeros((height, N_LEVELS), dtype=np.float64)
    counts = np.zeros(height, dtype=np.float64)
    for h1, h2, p in detections:
        h1, h2 = int(h1), int(h2)
        if h1 > h2 or h1 < 0 or h2 >= height:
            raise OutOfRange(f"row span [{h1}, {h2}] outside [0, {height - 1}]")
        v = _check_prob_vector(p)
        sums[h1 : h2 + 1] += v
        counts[h1 : h2 + 1] += 1.0
    covered = counts > 0
    out = np.zeros_like(sums)
    out[covered] = sums[covered] / counts[covered, None]
    out[covered] /= out[covered].sum(axis=1, keepdims=True)
    return HeightProbabilityMap(values=out)


def refine(pmap: HeightProbabilityMap, backend=None) -> HeightProbabilityMap:
    """Apply an optional refinement backend to the height map.

    The backend receives a copy of the (H, 23) array and must return an
    array of the same shape whose originally covered rows still sum to
    one within 1e-6. Violations and backend exceptions surface as
    :class:`BackendFailure`.
    """
    if backend is None:
        return HeightProbabilityMap(values=pmap.values.copy())
    try:
        refined = np.asarray(backend.refine(pmap.values.copy()), dtype=np.float64)
    except Exception as exc:
        raise BackendFailure(f"refinement backend raised: {exc!r}") from exc
    if refined.shape != pmap.values.shape:
        raise BackendFailure(
            f"refinement changed shape {pmap.values.shape} -> {refined.shape}"
        )
    if (refined < 0).any():
        raise BackendFailure("refinement produced negative probabilities")
    covered = pmap.covered_rows()
    sums = refined[covered].sum(axis=1)
    if sums.size and np.abs(sums - 1.0).max() > _SUM_TOL:
        raise BackendFailure("refinement broke row normalization")
    return HeightProbabilityMap(values=refined)


@dataclasses.dataclass
class LevelSequence:
    """Decoded level assignment for a bottom-to-top detection sequence."""

    labels: tuple[str, ...]
    log_prob: float
    skipped: int
    doubled_s1: bool = False
    doubled_c3: bool = False
    fallback: bool = False


def beam_decode(
    pmap: HeightProbabilityMap,
    heights: Sequence[float],
    beam_width: int = DEFAULT_BEAM_WIDTH,
    skip_penalty: float = DEFAULT_SKIP_PENALTY,
) -> LevelSequence:
    """Assign levels to detections ordered bottom-to-top.

    ``heights`` are detection centroid rows in *descending* row order
    (image rows grow downward, so the anatomically lowest vertebra comes
    first). Each detection reads the probability row nearest its height.
    A sequence scores the sum of log probabilities plus
    ``max(gap - 1, 0) * log(skip_penalty)`` per transition, where gap is
    the index distance between consecutive levels; levels must strictly
    ascend except that S1 may repeat once at the start and C3 once at the
    end (the anchor doubles, repaired afterwards by relabelling).

    The beam keeps the best partial sequence per last-assigned level and
    then the ``beam_width`` best overall. With at least 23 kept states
    this is exhaustive over last-level states, so the result equals the
    global argmax. If every complete sequence has probability zero the
    decoder falls back to per-detection argmax labels and flags it.
    """
    heights = list(heights)
    if not heights:
        raise NoDetections("cannot decode an empty detection sequence")
    if beam_width < 1:
        raise ValueError("beam width must be positive")
    if not 0.0 < skip_penalty <= 1.0:
        raise ValueError("skip penalty must lie in (0, 1]")
    if any(heights[i] <= heights[i + 1] for i in range(len(heights) - 1)):
        warnings.warn(
            "detection heights are not strictly descending", stacklevel=2
        )

    h = pmap.values.shape[0]
    rows = [min(max(int(math.floor(float(v) + 0.5)), 0), h - 1) for v in heights]
    probs = pmap.values[rows]  # (n, 23)
    with np.errstate(divide="ignore"):
        logp = np.log(probs)
    log_skip = math.log(skip_penalty)
    n = len(rows)

    # One beam entry per last-assigned level: (score, labels, skipped,
    # doubled flags). Keys are level indices; doubles never coexist with
    # singles of the same level in one entry, so the key is unambiguous.
    beam: dict[int, tuple[float, tuple[int, ...], int, bool, bool]] = {}
    for lvl in range(N_LEVELS):
        beam[lvl] = (float(logp[0, lvl]), (lvl,), 0, False, False)
    beam = _prune(beam, beam_width)
    for step in range(1, n):
        nxt: dict[int, tuple[float, tuple[int, ...], int, bool, bool]] = {}
        for last, (score, labels, skipped, ds1, dc3) in beam.items():
            if not math.isfinite(score):
                continue
            for lvl in range(last, N_LEVELS):
                if lvl == last:
                    # Anchor doubles only: S1 twice at the start, C3 at the end.
                    if lvl == S1 and step == 1 and not ds1:
                        entry = (score + float(logp[step, lvl]), labels + (lvl,), skipped, True, dc3)
                    elif lvl == C3 and step == n - 1 and not dc3:
                        entry = (score + float(logp[step, lvl]), labels + (lvl,), skipped, ds1, True)
                    else:
                        continue
                else:
                    gap = lvl - last - 1
                    entry = (
                        score + float(logp[step, lvl]) + gap * log_skip,
                        labels + (lvl,),
                        skipped + gap,
                        ds1,
                        dc3,
                    )
                held = nxt.get(lvl)
                if held is None or entry[0] > held[0]:
                    nxt[lvl] = entry
        beam = _prune(nxt, beam_width)
        if not beam:
            break

    best = max(beam.values(), key=lambda e: e[0]) if beam else None
    if best is None or not math.isfinite(best[0]):
        # Zero-probability path: label each detection independently.
        idx = [int(np.argmax(probs[i])) for i in range(n)]
        with np.errstate(divide="ignore"):
            lp = float(np.log(probs[np.arange(n), idx]).sum())
        return LevelSequence(
            labels=tuple(LEVELS[i] for i in idx),
            log_prob=lp,
            skipped=0,
            fallback=True,
        )
    score, labels, skipped, ds1, dc3 = best
    names = [LEVELS[i] for i in labels]
    if ds1:
        names[0] = "S2"
    if dc3:
        names[-1] = "C2"
    return LevelSequence(
        labels=tuple(names),
        log_prob=float(score),
        skipped=skipped,
        doubled_s1=ds1,
        doubled_c3=dc3,
    )


def _prune(beam: dict, beam_width: int) -> dict:
    finite = {k: v for k, v in beam.items() if math.isfinite(v[0])}
    if len(finite) <= beam_width:
        return finite
    kept = sorted(finite.items(), key=lambda kv: -kv[1][0])[:beam_width]
    return dict(kept)


def context_source_box(vertebra, expand_axial_coronal: float, expand_sagittal: float):
    """Continuous source box of the context volume, before rasterization.

    Returns ((row_lo, row_hi), (col_lo, col_hi), (slice_lo, slice_hi)).
    In-plane extents expand by the fraction of the tight height / width on
    each side. The slice span expands by the fraction of the slice count
    on each side, in count semantics: a span of n slices grows to
    n * (1 + 2 * expand) positions centred on the original range.
    """
    if not vertebra.polygons:
        raise EmptyDetection("instance has no polygons")
    s0, s1, r0, r1, c0, c1 = vertebra.bounds
    dh = (r1 - r0) * expand_axial_coronal
    dw = (c1 - c0) * expand_axial_coronal
    n = s1 - s0 + 1.0
    ds = n * expand_sagittal
    return (
        (r0 - dh, r1 + dh),
        (c0 - dw, c1 + dw),
        (s0 - ds, s1 + ds),
    )


def extract_vb_context_volume(
    volume,
    vertebra,
    expand_axial_coronal: float = DEFAULT_EXPAND_AXIAL_CORONAL,
    expand_sagittal: float = DEFAULT_EXPAND_SAGITTAL,
    out_dims: tuple[int, int, int] = CONTEXT_DIMS,
) -> np.ndarray:
    """Resample the context block around a vertebra to ``out_dims``.

    The in-plane box is expanded, rounded outward to whole pixels, cropped
    with zero padding and Catmull-Rom resampled to the output plane. The
    expanded slice span is sampled at ``out_dims[2]`` pixel-center
    positions with linear interpolation between neighbouring slices;
    positions outside the scan read zero. Output axes are (row, col,
    slice).
    """
    (row_lo, row_hi), (col_lo, col_hi), (slice_lo, slice_hi) = context_source_box(
        vertebra, expand_axial_coronal, expand_sagittal
    )
    out_r, out_c, out_s = out_dims
    data = volume.data
    n_slices = data.shape[0]

    r0 = int(math.floor(row_lo))
    r1 = int(math.ceil(row_hi))
    c0 = int(math.floor(col_lo))
    c1 = int(math.ceil(col_hi))
    size = (r1 - r0 + 1, c1 - c0 + 1)

    plane_cache: dict[int, np.ndarray] = {}

    def plane(src: int) -> np.ndarray:
        if src not in plane_cache:
            cropped = crop_padded(data[src], (r0, c0), size)
            plane_cache[src] = kernels.resample_bicubic(cropped, (out_r, out_c))
        return plane_cache[src]

    span = slice_hi - slice_lo + 1.0
    out = np.zeros((out_r, out_c, out_s), dtype=np.float64)
    for t in range(out_s):
        z = slice_lo + (t + 0.5) * span / out_s - 0.5
        if z < 0.0 or z > n_slices - 1.0:
            continue
        base = math.floor(z)
        frac = z - base
        acc = np.zeros((out_r, out_c), dtype=np.float64)
        if 0 <= base < n_slices and frac < 1.0:
            acc += (1.0 - frac) * plane(base)
        if frac > 0.0 and 0 <= base + 1 < n_slices:
            acc += frac * plane(base + 1)
        out[:, :, t] = acc
    return out
