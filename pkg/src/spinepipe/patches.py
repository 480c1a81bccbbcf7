"""Patch grid planning, extraction and median reassembly.

The detector consumes fixed-size square inputs, so each slice is split
into overlapping square patches of a fixed physical edge length, every
patch is resampled to the network resolution, and the per-patch outputs
are stitched back onto the slice grid. Detection channels stitch by a
plain per-pixel median; vector channels are divided by the patch scale
first, because a displacement measured in patch pixels shrinks back to
slice pixels when the patch is mapped home.
"""

import dataclasses
from typing import Sequence

import numpy as np

from . import kernels
from .errors import ChannelMismatch, InvalidOverlap
from .targets import COL_VECTOR_CHANNELS, ROW_VECTOR_CHANNELS


@dataclasses.dataclass(frozen=True)
class PatchSpec:
    """Placement of one patch on the slice grid.

    ``scale`` is output pixels per source pixel, per axis, for the
    resample applied after cropping.
    """

    origin_px: tuple[int, int]
    size_px: tuple[int, int]
    scale: tuple[float, float]


@dataclasses.dataclass
class PatchGrid:
    specs: list[PatchSpec]
    slice_dims: tuple[int, int]
    edge_mm: float
    overlap_frac: float


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def _axis_starts(dim: int, edge: int, stride: int) -> list[int]:
    # March with the stride; the final patch is flush with the far edge.
    starts = []
    s = 0
    while True:
        if s + edge >= dim:
            starts.append(dim - edge)
            break
        starts.append(s)
        s += stride
    return starts


def plan_patches(
    slice_dims: tuple[int, int],
    pixel_spacing: tuple[float, float],
    edge_mm: float,
    overlap_frac: float,
    out_px: int = 224,
) -> PatchGrid:
    """Plan a grid of square patches covering the slice.

    The patch edge is ``edge_mm`` converted to pixels with round-half-up,
    clamped to the slice extent and to a minimum of one pixel. Successive
    patches advance by ``edge * (1 - overlap_frac)`` pixels, floored so
    the overlap never drops below ``overlap_frac * edge`` (minimum stride
    one), and the last patch per axis is flush with the image border so
    the grid always covers every pixel.
    """
    if not 0.0 <= overlap_frac < 1.0:
        raise InvalidOverlap(f"overlap fraction {overlap_frac!r} outside [0, 1)")
    if edge_mm <= 0.0:
        raise ValueError("edge_mm must be positive")
    if min(pixel_spacing) <= 0.0:
        raise ValueError("pixel spacing must be positive")
    h, w = int(slice_dims[0]), int(slice_dims[1])
    if h < 1 or w < 1:
        raise ValueError("slice dims must be positive")

    specs = []
    axes = []
    for dim, spacing in zip((h, w), pixel_spacing):
        edge = max(1, min(dim, _round_half_up(edge_mm / spacing)))
        stride = max(1, int(np.floor(edge * (1.0 - overlap_frac))))
        axes.append((edge, _axis_starts(dim, edge, stride)))
    (edge_r, starts_r), (edge_c, starts_c) = axes
    for r in starts_r:
        for c in starts_c:
            specs.append(
                PatchSpec(
                    origin_px=(r, c),
                    size_px=(edge_r, edge_c),
                    scale=(out_px / edge_r, out_px / edge_c),
                )
            )
    return PatchGrid(
        specs=specs, slice_dims=(h, w), edge_mm=edge_mm, overlap_frac=overlap_frac
    )


def resample_bicubic(image: np.ndarray, out_dims: tuple[int, int]) -> np.ndarray:
    """Catmull-Rom resample of the trailing two axes (see kernels)."""
    return kernels.resample_bicubic(image, out_dims)


def crop_padded(image: np.ndarray, origin: tuple[int, int], size: tuple[int, int]) -> np.ndarray:
    """Integer crop of the trailing two axes, zero beyond the image."""
    r0, c0 = int(origin[0]), int(origin[1])
    nr, nc = int(size[0]), int(size[1])
    h, w = image.shape[-2:]
    out = np.zeros(image.shape[:-2] + (nr, nc), dtype=np.float64)
    rs0, cs0 = max(r0, 0), max(c0, 0)
    rs1, cs1 = min(r0 + nr, h), min(c0 + nc, w)
    if rs0 < rs1 and cs0 < cs1:
        out[..., rs0 - r0 : rs1 - r0, cs0 - c0 : cs1 - c0] = image[..., rs0:rs1, cs0:cs1]
    return out


def extract_patch(
    image: np.ndarray, spec: PatchSpec, out_dims: tuple[int, int] = (224, 224)
) -> np.ndarray:
    """Crop one patch from an image and resample it to ``out_dims``."""
    return resample_bicubic(crop_padded(image, spec.origin_px, spec.size_px), out_dims)


def extract_patch_tensor(
    tensor: np.ndarray, spec: PatchSpec, out_dims: tuple[int, int] = (224, 224)
) -> np.ndarray:
    """Extract a patch from a 13-channel tensor, rescaling vector channels.

    Displacements stored in slice pixels become patch pixels, so the row
    components are multiplied by the row scale and likewise for columns.
    This is the exact inverse of the rescaling done by :func:`reassemble`.
    """
    t = np.asarray(tensor, dtype=np.float64)
    if t.ndim != 3 or t.shape[0] != 13:
        raise ChannelMismatch(f"tensor must be (13, H, W), got {t.shape}")
    out = extract_patch(t, spec, out_dims)
    scale_r = out_dims[0] / spec.size_px[0]
    scale_c = out_dims[1] / spec.size_px[1]
    out[list(ROW_VECTOR_CHANNELS)] *= scale_r
    out[list(COL_VECTOR_CHANNELS)] *= scale_c
    return out


def reassemble(
    patch_outputs: Sequence[tuple[PatchSpec, np.ndarray]],
    slice_dims: tuple[int, int],
    channels: int = 13,
) -> np.ndarray:
    """Stitch per-patch tensors back onto the slice grid.

    Every patch tensor is resampled back to its source footprint, vector
    channels are divided by the patch scale, and each slice pixel takes
    the per-channel median over the patches covering it (mean of the two
    middle values for even counts). Pixels covered by no patch are zero.
    """
    h, w = int(slice_dims[0]), int(slice_dims[1])
    blocks = []
    for spec, tensor in patch_outputs:
        t = np.asarray(tensor, dtype=np.float64)
        if t.ndim != 3 or t.shape[0] != channels:
            raise ChannelMismatch(
                f"patch output must have {channels} channels, got shape {t.shape}"
            )
        back = kernels.resample_bicubic(t, spec.size_px)
        if channels == 13:
            # Vector channels exist only in the landmark tensor layout.
            scale_r = t.shape[1] / spec.size_px[0]
            scale_c = t.shape[2] / spec.size_px[1]
            back[list(ROW_VECTOR_CHANNELS)] /= scale_r
            back[list(COL_VECTOR_CHANNELS)] /= scale_c
        r0, c0 = spec.origin_px
        # Clip the footprint to the slice; arbitrary specs may overhang.
        rs0, cs0 = max(r0, 0), max(c0, 0)
        rs1 = min(r0 + spec.size_px[0], h)
        cs1 = min(c0 + spec.size_px[1], w)
        if rs0 >= rs1 or cs0 >= cs1:
            continue
        blocks.append(
            ((rs0, rs1, cs0, cs1), back[:, rs0 - r0 : rs1 - r0, cs0 - c0 : cs1 - c0])
        )

    out = np.zeros((channels, h, w), dtype=np.float64)
    if not blocks:
        return out

    # Assign each block a stacking layer so overlapping values can be
    # medianed without materializing one plane per patch.
    fill = np.zeros((h, w), dtype=np.intp)
    layers = []
    for (r0, r1, c0, c1), _ in blocks:
        layers.append(fill[r0:r1, c0:c1].copy())
        fill[r0:r1, c0:c1] += 1
    depth = int(fill.max())

    lo = np.maximum((fill - 1) // 2, 0)[None]
    hi = np.maximum(fill // 2, 0)[None]
    uncovered = fill == 0
    for ch in range(channels):
        stack = np.full((depth, h, w), np.nan)
        for ((r0, r1, c0, c1), block), layer in zip(blocks, layers):
            rows = np.arange(r0, r1)[:, None]
            cols = np.arange(c0, c1)[None, :]
            stack[layer, rows, cols] = block[ch]
        stack.sort(axis=0, kind="stable")  # NaN sorts to the end
        med = 0.5 * (
            np.take_along_axis(stack, lo, axis=0)[0]
            + np.take_along_axis(stack, hi, axis=0)[0]
        )
        med[uncovered] = 0.0
        out[ch] = med
    return out
