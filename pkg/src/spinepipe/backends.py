"""Model backends: the pipeline's pluggable inference boundary.

The pipeline never runs a neural network. Everything a network would
produce enters through a :class:`ModelBackend`, whose outputs are shape-
checked at the boundary. Three implementations ship with the package:

* :class:`OracleBackend` answers from ground-truth annotations and is
  used to verify the surrounding pipeline end to end;
* :class:`FileBackend` reads precomputed tensors from disk, keyed by a
  hash of the query tensor, so real network outputs can be injected
  without linking any ML runtime;
* :class:`ZeroBackend` returns empty predictions (useful in tests).

Queries are hashed by rounding to six decimals and casting to float32,
which makes keys stable against benign floating-point noise.
"""

import abc
import hashlib
from pathlib import Path

import numpy as np

from . import labelling, patches, targets, tensorio
from .errors import BackendFailure, ShapeMismatch, SpineError, TensorFormatError
from .report import GRADING_VECTOR_LENGTH, GradingScores

PATCH_SIZE = (224, 224)
DETECT_CHANNELS = 13


def tensor_key(array: np.ndarray) -> str:
    """Stable content hash used to key file-backend tensors."""
    arr = np.ascontiguousarray(
        np.round(np.asarray(array, dtype=np.float64), 6), dtype="<f4"
    )
    digest = hashlib.sha256()
    digest.update(str(arr.shape).encode("ascii"))
    digest.update(arr.tobytes())
    return digest.hexdigest()


class ModelBackend(abc.ABC):
    """Inference interface consumed by the pipeline."""

    @abc.abstractmethod
    def detect(self, patch: np.ndarray) -> np.ndarray:
        """Map a (224, 224) patch to a (13, 224, 224) landmark tensor."""

    @abc.abstractmethod
    def appearance(self, volume: np.ndarray) -> np.ndarray:
        """Map a (224, 224, 16) context volume to 23 level probabilities."""

    @abc.abstractmethod
    def grade(self, ivv: np.ndarray) -> GradingScores:
        """Map a (112, 224, 9) intervertebral volume to grading scores."""


def call_backend(fn, *args):
    """Invoke a backend method, wrapping foreign exceptions.

    Pipeline errors pass through; anything else becomes a
    :class:`BackendFailure` so callers can map it to the backend
    contract-violation exit code.
    """
    try:
        return fn(*args)
    except SpineError:
        raise
    except Exception as exc:
        raise BackendFailure(f"backend call failed: {exc!r}") from exc


def check_detect_output(result, patch_dims) -> np.ndarray:
    out = np.asarray(result, dtype=np.float64)
    expected = (DETECT_CHANNELS,) + tuple(patch_dims)
    if out.shape != expected:
        raise ShapeMismatch(f"detect output {out.shape}, expected {expected}")
    return out


def check_appearance_output(result) -> np.ndarray:
    out = np.asarray(result, dtype=np.float64)
    if out.shape != (labelling.N_LEVELS,):
        raise ShapeMismatch(
            f"appearance output {out.shape}, expected ({labelling.N_LEVELS},)"
        )
    if (out < 0).any() or abs(float(out.sum()) - 1.0) > 1e-6:
        raise BackendFailure("appearance probabilities must sum to 1 within 1e-6")
    return out


def check_grade_output(result) -> GradingScores:
    if not isinstance(result, GradingScores):
        raise ShapeMismatch(
            f"grade must return GradingScores, got {type(result).__name__}"
        )
    return result


class ZeroBackend(ModelBackend):
    """All-zero detections, uniform appearance and grading."""

    def detect(self, patch):
        return np.zeros((DETECT_CHANNELS,) + np.asarray(patch).shape)

    def appearance(self, volume):
        return np.full(labelling.N_LEVELS, 1.0 / labelling.N_LEVELS)

    def grade(self, ivv):
        return GradingScores.uniform()


class OracleBackend(ModelBackend):
    """Ground-truth backend for synthetic scans.

    Detection answers are ideal landmark tensors rendered from the
    annotations: each slice's target tensor is rendered at slice
    resolution and the patch transform of the query patch is replayed on
    it, so partially visible vertebrae behave exactly as the stitching
    expects. Queries are matched by tensor hash against every patch the
    configured grid can produce.

    Appearance answers are one-hot level vectors recovered from the
    synthetic scans' level-coded fill intensities (see
    :func:`spinepipe.synthetic.level_fill`); grading answers are uniform.
    """

    def __init__(self, volume, annotations_by_slice, config):
        from .synthetic import nearest_level  # local import to avoid a cycle

        self._nearest_level = nearest_level
        self._config = config
        self._detect_map: dict[str, np.ndarray] = {}
        height, width = volume.data.shape[1:]
        grid = patches.plan_patches(
            (height, width),
            (volume.spacing[1], volume.spacing[2]),
            config.edge_mm,
            config.overlap_frac,
            config.out_px,
        )
        out_dims = (config.out_px, config.out_px)
        for s in range(volume.data.shape[0]):
            anns = [ann for ann, _level in annotations_by_slice.get(s, [])]
            if anns:
                target = targets.render_target(
                    anns, (height, width), config.k_sigma, config.k_nbhd
                ).stacked()
            else:
                target = np.zeros((DETECT_CHANNELS, height, width))
            for spec in grid.specs:
                pixels = patches.extract_patch(volume.data[s], spec, out_dims)
                self._detect_map[tensor_key(pixels)] = patches.extract_patch_tensor(
                    target, spec, out_dims
                )

    def detect(self, patch):
        key = tensor_key(patch)
        if key not in self._detect_map:
            raise BackendFailure(f"oracle has no detection for patch key {key[:12]}")
        return self._detect_map[key]

    def appearance(self, volume):
        h, w, d = volume.shape
        # The synthetic fill intensity at the volume centre encodes the level.
        centre = volume[
            h // 2 - 2 : h // 2 + 3, w // 2 - 2 : w // 2 + 3, d // 2
        ]
        level = self._nearest_level(float(np.median(centre)))
        out = np.zeros(labelling.N_LEVELS)
        out[level] = 1.0
        return out

    def grade(self, ivv):
        return GradingScores.uniform()


class FileBackend(ModelBackend):
    """Read precomputed backend outputs from a directory of tensors.

    Files are named ``detect_<key>.tnsr``, ``appearance_<key>.tnsr`` and
    ``grade_<key>.tnsr`` where ``<key>`` is :func:`tensor_key` of the
    query. Grade tensors hold the flat 29-value concatenation of all
    grading groups. A missing file is a :class:`BackendFailure` naming
    the expected path.
    """

    def __init__(self, directory):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise BackendFailure(f"backend directory {self.directory} does not exist")

    def _load(self, kind: str, query: np.ndarray) -> np.ndarray:
        path = self.directory / f"{kind}_{tensor_key(query)}.tnsr"
        if not path.is_file():
            raise BackendFailure(f"no precomputed tensor at {path}")
        try:
            return tensorio.read_tensor(path).astype(np.float64)
        except (TensorFormatError, OSError) as exc:
            raise BackendFailure(f"unreadable tensor at {path}: {exc}") from exc

    def detect(self, patch):
        return self._load("detect", patch)

    def appearance(self, volume):
        return self._load("appearance", volume)

    def grade(self, ivv):
        vector = self._load("grade", ivv)
        if vector.shape != (GRADING_VECTOR_LENGTH,):
            raise ShapeMismatch(
                f"grade tensor {vector.shape}, expected ({GRADING_VECTOR_LENGTH},)"
            )
        return GradingScores.from_vector(vector)


class IdentityRefinement:
    """Refinement backend that returns the height map unchanged."""

    def refine(self, values: np.ndarray) -> np.ndarray:
        return values


class FileRefinement:
    """Refinement backend reading ``refine_<key>.tnsr`` from a directory."""

    def __init__(self, directory):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise BackendFailure(f"backend directory {self.directory} does not exist")

    def refine(self, values: np.ndarray) -> np.ndarray:
        path = self.directory / f"refine_{tensor_key(values)}.tnsr"
        if not path.is_file():
            raise BackendFailure(f"no precomputed tensor at {path}")
        try:
            return tensorio.read_tensor(path).astype(np.float64)
        except (TensorFormatError, OSError) as exc:
            raise BackendFailure(f"unreadable tensor at {path}: {exc}") from exc
