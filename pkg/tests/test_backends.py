"""Tests for spinepipe.backends: hashing, boundary checks, implementations."""

import numpy as np
import pytest

from spinepipe import patches, targets
from spinepipe.backends import (
    DETECT_CHANNELS,
    FileBackend,
    FileRefinement,
    IdentityRefinement,
    OracleBackend,
    ZeroBackend,
    call_backend,
    check_appearance_output,
    check_detect_output,
    check_grade_output,
    tensor_key,
)
from spinepipe.config import PipelineConfig
from spinepipe.errors import BackendFailure, ShapeMismatch
from spinepipe.labelling import N_LEVELS
from spinepipe.report import GRADING_VECTOR_LENGTH, GradingScores
from spinepipe.synthetic import build_spine_scan, level_fill
from spinepipe.tensorio import write_tensor


class TestTensorKey:
    def test_hex_digest(self):
        key = tensor_key(np.zeros((3, 4)))
        assert len(key) == 64
        assert set(key) <= set("0123456789abcdef")

    def test_deterministic(self):
        arr = np.linspace(0.0, 1.0, 12).reshape(3, 4)
        assert tensor_key(arr) == tensor_key(arr.copy())

    def test_stable_under_tiny_noise(self):
        # Keys round to six decimals, so 1e-9 jitter cannot move them.
        arr = np.full((5, 5), 0.5)
        assert tensor_key(arr) == tensor_key(arr + 1e-9)

    def test_sensitive_to_real_changes(self):
        arr = np.full((5, 5), 0.5)
        assert tensor_key(arr) != tensor_key(arr + 1e-5)

    def test_shape_distinguished(self):
        flat = np.arange(4.0)
        assert tensor_key(flat) != tensor_key(flat.reshape(2, 2))

    def test_dtype_irrelevant(self):
        arr = np.array([0.25, 0.5, 1.0])
        assert tensor_key(arr) == tensor_key(arr.astype(np.float32))


class TestCallBackend:
    def test_passes_through_result(self):
        assert call_backend(lambda a, b: a + b, 2, 3) == 5

    def test_pipeline_errors_pass_through(self):
        def fail():
            raise ShapeMismatch("already typed")

        with pytest.raises(ShapeMismatch):
            call_backend(fail)

    def test_foreign_exception_becomes_backend_failure(self):
        def fail():
            raise ValueError("model exploded")

        with pytest.raises(BackendFailure, match="model exploded") as info:
            call_backend(fail)
        assert isinstance(info.value.__cause__, ValueError)


class TestOutputChecks:
    def test_detect_accepts_correct_shape(self):
        out = check_detect_output(np.zeros((DETECT_CHANNELS, 6, 8)), (6, 8))
        assert out.shape == (DETECT_CHANNELS, 6, 8)
        assert out.dtype == np.float64

    def test_detect_rejects_wrong_shape(self):
        with pytest.raises(ShapeMismatch):
            check_detect_output(np.zeros((DETECT_CHANNELS - 1, 6, 8)), (6, 8))
        with pytest.raises(ShapeMismatch):
            check_detect_output(np.zeros((DETECT_CHANNELS, 8, 6)), (6, 8))

    def test_appearance_accepts_distribution(self):
        out = check_appearance_output(np.full(N_LEVELS, 1.0 / N_LEVELS))
        assert out.shape == (N_LEVELS,)

    def test_appearance_tolerates_1e6_sum_slack(self):
        probs = np.full(N_LEVELS, 1.0 / N_LEVELS)
        probs[0] += 5e-7
        check_appearance_output(probs)

    def test_appearance_rejects_wrong_length(self):
        with pytest.raises(ShapeMismatch):
            check_appearance_output(np.full(N_LEVELS + 1, 0.0))

    def test_appearance_rejects_negative(self):
        probs = np.full(N_LEVELS, 1.0 / N_LEVELS)
        probs[0] -= 0.01
        probs[1] += 0.01
        probs[0] -= probs[0] + 0.001  # force one negative entry
        probs[1] += 0.001
        with pytest.raises(BackendFailure):
            check_appearance_output(probs)

    def test_appearance_rejects_bad_sum(self):
        with pytest.raises(BackendFailure):
            check_appearance_output(np.full(N_LEVELS, 0.05))

    def test_grade_accepts_grading_scores(self):
        scores = GradingScores.uniform()
        assert check_grade_output(scores) is scores

    def test_grade_rejects_raw_arrays(self):
        with pytest.raises(ShapeMismatch):
            check_grade_output(np.full(GRADING_VECTOR_LENGTH, 1.0))


class TestZeroBackend:
    def test_detect_zeros(self):
        out = ZeroBackend().detect(np.ones((4, 6)))
        assert out.shape == (DETECT_CHANNELS, 4, 6)
        assert not out.any()

    def test_appearance_uniform(self):
        out = check_appearance_output(ZeroBackend().appearance(np.zeros((2, 2, 2))))
        np.testing.assert_allclose(out, 1.0 / N_LEVELS)

    def test_grade_uniform(self):
        scores = ZeroBackend().grade(np.zeros((112, 224, 9)))
        assert scores == GradingScores.uniform()
        assert scores.ccs_binary == (0.25, 0.75)


class TestFileBackend:
    def test_missing_directory(self, tmp_path):
        with pytest.raises(BackendFailure):
            FileBackend(tmp_path / "absent")

    def test_missing_tensor_names_path(self, tmp_path):
        backend = FileBackend(tmp_path)
        patch = np.zeros((4, 4))
        with pytest.raises(BackendFailure, match="no precomputed tensor"):
            backend.detect(patch)

    def test_detect_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        patch = rng.normal(size=(8, 8))
        answer = rng.normal(size=(DETECT_CHANNELS, 8, 8)).astype(np.float32)
        write_tensor(tmp_path / f"detect_{tensor_key(patch)}.tnsr", answer)
        out = FileBackend(tmp_path).detect(patch)
        assert out.dtype == np.float64
        np.testing.assert_array_equal(out, answer.astype(np.float64))

    def test_appearance_round_trip(self, tmp_path):
        volume = np.ones((10, 10, 3))
        probs = np.full(N_LEVELS, 1.0 / N_LEVELS, dtype=np.float32)
        write_tensor(tmp_path / f"appearance_{tensor_key(volume)}.tnsr", probs)
        out = FileBackend(tmp_path).appearance(volume)
        np.testing.assert_array_equal(out, probs.astype(np.float64))

    def test_grade_round_trip(self, tmp_path):
        # Dyadic probabilities survive the container's float32 cast exactly.
        five = (0.5, 0.25, 0.125, 0.0625, 0.0625)
        four = (0.25, 0.25, 0.25, 0.25)
        two = (0.5, 0.5)
        vector = five + four + four + two * 8
        ivv = np.zeros((112, 224, 9))
        write_tensor(tmp_path / f"grade_{tensor_key(ivv)}.tnsr", np.asarray(vector))
        assert FileBackend(tmp_path).grade(ivv) == GradingScores.from_vector(vector)

    def test_grade_wrong_length(self, tmp_path):
        ivv = np.zeros((4, 4, 2))
        write_tensor(
            tmp_path / f"grade_{tensor_key(ivv)}.tnsr",
            np.zeros(GRADING_VECTOR_LENGTH - 1),
        )
        with pytest.raises(ShapeMismatch):
            FileBackend(tmp_path).grade(ivv)

    def test_corrupt_tensor_is_backend_failure(self, tmp_path):
        patch = np.zeros((4, 4))
        (tmp_path / f"detect_{tensor_key(patch)}.tnsr").write_bytes(b"garbage")
        with pytest.raises(BackendFailure, match="unreadable"):
            FileBackend(tmp_path).detect(patch)


@pytest.fixture(scope="module")
def scan():
    volume, anns = build_spine_scan(
        levels=("S1", "L5", "L4"),
        dims=(4, 320, 160),
        slice_band=(1, 2),
        seed=11,
    )
    config = PipelineConfig.for_mode("wholespine")
    return volume, anns, config, OracleBackend(volume, anns, config)


class TestOracleBackend:
    def test_detect_replays_rendered_target(self, scan):
        volume, anns, config, oracle = scan
        height, width = volume.data.shape[1:]
        grid = patches.plan_patches(
            (height, width),
            (volume.spacing[1], volume.spacing[2]),
            config.edge_mm,
            config.overlap_frac,
            config.out_px,
        )
        out_dims = (config.out_px, config.out_px)
        stacked = targets.render_target(
            [ann for ann, _level in anns[1]],
            (height, width),
            config.k_sigma,
            config.k_nbhd,
        ).stacked()
        for spec in grid.specs:
            patch = patches.extract_patch(volume.data[1], spec, out_dims)
            expected = patches.extract_patch_tensor(stacked, spec, out_dims)
            np.testing.assert_array_equal(oracle.detect(patch), expected)

    def test_detect_empty_slice_is_zero(self, scan):
        volume, _anns, config, oracle = scan
        height, width = volume.data.shape[1:]
        grid = patches.plan_patches(
            (height, width),
            (volume.spacing[1], volume.spacing[2]),
            config.edge_mm,
            config.overlap_frac,
            config.out_px,
        )
        patch = patches.extract_patch(
            volume.data[0], grid.specs[0], (config.out_px, config.out_px)
        )
        assert not oracle.detect(patch).any()

    def test_detect_unknown_patch_rejected(self, scan):
        _volume, _anns, _config, oracle = scan
        with pytest.raises(BackendFailure, match="no detection"):
            oracle.detect(np.full((224, 224), 123.0))

    def test_appearance_recovers_level(self, scan):
        _volume, _anns, _config, oracle = scan
        block = np.full((50, 60, 9), level_fill(7))
        out = oracle.appearance(block)
        assert out[7] == 1.0 and out.sum() == 1.0

    def test_appearance_tolerates_interpolation_noise(self, scan):
        _volume, _anns, _config, oracle = scan
        block = np.full((50, 60, 9), level_fill(3) + 10.0)
        assert oracle.appearance(block)[3] == 1.0

    def test_grade_uniform(self, scan):
        _volume, _anns, _config, oracle = scan
        assert oracle.grade(np.zeros((112, 224, 9))) == GradingScores.uniform()


class TestRefinement:
    def test_identity(self):
        values = np.arange(6.0).reshape(2, 3)
        assert IdentityRefinement().refine(values) is values

    def test_file_refinement_round_trip(self, tmp_path):
        values = np.linspace(0.0, 1.0, 8).astype(np.float32)
        write_tensor(tmp_path / f"refine_{tensor_key(values)}.tnsr", values * 2.0)
        out = FileRefinement(tmp_path).refine(values)
        np.testing.assert_array_equal(out, (values * 2.0).astype(np.float64))

    def test_file_refinement_missing(self, tmp_path):
        with pytest.raises(BackendFailure):
            FileRefinement(tmp_path).refine(np.zeros(4))

    def test_file_refinement_missing_directory(self, tmp_path):
        with pytest.raises(BackendFailure):
            FileRefinement(tmp_path / "absent")
