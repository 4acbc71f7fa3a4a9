import math

import numpy as np
import pytest
from skimage.metrics import structural_similarity

from helpers import smooth_image

from relight.data import DatasetError, write_image
from relight.metrics import (
    MetricRecord,
    evaluate,
    format_metric,
    psnr,
    ssim,
    write_metric_report,
)


class TestPsnr:
    def test_identical_images_hit_the_infinity_sentinel(self):
        rng = np.random.default_rng(0)
        a = rng.uniform(size=(16, 16, 3))
        assert math.isinf(psnr(a, a.copy()))

    def test_uniform_offset_closed_form(self):
        a = np.full((32, 32, 3), 100 / 255)
        b = a + 16 / 255
        expected = 10 * math.log10(1.0 / (16 / 255) ** 2)
        assert abs(psnr(a, b) - expected) < 1e-9
        assert abs(psnr(a, b) - 24.05) < 0.01

    def test_inverse_checkerboard_is_zero_db(self):
        board = np.indices((8, 8)).sum(axis=0) % 2
        a = np.repeat(board[:, :, None], 3, axis=2).astype(np.float64)
        assert psnr(a, 1.0 - a) == 0.0

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        a = rng.uniform(size=(12, 12, 3))
        b = rng.uniform(size=(12, 12, 3))
        assert psnr(a, b) == psnr(b, a)

    def test_strictly_decreasing_in_noise_amplitude(self):
        rng = np.random.default_rng(2)
        base = rng.uniform(0.3, 0.7, size=(24, 24, 3))
        noise = rng.normal(size=base.shape)
        values = [psnr(base, base + amp * noise) for amp in (0.01, 0.05, 0.2)]
        assert values[0] > values[1] > values[2]

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shape"):
            psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


class TestSsim:
    def test_self_similarity_is_exactly_one(self):
        rng = np.random.default_rng(3)
        a = rng.uniform(size=(32, 32, 3))
        assert ssim(a, a.copy()) == 1.0

    def test_equal_constants_are_fully_similar(self):
        a = np.full((16, 16, 3), 0.4)
        assert ssim(a, a.copy()) == 1.0

    def test_inverted_image_scores_negative(self):
        rng = np.random.default_rng(4)
        a = smooth_image(rng, 48, 48)
        assert ssim(a, 1.0 - a) < 0.0

    def test_matches_reference_implementation(self):
        rng = np.random.default_rng(5)
        for _ in range(3):
            a = rng.uniform(size=(40, 52))
            b = np.clip(a + rng.normal(0, 0.1, size=a.shape), 0, 1)
            expected = structural_similarity(
                a, b, win_size=11, sigma=1.5, gaussian_weights=True,
                use_sample_covariance=False, data_range=1.0)
            assert abs(ssim(a, b) - expected) < 1e-6

    def test_symmetry(self):
        rng = np.random.default_rng(6)
        a = rng.uniform(size=(24, 24, 3))
        b = rng.uniform(size=(24, 24, 3))
        assert abs(ssim(a, b) - ssim(b, a)) < 1e-12

    def test_offset_invariance_within_stability_tolerance(self):
        rng = np.random.default_rng(7)
        a = rng.uniform(0.1, 0.6, size=(32, 32, 3))
        b = np.clip(a + rng.normal(0, 0.05, size=a.shape), 0, 0.7)
        assert abs(ssim(a + 0.2, b + 0.2) - ssim(a, b)) < 1e-3

    def test_image_smaller_than_window_rejected(self):
        with pytest.raises(ValueError, match="window"):
            ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))


class TestMetricRecord:
    def test_valid_record(self):
        MetricRecord(image_id="1", psnr=float("inf"), ssim=1.0)
        MetricRecord(image_id="2", psnr=0.0, ssim=-1.0)

    def test_out_of_range_values_rejected(self):
        with pytest.raises(ValueError, match="psnr"):
            MetricRecord(image_id="1", psnr=-3.0, ssim=0.5)
        with pytest.raises(ValueError, match="ssim"):
            MetricRecord(image_id="1", psnr=10.0, ssim=1.5)


def fill_directory(directory, images):
    directory.mkdir(parents=True, exist_ok=True)
    for name, image in images.items():
        write_image(directory / name, image)


class TestEvaluate:
    def test_identical_directories(self, tmp_path):
        rng = np.random.default_rng(8)
        images = {f"{i}.png": smooth_image(rng, 24, 24) for i in range(3)}
        fill_directory(tmp_path / "pred", images)
        fill_directory(tmp_path / "ref", images)
        records, mean_psnr, mean_ssim = evaluate(tmp_path / "pred", tmp_path / "ref")
        assert [r.image_id for r in records] == ["0", "1", "2"]
        assert math.isinf(mean_psnr)
        assert mean_ssim == 1.0

    def test_single_pair_aggregate_equals_the_record(self, tmp_path):
        rng = np.random.default_rng(9)
        ref = smooth_image(rng, 24, 24)
        pred = np.clip(ref + rng.normal(0, 0.05, size=ref.shape), 0, 1)
        fill_directory(tmp_path / "pred", {"a.png": pred})
        fill_directory(tmp_path / "ref", {"a.png": ref})
        records, mean_psnr, mean_ssim = evaluate(tmp_path / "pred", tmp_path / "ref")
        assert len(records) == 1
        assert mean_psnr == records[0].psnr
        assert mean_ssim == records[0].ssim

    def test_missing_counterpart_is_named(self, tmp_path):
        rng = np.random.default_rng(10)
        images = {"a.png": smooth_image(rng, 24, 24), "b.png": smooth_image(rng, 24, 24)}
        fill_directory(tmp_path / "pred", images)
        fill_directory(tmp_path / "ref", {"a.png": images["a.png"]})
        with pytest.raises(DatasetError, match="b.png"):
            evaluate(tmp_path / "pred", tmp_path / "ref")

    def test_insertion_order_does_not_matter(self, tmp_path):
        rng = np.random.default_rng(11)
        images = {f"{name}.png": smooth_image(rng, 24, 24) for name in "dacb"}
        fill_directory(tmp_path / "ref", images)
        (tmp_path / "pred").mkdir()
        for name in ("c.png", "a.png", "d.png", "b.png"):
            write_image(tmp_path / "pred" / name, images[name])
        records, _, _ = evaluate(tmp_path / "pred", tmp_path / "ref")
        assert [r.image_id for r in records] == ["a", "b", "c", "d"]

    def test_empty_prediction_directory_rejected(self, tmp_path):
        (tmp_path / "pred").mkdir()
        (tmp_path / "ref").mkdir()
        with pytest.raises(DatasetError, match="no images"):
            evaluate(tmp_path / "pred", tmp_path / "ref")


class TestReport:
    def test_report_layout_and_inf_serialization(self, tmp_path):
        records = [MetricRecord("a", float("inf"), 1.0),
                   MetricRecord("b", 24.5, 0.75)]
        out = tmp_path / "report.csv"
        write_metric_report(records, float("inf"), 0.875, out)
        lines = out.read_text().splitlines()
        assert lines[0] == "image_id,psnr,ssim"
        assert lines[1] == "a,inf,1.000000"
        assert lines[2] == "b,24.500000,0.750000"
        assert lines[3] == "mean,inf,0.875000"

    def test_format_metric(self):
        assert format_metric(float("inf")) == "inf"
        assert format_metric(1.23456789) == "1.234568"
