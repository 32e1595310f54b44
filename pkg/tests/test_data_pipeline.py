import numpy as np
import pytest
import torch

from ssdiff.data_pipeline import (
    INTERP23_KERNEL,
    MtfProfile,
    PansharpeningDataset,
    gaussian_sigma,
    make_full,
    make_reduced,
    mtf_downsample,
    mtf_kernel,
    sensor_profile,
    synth_full_scene,
    synth_original,
    synth_scene,
    upsample_poly,
)
from ssdiff.errors import DatasetError, ShapeError


class TestMtf:
    @pytest.mark.parametrize("gain", [0.11, 0.15, 0.3, 0.365])
    def test_response_at_decimated_nyquist_matches_gain(self, gain):
        kernel = mtf_kernel(gain, factor=4, kernel_size=41)
        taps = np.arange(41) - 20
        response = float(np.sum(kernel * np.cos(2.0 * np.pi * 0.125 * taps)))
        assert response == pytest.approx(gain, abs=1e-3)

    def test_sigma_formula(self):
        assert gaussian_sigma(0.3, 4) == pytest.approx(4.0 * np.sqrt(-2.0 * np.log(0.3)) / np.pi)

    def test_constant_image_keeps_level(self):
        img = np.full((4, 64, 64), 0.42)
        out = mtf_downsample(img, sensor_profile("GF2", 4))
        assert out.shape == (4, 16, 16)
        assert np.allclose(out, 0.42, atol=1e-12)

    def test_indivisible_size_rejected(self):
        with pytest.raises(ShapeError):
            mtf_downsample(np.zeros((4, 30, 30)), sensor_profile("GF2", 4))

    @pytest.mark.parametrize("seed", range(5))
    def test_band_means_survive_degradation(self, seed, gf2_profile):
        ms, _ = synth_original(seed, 4, 128, gf2_profile)
        low = mtf_downsample(ms, gf2_profile)
        assert np.allclose(low.mean(axis=(1, 2)), ms.mean(axis=(1, 2)), rtol=0.02)


class TestPolynomialUpsampling:
    def test_phases_sum_to_one(self):
        assert INTERP23_KERNEL.size == 23
        assert INTERP23_KERNEL[0::2].sum() == pytest.approx(1.0, abs=1e-8)
        assert INTERP23_KERNEL[11] == pytest.approx(1.0)

    def test_constant_image(self):
        out = upsample_poly(np.full((2, 16, 16), 0.7))
        assert out.shape == (2, 64, 64)
        assert np.allclose(out, 0.7, atol=1e-6)

    def test_linear_ramp_reproduced_in_interior(self):
        rows, cols = np.mgrid[0:48, 0:48].astype(np.float64)
        img = (0.01 * rows + 0.005 * cols)[None]
        out = upsample_poly(img)
        fine_rows, fine_cols = np.mgrid[0:192, 0:192].astype(np.float64)
        expected = 0.01 * (fine_rows - 2) / 4 + 0.005 * (fine_cols - 2) / 4
        interior = (slice(48, 144), slice(48, 144))
        assert np.abs(out[0][interior] - expected[interior]).max() < 1e-3

    def test_original_samples_pass_through(self):
        rng = np.random.default_rng(0)
        img = rng.uniform(size=(1, 12, 12))
        out = upsample_poly(img)
        assert np.allclose(out[:, 2::4, 2::4], img, atol=1e-6)

    @pytest.mark.parametrize("seed", range(10))
    def test_smooth_scene_recovered_from_aligned_decimation(self, seed):
        rng = np.random.default_rng(seed)
        rows, cols = np.mgrid[0:64, 0:64].astype(np.float64)
        fine = np.empty((3, 64, 64))
        for band in range(3):
            theta, phase = rng.uniform(0.0, 2.0 * np.pi, size=2)
            along = rows * np.cos(theta) + cols * np.sin(theta)
            fine[band] = 0.5 + 0.1 * np.sin(2.0 * np.pi * along / 128.0 + phase)
        up = upsample_poly(fine[:, 2::4, 2::4])
        assert np.allclose(up[:, 2::4, 2::4], fine[:, 2::4, 2::4], atol=1e-6)
        assert float(np.sqrt(np.mean((up - fine) ** 2))) < 1e-2


class TestWaldProtocol:
    def test_reduced_shapes_and_range(self, gf2_profile):
        rng = np.random.default_rng(1)
        ms = rng.uniform(size=(4, 64, 64))
        pan = rng.uniform(size=(1, 256, 256))
        sample = make_reduced(ms, pan, gf2_profile)
        assert sample.gt.shape == (4, 64, 64)
        assert sample.ms.shape == (4, 16, 16)
        assert sample.pan.shape == (1, 64, 64)
        assert sample.lms.shape == sample.gt.shape
        for plane in (sample.gt, sample.ms, sample.pan, sample.lms):
            assert plane.min() >= 0.0 and plane.max() <= 1.0

    def test_full_resolution_has_no_reference(self):
        rng = np.random.default_rng(2)
        sample = make_full(rng.uniform(size=(4, 16, 16)), rng.uniform(size=(1, 64, 64)))
        assert sample.gt is None
        assert sample.lms.shape == (4, 64, 64)

    def test_mismatched_ratio_rejected(self, gf2_profile):
        with pytest.raises(ShapeError):
            make_reduced(np.zeros((4, 16, 16)), np.zeros((1, 60, 60)), gf2_profile)

    @pytest.mark.parametrize("seed", range(25))
    def test_synthetic_samples_keep_layout_invariants(self, seed, gf2_profile):
        sample = synth_scene(seed, 4, 16, "GF2", gf2_profile)
        assert sample.gt.shape == (4, 16, 16)
        assert sample.ms.shape == (4, 4, 4)
        assert sample.pan.shape == (1, 16, 16)
        assert sample.lms.shape == sample.gt.shape
        for plane in (sample.gt, sample.ms, sample.pan, sample.lms):
            assert np.isfinite(plane).all()
            assert plane.min() >= 0.0 and plane.max() <= 1.0


class TestSensorProfiles:
    def test_presets(self):
        assert len(sensor_profile("WV3").nyquist_gains) == 8
        wv2 = sensor_profile("WV2")
        assert wv2.nyquist_gains[-1] == pytest.approx(0.27)
        assert wv2.pan_gain == pytest.approx(0.11)
        assert len(sensor_profile("QB").nyquist_gains) == 4

    def test_unknown_sensor_and_band_mismatch(self):
        with pytest.raises(DatasetError) as excinfo:
            sensor_profile("IKONOS")
        assert excinfo.value.key == "data.sensor"
        with pytest.raises(DatasetError):
            sensor_profile("WV3", bands=4)

    def test_gain_override(self):
        profile = sensor_profile("GF2", 4, gains=[0.2, 0.2, 0.2, 0.2])
        assert profile.nyquist_gains == [0.2] * 4

    def test_gain_range(self):
        with pytest.raises(ValueError):
            MtfProfile(nyquist_gains=[1.2])


class TestSyntheticScenes:
    def test_same_seed_same_sample(self):
        first = synth_scene(3, 8, 32)
        second = synth_scene(3, 8, 32)
        for key in ("gt", "ms", "lms", "pan"):
            assert np.array_equal(getattr(first, key), getattr(second, key))

    def test_layout_and_range(self):
        sample = synth_scene(0, 8, 64)
        assert sample.gt.shape == (8, 64, 64)
        assert sample.ms.shape == (8, 16, 16)
        assert sample.pan.shape == (1, 64, 64)
        for plane in (sample.gt, sample.ms, sample.lms, sample.pan):
            assert np.isfinite(plane).all()
            assert plane.min() >= 0.0 and plane.max() <= 1.0

    @pytest.mark.parametrize("seed", range(20))
    def test_pan_tracks_band_mean(self, seed):
        sample = synth_scene(seed, 8, 64)
        r = np.corrcoef(sample.pan[0].ravel(), sample.gt.mean(axis=0).ravel())[0, 1]
        assert r > 0.8

    def test_full_scene_layout(self):
        sample = synth_full_scene(0, 4, 64, sensor="GF2")
        assert sample.gt is None
        assert sample.ms.shape == (4, 16, 16)
        assert sample.pan.shape == (1, 64, 64)

    def test_sequence_seed(self):
        assert np.array_equal(synth_scene([5, 1], 4, 16, "GF2").gt, synth_scene([5, 1], 4, 16, "GF2").gt)
        assert not np.array_equal(synth_scene([5, 1], 4, 16, "GF2").gt, synth_scene([5, 2], 4, 16, "GF2").gt)


class TestDataset:
    def test_batches_by_index(self, scene_arrays):
        dataset = PansharpeningDataset(scene_arrays)
        assert len(dataset) == 3 and dataset.bands == 4 and dataset.has_reference
        batch = dataset.batch(torch.tensor([2, 0]))
        assert torch.equal(batch["gt"][0], torch.as_tensor(scene_arrays["gt"][2]))
        assert dataset[1]["pan"].shape == (1, 16, 16)

    def test_missing_plane(self, scene_arrays):
        arrays = {key: value for key, value in scene_arrays.items() if key != "pan"}
        with pytest.raises(DatasetError):
            PansharpeningDataset(arrays)
