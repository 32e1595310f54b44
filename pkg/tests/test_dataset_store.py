import h5py
import numpy as np
import pytest

from ssdiff.data_pipeline import synth_scene
from ssdiff.dataset_store import load_arrays, load_dataset, read_fused, resolve_dataset_path, write_dataset, write_fused
from ssdiff.errors import DatasetError


def _write_raw(path, **arrays):
    with h5py.File(path, "w") as handle:
        for key, value in arrays.items():
            handle.create_dataset(key, data=value)
    return path


class TestContainers:
    def test_round_trip_keeps_layout(self, tmp_path):
        samples = [synth_scene(seed, 8, 32) for seed in range(2)]
        path = write_dataset(tmp_path / "train.h5", samples)
        arrays = load_arrays(path)
        assert arrays["gt"].shape == (2, 8, 32, 32)
        assert arrays["ms"].shape == (2, 8, 8, 8)
        assert arrays["pan"].shape == (2, 1, 32, 32)
        assert np.allclose(arrays["gt"][1], samples[1].gt, atol=1e-6)

    def test_streaming_yields_samples(self, tmp_path):
        path = write_dataset(tmp_path / "train.h5", [synth_scene(seed, 4, 16, "GF2") for seed in range(3)])
        streamed = list(load_dataset(path))
        assert len(streamed) == 3
        assert streamed[0].bands == 4

    def test_sensor_scale_defaults_to_eleven_bit(self, tmp_path):
        rng = np.random.default_rng(0)
        path = _write_raw(
            tmp_path / "raw.h5",
            gt=np.full((1, 4, 16, 16), 2047.0),
            lms=rng.uniform(0, 2047, size=(1, 4, 16, 16)),
            ms=rng.uniform(0, 2047, size=(1, 4, 4, 4)),
            pan=rng.uniform(0, 2047, size=(1, 1, 16, 16)),
        )
        assert np.allclose(load_arrays(path)["gt"], 1.0)
        assert np.allclose(load_arrays(path, max_value=1023.5)["gt"], 2.0)

    def test_missing_pan_is_keyed_and_yields_nothing(self, tmp_path):
        path = _write_raw(
            tmp_path / "broken.h5",
            lms=np.zeros((1, 4, 16, 16)),
            ms=np.zeros((1, 4, 4, 4)),
        )
        with pytest.raises(DatasetError) as excinfo:
            load_dataset(path)
        assert excinfo.value.key == "pan"

    def test_inconsistent_shapes(self, tmp_path):
        path = _write_raw(
            tmp_path / "bad.h5",
            lms=np.zeros((2, 4, 16, 16)),
            ms=np.zeros((2, 4, 8, 8)),
            pan=np.zeros((2, 1, 16, 16)),
        )
        with pytest.raises(DatasetError) as excinfo:
            load_arrays(path)
        assert excinfo.value.key == "ms"

    def test_missing_file(self, tmp_path):
        with pytest.raises(DatasetError):
            load_arrays(tmp_path / "nope.h5")

    def test_directory_resolves_to_split(self, tmp_path):
        assert resolve_dataset_path(tmp_path, "test") == tmp_path / "test.h5"


class TestFused:
    def test_fused_file_carries_inputs(self, tmp_path, scene_arrays):
        path = write_fused(tmp_path / "samples" / "fused.h5", scene_arrays["gt"], inputs=scene_arrays, attrs={"seed": 3})
        assert np.allclose(read_fused(tmp_path / "samples"), scene_arrays["gt"])
        refs = load_arrays(path)
        assert set(refs) == {"gt", "lms", "ms", "pan"}
        with h5py.File(path, "r") as handle:
            assert int(handle.attrs["seed"]) == 3

    def test_missing_fused(self, tmp_path):
        with pytest.raises(DatasetError):
            read_fused(tmp_path)
