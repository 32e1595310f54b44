import numpy as np
import pytest
import torch

from ssdiff.config import RUN_SLOW_TESTS
from ssdiff.data_pipeline import sensor_profile, synth_scene
from ssdiff.schemas import NetworkConfig, RunConfig


def pytest_collection_modifyitems(config, items):
    if RUN_SLOW_TESTS:
        return
    skip_slow = pytest.mark.skip(reason="set SSDIFF_RUN_SLOW=1 to run toy-scale end-to-end checks")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)


@pytest.fixture
def micro_network():
    def _build(variant: str = "V5", bands: int = 4, **extra) -> NetworkConfig:
        fields = {
            "variant": variant,
            "bands": bands,
            "base_channels": 8,
            "norm_groups": 4,
            "time_embed_dim": 16,
            "res_blocks_per_level": 1,
        }
        fields.update(extra)
        return NetworkConfig(**fields)

    return _build


@pytest.fixture
def micro_run_config(tmp_path):
    def _build(variant: str = "V5", **train) -> RunConfig:
        train_fields = {
            "total_iters": 6,
            "finetune_iters": 2,
            "batch_size": 2,
            "log_every": 1,
            "checkpoint_every": 3,
            "seed": 7,
        }
        train_fields.update(train)
        return RunConfig.model_validate(
            {
                "out_dir": str(tmp_path / "run"),
                "device": "cpu",
                "network": {
                    "variant": variant,
                    "bands": 4,
                    "base_channels": 8,
                    "norm_groups": 4,
                    "time_embed_dim": 16,
                    "res_blocks_per_level": 1,
                },
                "schedule": {"steps": 50, "sampling_steps": 5},
                "train": train_fields,
                "data": {"sensor": "GF2", "scenes": 3, "size": 16},
                "metrics": {"q_block": 8},
            }
        )

    return _build


@pytest.fixture(scope="session")
def gf2_profile():
    return sensor_profile("GF2", 4)


@pytest.fixture(scope="session")
def scene_arrays(gf2_profile):
    samples = [synth_scene(seed, 4, 16, "GF2", gf2_profile) for seed in range(3)]
    return {key: np.stack([getattr(s, key) for s in samples]).astype(np.float32) for key in ("gt", "lms", "ms", "pan")}
