import numpy as np
import pytest

from medpose import model as M
from medpose.synth import synth_generate, write_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    manifest, images = synth_generate(7, 8, 4, (64, 64))
    return write_dataset(out, manifest, images)


def tiny_config(**kw):
    """Small enough for full finite-difference checks (well under 5k parameters)."""
    base = dict(input_size=(8, 8), in_channels=1, patch_size=4, embed_dim=8, depth=1, heads=2,
                head=M.HeadConfig(1, 4), dataset_heads=[("a", 2)])
    base.update(kw)
    return M.ModelConfig(**base)


def desk_config(**kw):
    base = dict(input_size=(64, 64), in_channels=1, patch_size=8, embed_dim=64, depth=2, heads=2,
                head=M.HeadConfig(2, 32), dataset_heads=[("synth", 4)])
    base.update(kw)
    return M.ModelConfig(**base)


def randomize(m, rng, std=0.5):
    """Replace every parameter with N(0, std^2) noise (keeps gradients well scaled)."""
    out = m.copy()
    for k in out.params:
        out.params[k] = rng.normal(0.0, std, out.params[k].shape).astype(m.dtype)
    return out
