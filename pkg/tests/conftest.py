import numpy as np
import pytest

from rdlt import synth


@pytest.fixture(scope="session")
def ar1_train():
    """Correlated residual-like blocks shared by trainer/baseline tests."""
    return synth.ar1_blocks(4000, 8, rho=0.95, sigma=20.0, seed=11)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """A handful of small synthetic images on disk."""
    outdir = tmp_path_factory.mktemp("corpus")
    paths = synth.write_corpus(str(outdir), count=6, height=64, width=64, seed=5)
    return paths


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
