import numpy as np
import pytest

from dualplane import autodiff as ad


@pytest.fixture(autouse=True)
def finite_checks():
    """Every op output is asserted finite throughout the test suite."""
    ad.set_nan_checks(True)
    yield
    ad.set_nan_checks(False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def figurine_dataset(tmp_path_factory):
    """The fixed ortho-view dataset shared by slower integration tests."""
    from dualplane.scenes import build_figurine, write_dataset

    out = tmp_path_factory.mktemp("figurine_ds")
    scene = build_figurine(7)
    return write_dataset(scene, 7, False, str(out), resolution=64)
