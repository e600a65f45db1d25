import pytest

from trdec import autodiff as ad


@pytest.fixture(autouse=True)
def _restore_dtype():
    saved = ad.default_dtype()
    yield
    ad.set_default_dtype(saved)


@pytest.fixture
def float64():
    ad.set_default_dtype("float64")
