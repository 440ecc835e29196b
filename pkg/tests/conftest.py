import numpy as np
import pytest

from cadas.model import MembraneAnnotation, SepImage


@pytest.fixture
def strip_annotation():
    """Straight horizontal membranes 90 px apart: basal at y=100, upper at y=10."""
    return MembraneAnnotation(
        basal=((0.0, 100.0), (500.0, 100.0)),
        upper=((0.0, 10.0), (500.0, 10.0)),
    )


@pytest.fixture
def random_image():
    rng = np.random.default_rng(1234)
    return SepImage(pixels=rng.integers(0, 256, size=(48, 64, 3), dtype=np.uint8), id="rand")
