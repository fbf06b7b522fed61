import numpy as np
import pytest

from atompol import _accel
from atompol.capfield import CapacitorGeometry


@pytest.fixture
def nominal_geometry():
    """2a = 50.00 mm (gap included), h0 = 2.056 mm, h1 = 3.2 um."""
    return CapacitorGeometry(half_length=25.0e-3, mean_spacing=2.056e-3, spacing_tilt=3.2e-6,
                             gap_width=100e-6, septum_offset=50e-6,
                             half_length_sigma=0.05e-3, spacing_sigma=3e-6)


@pytest.fixture(params=["numba", "numpy"])
def backend(request, monkeypatch):
    """Run a test once per kernel backend."""
    if request.param == "numba" and not _accel.HAS_NUMBA:
        pytest.skip("numba not available")
    monkeypatch.setattr(_accel, "USE_NUMBA", request.param == "numba")
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
