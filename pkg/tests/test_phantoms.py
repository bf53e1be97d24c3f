import numpy as np
import pytest

from trajopt.core import ImageVolume
from trajopt.phantoms import birdcage_maps, ellipse_phantom, make_dataset, make_maps


@pytest.mark.parametrize("shape", [(32, 32), (16, 16, 8)])
def test_phantom_is_seeded_and_bounded(shape):
    a, b = ellipse_phantom(shape, 3), ellipse_phantom(shape, 3)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, ellipse_phantom(shape, 4))
    assert a.shape == shape and a.dtype == np.complex128
    mag = np.abs(a)
    assert mag.max() > 0.5 and mag[(0,) * len(shape)] == 0
    assert np.all(np.isfinite(a))


def test_real_phantom_without_phase():
    x = ellipse_phantom((20, 20), 0, smooth_phase=False)
    assert np.all(x.imag == 0) and np.all(x.real >= 0)


def test_phantom_rejects_1d():
    with pytest.raises(ValueError):
        ellipse_phantom((16,), 0)


@pytest.mark.parametrize("shape,coils", [((24, 24), 4), ((12, 12, 6), 8)])
def test_maps_have_unit_rss(shape, coils):
    maps = birdcage_maps(shape, coils)
    assert maps.shape == (coils,) + shape
    np.testing.assert_allclose(np.sum(np.abs(maps) ** 2, axis=0), 1.0, rtol=1e-12)
    # coil 0 sits on the +x axis and dominates the +x edge
    edge = (shape[0] - 1,) + tuple(n // 2 for n in shape[1:])
    assert np.argmax(np.abs(maps[(slice(None),) + edge])) == 0


def test_dataset_helpers():
    ds = make_dataset((8, 8), 3, seed=1, spacing_mm=(2.0, 2.0))
    assert len(ds) == 3 and all(isinstance(v, ImageVolume) for v in ds)
    assert ds[0].spacing_mm == (2.0, 2.0)
    assert make_maps((8, 8), 2).maps.shape == (2, 8, 8)
