"""Synthetic training data: random ellipse phantoms and smooth coil maps."""
from __future__ import annotations

import numpy as np

from .core import ImageVolume, SenseMaps


def _grid(shape):
    """Normalized coordinates in [-1, 1) per axis, 'ij' indexing."""
    axes = [(np.arange(n) - n // 2) / (n / 2) for n in shape]
    return np.meshgrid(*axes, indexing="ij")


def _rotation(ndim, rng):
    if ndim == 2:
        a = rng.uniform(0, np.pi)
        return np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def ellipse_phantom(shape, rng=None, n_ellipses=8, smooth_phase=True):
    """Random piecewise-constant ellipse (ellipsoid) phantom.

    A large outer ellipse of intensity 1 holds ``n_ellipses`` smaller
    ellipses with random centres, axes, orientations and intensities.  With
    ``smooth_phase`` a low-order phase map is applied so the image is
    complex-valued.
    """
    rng = np.random.default_rng(rng)
    shape = tuple(int(n) for n in shape)
    ndim = len(shape)
    if ndim not in (2, 3):
        raise ValueError("phantoms are 2-D or 3-D")
    coords = np.stack(_grid(shape), axis=-1)
    img = np.zeros(shape)

    def add(centre, axes, rot, value):
        local = (coords - centre) @ rot
        inside = np.sum((local / axes) ** 2, axis=-1) <= 1.0
        img[inside] += value

    outer = rng.uniform(0.75, 0.9, ndim)
    add(np.zeros(ndim), outer, _rotation(ndim, rng), 1.0)
    for _ in range(n_ellipses):
        axes = rng.uniform(0.05, 0.35, ndim) * outer
        centre = rng.uniform(-0.55, 0.55, ndim) * outer
        add(centre, axes, _rotation(ndim, rng), rng.uniform(-0.4, 0.5))
    img = np.clip(img, 0.0, None)
    if smooth_phase:
        coef = rng.uniform(-1, 1, ndim) * 0.5
        img = img * np.exp(1j * np.tensordot(coords, coef, axes=([-1], [0])))
    return img.astype(np.complex128)


def birdcage_maps(shape, n_coils=4, radius=1.5, phase_offset=0.0):
    """Smooth sensitivity maps of coils evenly spaced on a ring.

    Coil ``c`` sits at angle ``2 pi c / n_coils`` on a circle of ``radius``
    (in units of the half field of view) around the z axis; its sensitivity
    falls off with distance and carries the coil's angular phase.  Maps are
    normalized so the root-sum-of-squares is 1 everywhere.
    """
    shape = tuple(int(n) for n in shape)
    coords = _grid(shape)
    x, y = coords[0], coords[1]
    z = coords[2] if len(shape) == 3 else 0.0
    maps = []
    for c in range(n_coils):
        ang = 2 * np.pi * c / n_coils + phase_offset
        cx, cy = radius * np.cos(ang), radius * np.sin(ang)
        dist = np.sqrt((x - cx) ** 2 + (y - cy) ** 2 + np.square(z))
        phase = np.arctan2(y - cy, x - cx) + ang
        maps.append(np.exp(1j * phase) / dist)
    maps = np.array(maps)
    maps /= np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    return maps


def make_dataset(shape, n, seed=0, spacing_mm=None, **kwargs):
    """``n`` seeded phantoms as :class:`ImageVolume` objects."""
    rng = np.random.default_rng(seed)
    spacing = tuple(spacing_mm) if spacing_mm is not None else (1.0,) * len(shape)
    return [ImageVolume(ellipse_phantom(shape, rng, **kwargs), spacing) for _ in range(n)]


def make_maps(shape, n_coils=4, **kwargs):
    return SenseMaps(birdcage_maps(shape, n_coils, **kwargs))
