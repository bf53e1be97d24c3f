"""Pure-numpy versions of the compiled gridding loops in ``_kernels.pyx``.

Same signatures and in-place semantics; used when the extension is not built
or when ``TRAJOPT_PURE_PYTHON=1`` is set.
"""
import numpy as np


def _flat_neighbours(shape, idx, wts):
    """Flattened grid offsets and weight products, shape (M, J0*J1*...)."""
    flat = np.zeros(idx[0].shape[:1] + (1,), dtype=np.intp)
    w = np.ones(flat.shape)
    for n, i, wd in zip(shape, idx, wts):
        flat = (flat[:, :, None] * n + i[:, None, :]).reshape(len(flat), -1)
        w = (w[:, :, None] * wd[:, None, :]).reshape(len(w), -1)
    return flat, w


def _interp(grid, idx, wts, out):
    nb = grid.shape[0]
    flat, w = _flat_neighbours(grid.shape[1:], idx, wts)
    g = grid.reshape(nb, -1)
    for b in range(nb):
        out[b] = np.einsum("mj,mj->m", g[b][flat], w)


def _spread(data, idx, wts, grid):
    nb = data.shape[0]
    shape = grid.shape[1:]
    size = int(np.prod(shape))
    flat, w = _flat_neighbours(shape, idx, wts)
    flat = flat.ravel()
    g = grid.reshape(nb, -1)
    for b in range(nb):
        v = (w * data[b][:, None]).ravel()
        g[b] += np.bincount(flat, weights=v.real, minlength=size)
        g[b] += 1j * np.bincount(flat, weights=v.imag, minlength=size)


def interp2(grid, i0, w0, i1, w1, out):
    _interp(grid, (i0, i1), (w0, w1), out)


def spread2(data, i0, w0, i1, w1, grid):
    _spread(data, (i0, i1), (w0, w1), grid)


def interp3(grid, i0, w0, i1, w1, i2, w2, out):
    _interp(grid, (i0, i1, i2), (w0, w1, w2), out)


def spread3(data, i0, w0, i1, w1, i2, w2, grid):
    _spread(data, (i0, i1, i2), (w0, w1, w2), grid)
