"""Toeplitz embedding of the NUFFT normal operator ``A'A``.

``(A'A x)[n] = sum_n' T(r_n - r_n') x[n']`` with
``T(delta) = sum_m w_m exp(i omega_m . delta)``.  ``T`` is evaluated once
by an adjoint NUFFT on a grid twice the image size, and applying the
operator is then a circulant convolution on that grid: one forward and one
inverse FFT, no gridding.
"""
import numpy as np
import scipy.fft

from .plan import NufftPlan


class ToeplitzNormal:
    def __init__(self, plan, weights=None):
        self.matrix_size = plan.matrix_size
        self.ndim = plan.ndim
        self.padded_size = tuple(2 * n for n in self.matrix_size)
        big = NufftPlan(plan.omega, self.padded_size, oversampling=plan.oversampling,
                        width=plan.width, backend=plan.backend)
        w = np.ones(plan.n_samples) if weights is None else np.asarray(weights)
        # index n' of the 2N grid holds delta = n' - N; move delta = 0 to index 0
        kernel = np.fft.ifftshift(big.adjoint(w.astype(np.complex128)))
        self.kernel_fft = scipy.fft.fftn(kernel)
        self.axes = tuple(range(-self.ndim, 0))

    def apply(self, x):
        """``A'A x`` for images of shape (..., *matrix_size)."""
        x = np.asarray(x)
        if x.shape[x.ndim - self.ndim:] != self.matrix_size:
            raise ValueError(f"image shape {x.shape} does not end with {self.matrix_size}")
        lead = x.shape[:x.ndim - self.ndim]
        pad = np.zeros(lead + self.padded_size, dtype=np.complex128)
        crop = (...,) + tuple(slice(0, n) for n in self.matrix_size)
        pad[crop] = x
        out = scipy.fft.ifftn(scipy.fft.fftn(pad, axes=self.axes, overwrite_x=True)
                              * self.kernel_fft, axes=self.axes, overwrite_x=True)
        return out[crop]

    __call__ = apply


def toeplitz_normal(plan, weights=None):
    """Precompute the embedded kernel for ``plan``; call ``.apply(x)``."""
    return ToeplitzNormal(plan, weights)
