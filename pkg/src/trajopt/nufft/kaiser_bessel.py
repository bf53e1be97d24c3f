"""Kaiser-Bessel interpolation kernel with its pedestal removed.

The kernel is ``I0(beta * sqrt(1 - (2t/J)^2)) - 1`` on ``|t| < J/2``.
Subtracting the edge value makes it continuous (and C1) at the window
boundary, so the NUFFT stays smooth in the sample locations.
"""
import numpy as np
from scipy.special import i0


def kb_beta(oversampling, width):
    """Shape parameter from Beatty et al. (2005) for grid ratio and width."""
    a = float(oversampling)
    return np.pi * np.sqrt((width / a) ** 2 * (a - 0.5) ** 2 - 0.8)


def kb_kernel(t, width, beta):
    t = np.asarray(t, dtype=np.float64)
    arg = 1.0 - (2.0 * t / width) ** 2
    out = np.zeros_like(t)
    inside = arg > 0
    out[inside] = i0(beta * np.sqrt(arg[inside])) - 1.0
    return out


def kb_kernel_ft(f, width, beta):
    """Fourier transform ``int psi(t) exp(-2 pi i f t) dt`` of :func:`kb_kernel`."""
    f = np.asarray(f, dtype=np.float64)
    z = np.sqrt(beta ** 2 - (np.pi * width * f) ** 2 + 0j)
    small = np.abs(z) < 1e-8
    z_safe = np.where(small, 1.0, z)
    ratio = np.where(small, 1.0, np.sinh(z_safe) / z_safe)
    return np.real(width * ratio) - width * np.sinc(width * f)
