"""Domain types, units, and finite-difference gradient/slew conversions.

Trajectories are stored in normalized k-space units (radians per grid
sample, each coordinate in ``[-pi, pi)``).  Physical units appear only when
converting to gradient waveforms:

    k_phys [cycles/m] = samples * N_d / (2 pi fov_m[d])
    g [mT/m]          = 1e3 * D1 k_phys / (gamma dt)
    s [T/m/s]         = D2 k_phys / (gamma dt^2)
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

GAMMA_PROTON_HZ_PER_T = 42.5774e6


def _as_tuple(values, nd, name):
    values = tuple(float(v) for v in np.atleast_1d(values))
    if len(values) == 1:
        values = values * nd
    if len(values) != nd:
        raise ValueError(f"{name} must have {nd} entries, got {len(values)}")
    return values


def wrap_to_pi(samples):
    """Map coordinates into ``[-pi, pi)``."""
    return (np.asarray(samples) + np.pi) % (2 * np.pi) - np.pi


@dataclass(frozen=True)
class Trajectory:
    """Sampling pattern of ``Ns`` shots with ``Nfe`` samples in ``Nd`` dimensions.

    Parameters
    ----------
    samples : ndarray, shape (Nfe, Ns, Nd)
        k-space locations in radians per grid sample.
    fov_mm : sequence of float
        Field of view per dimension (a scalar is broadcast).
    matrix_size : sequence of int
        Image grid size per dimension.
    raster_s : float
        Sample interval in seconds.

    Coordinates outside ``[-pi, pi)`` are wrapped with a warning.  Use
    :meth:`from_iterate` for optimizer iterates, which are kept as-is.
    """

    samples: np.ndarray
    fov_mm: tuple
    matrix_size: tuple
    raster_s: float = 4e-6
    wrap: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        s = np.array(self.samples, dtype=np.float64)
        if s.ndim == 2:
            s = s[:, None, :]
        if s.ndim != 3 or s.shape[2] not in (2, 3):
            raise ValueError(
                f"samples must have shape (Nfe, Ns, Nd) with Nd in (2, 3), got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ValueError("trajectory contains non-finite coordinates")
        nd = s.shape[2]
        if self.wrap:
            outside = (s < -np.pi) | (s >= np.pi)
            if outside.any():
                warnings.warn(
                    f"{int(outside.sum())} coordinates outside [-pi, pi) were wrapped",
                    RuntimeWarning,
                    stacklevel=3,
                )
                s = wrap_to_pi(s)
        s.setflags(write=False)
        matrix = tuple(int(n) for n in np.atleast_1d(self.matrix_size))
        if len(matrix) == 1:
            matrix = matrix * nd
        if len(matrix) != nd or min(matrix) < 1:
            raise ValueError(f"matrix_size must have {nd} positive entries")
        fov = _as_tuple(self.fov_mm, nd, "fov_mm")
        if min(fov) <= 0 or self.raster_s <= 0:
            raise ValueError("fov_mm and raster_s must be positive")
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "matrix_size", matrix)
        object.__setattr__(self, "fov_mm", fov)
        object.__setattr__(self, "raster_s", float(self.raster_s))
        object.__setattr__(self, "wrap", bool(self.wrap))

    @classmethod
    def from_iterate(cls, samples, like):
        """Trajectory with the metadata of ``like`` and unwrapped ``samples``."""
        return cls(samples, like.fov_mm, like.matrix_size, like.raster_s, wrap=False)

    def with_samples(self, samples):
        return replace(self, samples=samples)

    @property
    def n_readout(self):
        return self.samples.shape[0]

    @property
    def n_shots(self):
        return self.samples.shape[1]

    @property
    def ndim(self):
        return self.samples.shape[2]

    @property
    def fov_m(self):
        return np.asarray(self.fov_mm) * 1e-3

    @property
    def cycles_per_m_per_rad(self):
        """Per-dimension factor from rad/sample to cycles/m."""
        return np.asarray(self.matrix_size) / (2 * np.pi * self.fov_m)

    def to_physical(self):
        """k-space in cycles/m, shape (Nfe, Ns, Nd)."""
        return self.samples * self.cycles_per_m_per_rad

    @classmethod
    def from_physical(cls, k_phys, fov_mm, matrix_size, raster_s=4e-6, wrap=True):
        k_phys = np.asarray(k_phys, dtype=np.float64)
        nd = k_phys.shape[-1]
        fov_m = np.asarray(_as_tuple(fov_mm, nd, "fov_mm")) * 1e-3
        matrix = np.asarray(matrix_size, dtype=np.float64)
        if matrix.size == 1:
            matrix = np.full(nd, float(matrix.item()))
        # divide by the same factor to_physical multiplies by, so file round trips are exact
        scale = matrix / (2 * np.pi * fov_m)
        return cls(k_phys / scale, fov_mm, matrix_size, raster_s, wrap=wrap)

    def flat_samples(self):
        """Samples as (Nfe * Ns, Nd), readout-major (index = t * Ns + shot)."""
        return self.samples.reshape(-1, self.ndim)


@dataclass(frozen=True)
class ScannerLimits:
    """Gradient hardware and nerve-stimulation limits.

    ``gmax`` in mT/m, ``smax`` and ``smin`` in T/m/s, ``gamma`` in Hz/T,
    ``chronaxie_s`` in seconds, ``pmax`` as a fraction of the stimulation
    threshold.
    """

    gmax: float = 50.0
    smax: float = 150.0
    gamma: float = GAMMA_PROTON_HZ_PER_T
    chronaxie_s: float = 334e-6
    smin: float = 70.0
    pmax: float = 0.8

    def __post_init__(self):
        for name in ("gmax", "smax", "gamma", "chronaxie_s", "smin", "pmax"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.pmax > 1:
            raise ValueError("pmax must be <= 1")

    def scaled(self, factor):
        """Limits with gmax and smax scaled (e.g. 0.9 for design headroom)."""
        return replace(self, gmax=self.gmax * factor, smax=self.smax * factor)


@dataclass(frozen=True)
class ImageVolume:
    data: np.ndarray
    spacing_mm: tuple = None

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.complex128)
        if d.ndim not in (2, 3):
            raise ValueError("image volumes are 2D or 3D")
        sp = self.spacing_mm if self.spacing_mm is not None else (1.0,) * d.ndim
        object.__setattr__(self, "data", d)
        object.__setattr__(self, "spacing_mm", _as_tuple(sp, d.ndim, "spacing_mm"))

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True)
class SenseMaps:
    maps: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.maps, dtype=np.complex128)
        if m.ndim not in (3, 4):
            raise ValueError("sensitivity maps have shape (Ncoil, N1, N2[, N3])")
        if np.isnan(m).any():
            raise ValueError("sensitivity maps contain NaN")
        object.__setattr__(self, "maps", m)

    @property
    def n_coils(self):
        return self.maps.shape[0]

    @property
    def spatial_shape(self):
        return self.maps.shape[1:]


@dataclass(frozen=True)
class LossWeights:
    w_recon: float = 1.0
    w_grad: float = 0.0
    w_slew: float = 0.0
    w_pns: float = 0.0
    w_contrast: float = 0.0
    recon_l1_frac: float = 0.5

    def __post_init__(self):
        ws = self.as_tuple()
        if min(ws) < 0:
            raise ValueError("loss weights must be nonnegative")
        if max(ws) <= 0:
            raise ValueError("at least one loss weight must be positive")
        if not 0 <= self.recon_l1_frac <= 1:
            raise ValueError("recon_l1_frac must lie in [0, 1]")

    def as_tuple(self):
        return (self.w_recon, self.w_grad, self.w_slew, self.w_pns, self.w_contrast)


def _check_length(traj, n, what):
    if traj.n_readout < n:
        raise ValueError(f"trajectory too short: {what} needs Nfe >= {n}, got {traj.n_readout}")


def traj_to_gradient(traj, limits):
    """Gradient waveform in mT/m, shape (Nfe - 1, Ns, Nd)."""
    _check_length(traj, 2, "gradient")
    k = traj.to_physical()
    return np.diff(k, axis=0) / (limits.gamma * traj.raster_s) * 1e3


def traj_to_slew(traj, limits):
    """Slew rate in T/m/s, shape (Nfe - 2, Ns, Nd)."""
    _check_length(traj, 3, "slew")
    k = traj.to_physical()
    return np.diff(k, n=2, axis=0) / (limits.gamma * traj.raster_s ** 2)


def grid_coordinates(shape):
    """Integer grid coordinates ``n - N//2`` per axis (DC at the centre)."""
    return [np.arange(n) - n // 2 for n in shape]
