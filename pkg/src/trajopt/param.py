"""Trajectory parameterizations and baseline trajectory generators.

Two maps from parameters ``c`` to samples ``omega(c)``:

* :class:`BsplineParam` -- freeform readouts, ``omega = B c`` with a
  quadratic B-spline basis whose knots sit at multiples of the kernel width
  ``W``.  Knot sets for widths 32, 16, 8 are nested, so a coarse trajectory
  is exactly representable on every finer level.
* :class:`RotationParam` -- rotated copies of base shots, with rotation
  angles as parameters.

Both expose ``expand(c)`` and ``backprop(c, grad_omega)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ScannerLimits, Trajectory, traj_to_gradient, traj_to_slew

GOLDEN_ANGLE_DEG = 180.0 * (np.sqrt(5.0) - 1.0) / 2.0


class InfeasibleGeometry(ValueError):
    """Requested geometry needs more gradient or slew than the limits allow."""


# --------------------------------------------------------------------------
# B-splines

def _quadratic_bspline(x):
    ax = np.abs(x)
    return np.where(ax <= 0.5, 0.75 - ax ** 2, np.where(ax < 1.5, 0.5 * (1.5 - ax) ** 2, 0.0))


def bspline_ncoef(n_samples, width):
    return int(np.ceil((n_samples - 1) / width + 1)) + 1


def bspline_basis(n_samples, width):
    """Dense basis matrix B, shape (n_samples, Ncoef).

    Column ``i`` is the quadratic B-spline centred at ``(i - 0.5) * width``
    (knots at integer multiples of ``width``), evaluated at t = 0..n-1.
    """
    if width < 1 or n_samples < 1:
        raise ValueError("width and n_samples must be positive")
    t = np.arange(n_samples, dtype=np.float64)
    centres = (np.arange(bspline_ncoef(n_samples, width)) - 0.5) * width
    return _quadratic_bspline((t[:, None] - centres[None, :]) / width)


@dataclass(frozen=True)
class BsplineParam:
    """Freeform B-spline readouts.

    ``coef`` has shape (Ncoef, Ns, Nd); ``pin_start`` keeps the first sample
    of every shot fixed during optimization (see :meth:`project_step`).
    """

    coef: np.ndarray
    width: int
    n_samples: int
    pin_start: bool = False
    basis: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        c = np.asarray(self.coef, dtype=np.float64)
        expected = bspline_ncoef(self.n_samples, self.width)
        if c.ndim != 3 or c.shape[0] != expected:
            raise ValueError(
                f"{self.n_samples} samples at width {self.width} need {expected} coefficients, "
                f"got shape {c.shape}")
        object.__setattr__(self, "coef", c)
        object.__setattr__(self, "basis", bspline_basis(self.n_samples, self.width))

    @classmethod
    def fit(cls, samples, width, pin_start=False):
        """Least-squares projection of samples (Nfe, Ns, Nd) onto the basis.

        With ``pin_start`` the first sample is matched exactly.
        """
        samples = np.asarray(samples, dtype=np.float64)
        n = samples.shape[0]
        B = bspline_basis(n, width)
        flat = samples.reshape(n, -1)
        if not pin_start:
            coef = np.linalg.lstsq(B, flat, rcond=None)[0]
        else:
            b0 = B[0]
            cp = np.outer(b0, flat[0]) / (b0 @ b0)
            # orthonormal basis of the null space of b0^T
            q, _ = np.linalg.qr(np.column_stack([b0, np.eye(len(b0))]))
            z = q[:, 1:len(b0)]
            rhs = flat - B @ cp
            coef = cp + z @ np.linalg.lstsq(B @ z, rhs, rcond=None)[0]
        return cls(coef.reshape((-1,) + samples.shape[1:]), width, n, pin_start)

    def with_coef(self, coef):
        return BsplineParam(coef, self.width, self.n_samples, self.pin_start)

    def expand(self, coef=None):
        c = self.coef if coef is None else coef
        return np.einsum("tk,ksd->tsd", self.basis, c)

    def backprop(self, grad_omega, coef=None):
        return np.einsum("tk,tsd->ksd", self.basis, grad_omega)

    def project_step(self, step):
        """Remove the component of an update that would move a pinned start."""
        if not self.pin_start:
            return step
        b0 = self.basis[0]
        return step - np.einsum("k,sd->ksd", b0, np.einsum("k,ksd->sd", b0, step)) / (b0 @ b0)


def bspline_expand(p, like=None):
    """``omega = B c`` as a Trajectory (metadata from ``like``) or array."""
    omega = p.expand()
    return omega if like is None else Trajectory.from_iterate(omega, like)


def bspline_backprop(p, grad_omega):
    """``grad_c = B^T grad_omega``."""
    return p.backprop(grad_omega)


def refine(p, width):
    """Re-express ``p`` on a finer basis; returns (param, projection error)."""
    omega = p.expand()
    fine = BsplineParam.fit(omega, width, p.pin_start)
    return fine, float(np.max(np.abs(fine.expand() - omega))) if omega.size else 0.0


# --------------------------------------------------------------------------
# rotations

def _rz(theta):
    c, s = np.cos(theta), np.sin(theta)
    z, o = np.zeros_like(c), np.ones_like(c)
    r = np.stack([np.stack([c, -s, z], -1), np.stack([s, c, z], -1), np.stack([z, z, o], -1)], -2)
    dr = np.stack([np.stack([-s, -c, z], -1), np.stack([c, -s, z], -1),
                   np.stack([z, z, z], -1)], -2)
    return r, dr


def _ry(theta):
    c, s = np.cos(theta), np.sin(theta)
    z, o = np.zeros_like(c), np.ones_like(c)
    r = np.stack([np.stack([c, z, s], -1), np.stack([z, o, z], -1), np.stack([-s, z, c], -1)], -2)
    dr = np.stack([np.stack([-s, z, c], -1), np.stack([z, z, z], -1),
                   np.stack([-c, z, -s], -1)], -2)
    return r, dr


def rotation_matrices(angles, mode, ndim):
    """Rotation matrices and their angle derivatives.

    ``mode="z"``: one angle per shot, rotation about the z axis (in-plane
    for 2D).  ``mode="zyz"``: Euler angles (Ns, 3), ``Rz(a) Ry(b) Rz(g)``.
    Returns ``R`` (Ns, Nd, Nd) and ``dR`` (Ns, P, Nd, Nd) with P angles/shot.
    """
    angles = np.asarray(angles, dtype=np.float64)
    if mode == "z":
        r, dr = _rz(angles.reshape(-1))
        r, dr = r[:, :ndim, :ndim], dr[:, None, :ndim, :ndim]
        return r, dr
    if mode == "zyz":
        if ndim != 3:
            raise ValueError("zyz rotations need 3-D trajectories")
        a, b, g = angles.reshape(-1, 3).T
        ra, da = _rz(a)
        rb, db = _ry(b)
        rg, dg = _rz(g)
        r = ra @ rb @ rg
        dr = np.stack([da @ rb @ rg, ra @ db @ rg, ra @ rb @ dg], axis=1)
        return r, dr
    raise ValueError(f"unknown rotation mode {mode!r}")


@dataclass(frozen=True)
class RotationParam:
    """Shots formed by rotating base shots.

    ``base`` (Nfe, Nb, Nd) are the base readouts, ``base_index`` (Ns,) picks
    the base for each shot, ``angles`` are (Ns,) for mode ``"z"`` or (Ns, 3)
    for ``"zyz"``.
    """

    base: np.ndarray
    angles: np.ndarray
    base_index: np.ndarray = None
    mode: str = "z"

    def __post_init__(self):
        base = np.asarray(self.base, dtype=np.float64)
        angles = np.asarray(self.angles, dtype=np.float64)
        n_shots = angles.shape[0]
        idx = np.zeros(n_shots, dtype=np.intp) if self.base_index is None else \
            np.asarray(self.base_index, dtype=np.intp)
        if idx.shape != (n_shots,) or idx.min() < 0 or idx.max() >= base.shape[1]:
            raise ValueError("base_index must select one base shot per angle")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "angles", angles)
        object.__setattr__(self, "base_index", idx)

    @property
    def coef(self):
        return self.angles

    def with_coef(self, angles):
        return RotationParam(self.base, angles, self.base_index, self.mode)

    def expand(self, angles=None):
        angles = self.angles if angles is None else angles
        r, _ = rotation_matrices(angles, self.mode, self.base.shape[2])
        shots = self.base[:, self.base_index, :]
        return np.einsum("sij,tsj->tsi", r, shots)

    def backprop(self, grad_omega, angles=None):
        angles = self.angles if angles is None else angles
        _, dr = rotation_matrices(angles, self.mode, self.base.shape[2])
        shots = self.base[:, self.base_index, :]
        g = np.einsum("tsi,spij,tsj->sp", grad_omega, dr, shots)
        return g.reshape(np.shape(angles))

    def project_step(self, step):
        return step


def rotate_expand(p, like=None):
    omega = p.expand()
    return omega if like is None else Trajectory.from_iterate(omega, like)


def rotate_backprop(p, grad_omega):
    return p.backprop(grad_omega)


# --------------------------------------------------------------------------
# generators

@dataclass(frozen=True)
class Geometry:
    """Acquisition geometry for the baseline generators.

    ``n_shots`` is spokes per kz plane for stack-of-stars, total spokes for
    radial/kooshball, and EPI lines for ``epi``.
    """

    fov_mm: tuple
    matrix_size: tuple
    n_readout: int
    n_shots: int
    raster_s: float = 4e-6
    n_planes: int = 1
    scheme: str = "uniform"


def golden_angles(n, start=0.0):
    """Golden-angle (111.246 deg) increments, radians modulo pi."""
    return np.mod(start + np.arange(n) * np.deg2rad(GOLDEN_ANGLE_DEG), np.pi)


def spoke_angles(n, scheme):
    if scheme == "uniform":
        return np.arange(n) * np.pi / n
    if scheme == "golden":
        return golden_angles(n)
    raise ValueError(f"unknown angle scheme {scheme!r}")


def spoke_readout(n_readout):
    """Diameter readout from -pi towards pi: -pi + 2 pi j / Nfe."""
    return -np.pi + 2 * np.pi * np.arange(n_readout) / n_readout


def _check_feasible(traj, limits):
    if limits is None:
        return traj
    if traj.n_readout >= 2:
        g = np.linalg.norm(traj_to_gradient(traj, limits), axis=-1).max()
        if g > limits.gmax * (1 + 1e-9):
            raise InfeasibleGeometry(
                f"gradient amplitude {g:.2f} mT/m exceeds gmax {limits.gmax:g} mT/m")
    if traj.n_readout >= 3:
        s = np.linalg.norm(traj_to_slew(traj, limits), axis=-1).max()
        if s > limits.smax * (1 + 1e-9):
            raise InfeasibleGeometry(
                f"slew rate {s:.2f} T/m/s exceeds smax {limits.smax:g} T/m/s")
    return traj


def radial2d(geometry, angles=None):
    if angles is None:
        angles = spoke_angles(geometry.n_shots, geometry.scheme)
    k = spoke_readout(geometry.n_readout)
    angles = np.asarray(angles)
    samples = np.stack([np.outer(k, np.cos(angles)), np.outer(k, np.sin(angles))], axis=-1)
    return Trajectory(samples, geometry.fov_mm, geometry.matrix_size, geometry.raster_s)


def stack_of_stars_base(geometry):
    """One kx spoke per kz plane, shape (Nfe, Nz, 3), and kz values."""
    nz = geometry.n_planes
    if len(geometry.matrix_size) != 3 or geometry.matrix_size[2] != nz:
        raise ValueError("stack-of-stars needs a 3-D matrix whose last size equals n_planes")
    kz = 2 * np.pi * (np.arange(nz) - nz // 2) / nz
    k = spoke_readout(geometry.n_readout)
    base = np.zeros((len(k), nz, 3))
    base[:, :, 0] = k[:, None]
    base[:, :, 2] = kz[None, :]
    return base, kz


def stack_of_stars_angles(geometry):
    """Plane-major angle list; golden scheme continues across planes."""
    nz, ns = geometry.n_planes, geometry.n_shots
    if geometry.scheme == "golden":
        return golden_angles(nz * ns)
    return np.tile(spoke_angles(ns, geometry.scheme), nz)


def stack_of_stars_param(geometry, angles=None):
    base, _ = stack_of_stars_base(geometry)
    if angles is None:
        angles = stack_of_stars_angles(geometry)
    index = np.repeat(np.arange(geometry.n_planes), geometry.n_shots)
    return RotationParam(base, angles, index, "z")


def stack_of_stars(geometry, angles=None):
    p = stack_of_stars_param(geometry, angles)
    return Trajectory(p.expand(), geometry.fov_mm, geometry.matrix_size, geometry.raster_s)


def fibonacci_directions(n):
    """Near-uniform unit vectors on the sphere (golden-spiral lattice)."""
    i = np.arange(n) + 0.5
    z = 1 - 2 * i / n
    phi = np.pi * (1 + np.sqrt(5)) * i
    r = np.sqrt(1 - z ** 2)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


def kooshball3d(geometry):
    dirs = fibonacci_directions(geometry.n_shots)
    # keep every coordinate inside [-pi, pi): spokes run from -pi*u
    k = spoke_readout(geometry.n_readout)
    samples = k[:, None, None] * dirs[None, :, :]
    return Trajectory(samples, geometry.fov_mm, geometry.matrix_size, geometry.raster_s)


def _trapezoid_train(n_lines, amp, n_ramp, n_flat):
    """Alternating-polarity readout lobes joined by direct polarity reversals."""
    up = amp * np.arange(1, n_ramp + 1) / n_ramp
    parts = [up]
    for i in range(n_lines):
        sign = 1 if i % 2 == 0 else -1
        parts.append(np.full(n_flat, sign * amp))
        if i < n_lines - 1:
            parts.append(sign * amp * (1 - 2 * np.arange(1, 2 * n_ramp + 1) / (2 * n_ramp)))
    parts.append(((-1) ** (n_lines - 1)) * amp * (1 - np.arange(1, n_ramp + 1) / n_ramp))
    return np.concatenate(parts), n_ramp


def epi_readout(geometry, limits, amp_frac=0.8, ramp_frac=0.9, blip_frac=0.4):
    """Single-shot EPI readout in the kx-ky plane (kz = 0 for 3-D matrices).

    Readout lobes of amplitude ``amp_frac * gmax`` switch polarity at
    ``ramp_frac * smax``; ky blips are triangles at ``blip_frac * smax``
    centred on each reversal.  Returns ``(trajectory, echo_index)`` where the
    trajectory is translated so that the sample at ``echo_index`` (middle of
    the central line) is exactly the k-space origin.
    """
    limits = limits or ScannerLimits()
    nd = len(geometry.matrix_size)
    dt, gam = geometry.raster_s, limits.gamma
    fov_m = np.asarray(geometry.fov_mm, dtype=float) * 1e-3
    nx = geometry.matrix_size[0]
    n_lines = geometry.n_shots
    kx_span = (nx - 1) / fov_m[0]                # stays inside [-pi, pi)
    dky = 1.0 / fov_m[1]

    amp = amp_frac * limits.gmax * 1e-3          # T/m
    slew = ramp_frac * limits.smax
    n_ramp = max(1, int(np.ceil(amp / (slew * dt))))
    ramp_area = amp * n_ramp * dt                # area of a 0->amp->0 pair of ramps
    flat_area = kx_span / gam - ramp_area
    if flat_area < 0:
        raise InfeasibleGeometry("gradient amplitude too high for the requested kx span")
    n_flat = max(1, int(round(flat_area / (amp * dt))))
    gx, _ = _trapezoid_train(n_lines, amp, n_ramp, n_flat)

    gy = np.zeros_like(gx)
    blip_slew = blip_frac * limits.smax
    half = max(1, int(np.ceil(np.sqrt(dky / gam / blip_slew) / dt)))
    tri = np.concatenate([np.arange(1, half + 1), np.arange(half - 1, 0, -1)]).astype(float)
    tri *= (dky / gam) / (tri.sum() * dt)
    line_len = n_flat + 2 * n_ramp
    for i in range(n_lines - 1):
        mid = n_ramp + n_flat + i * line_len + n_ramp
        lo = mid - (len(tri) // 2)
        gy[lo:lo + len(tri)] += tri

    g = np.zeros((len(gx), nd))
    g[:, 0], g[:, 1] = gx, gy
    k = np.concatenate([np.zeros((1, nd)), np.cumsum(g, axis=0) * gam * dt], axis=0)
    centre_line = n_lines // 2
    echo = n_ramp + centre_line * line_len + n_flat // 2
    k = k - k[echo]
    traj = Trajectory.from_physical(k[:, None, :], geometry.fov_mm, geometry.matrix_size, dt)
    return _check_feasible(traj, limits), echo


def generate_initial(kind, geometry, limits=None):
    """Baseline trajectory of the given kind, checked against ``limits``."""
    if kind == "radial2d":
        traj = radial2d(geometry)
    elif kind == "stack_of_stars":
        traj = stack_of_stars(geometry)
    elif kind == "kooshball3d":
        traj = kooshball3d(geometry)
    elif kind == "epi":
        return epi_readout(geometry, limits)[0]
    else:
        raise ValueError(f"unknown trajectory kind {kind!r}")
    return _check_feasible(traj, limits)
