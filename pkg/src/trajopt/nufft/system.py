"""Multi-coil system model ``A(omega) = scale * NUFFT(omega) * S``."""
from __future__ import annotations

import numpy as np

from ..core import SenseMaps, Trajectory
from .plan import NufftPlan
from .toeplitz import ToeplitzNormal


class SystemModel:
    """Forward model with optional sensitivity maps and simulated noise.

    Parameters
    ----------
    plan : NufftPlan
    maps : SenseMaps or ndarray (Ncoil, *matrix_size), optional
        Without maps the model is single-coil and samples have shape (M,).
    noise_sigma : float, optional
        Absolute standard deviation of the complex noise added by
        :meth:`simulate`.  When omitted, ``noise_rel * max|Ax|`` is used.
    normalize : bool
        Scale by ``1/sqrt(prod(matrix_size))`` so that fully sampled
        Cartesian acquisition is unitary.
    use_toeplitz : bool
        Evaluate ``A'A`` by Toeplitz embedding instead of NUFFT pairs.
    """

    def __init__(self, plan, maps=None, noise_sigma=None, noise_rel=0.01, normalize=True,
                 use_toeplitz=True):
        self.plan = plan
        if maps is not None:
            maps = maps.maps if isinstance(maps, SenseMaps) else np.asarray(maps, np.complex128)
            if maps.shape[1:] != plan.matrix_size:
                raise ValueError(
                    f"sensitivity maps {maps.shape[1:]} do not match grid {plan.matrix_size}")
        self.maps = maps
        self.noise_sigma = noise_sigma
        self.noise_rel = float(noise_rel)
        self.normalize = normalize
        self.scale = 1.0 / np.sqrt(np.prod(plan.matrix_size)) if normalize else 1.0
        self.use_toeplitz = use_toeplitz
        self._toeplitz = None

    @classmethod
    def for_trajectory(cls, traj, maps=None, tier="train", backend=None, **kwargs):
        omega = traj.flat_samples() if isinstance(traj, Trajectory) else traj
        matrix = kwargs.pop("matrix_size", None)
        if isinstance(traj, Trajectory):
            matrix = traj.matrix_size
        return cls(NufftPlan(omega, matrix, tier=tier, backend=backend), maps, **kwargs)

    def with_samples(self, omega):
        """Same configuration for new sample locations."""
        p = self.plan
        plan = NufftPlan(omega, p.matrix_size, tier=p.tier, oversampling=p.oversampling,
                         width=p.width, backend=p.backend)
        return SystemModel(plan, self.maps, self.noise_sigma, self.noise_rel, self.normalize,
                           self.use_toeplitz)

    @property
    def n_coils(self):
        return 1 if self.maps is None else self.maps.shape[0]

    @property
    def matrix_size(self):
        return self.plan.matrix_size

    @property
    def data_shape(self):
        m = self.plan.n_samples
        return (m,) if self.maps is None else (self.n_coils, m)

    def _coil_images(self, x):
        return x[None] if self.maps is None else self.maps * x

    def _coil_combine(self, xc):
        return xc[0] if self.maps is None else np.sum(np.conj(self.maps) * xc, axis=0)

    def _check_image(self, x):
        x = np.asarray(getattr(x, "data", x))
        if x.shape != self.matrix_size:
            raise ValueError(f"image shape {x.shape} does not match {self.matrix_size}")
        return x

    def forward(self, x):
        x = self._check_image(x)
        y = self.scale * self.plan.forward(self._coil_images(x))
        return y[0] if self.maps is None else y

    def adjoint(self, y):
        y = np.asarray(y)
        if y.shape != self.data_shape:
            raise ValueError(f"data shape {y.shape} does not match {self.data_shape}")
        yc = y[None] if self.maps is None else y
        return self._coil_combine(self.scale * self.plan.adjoint(yc))

    @property
    def toeplitz(self):
        if self._toeplitz is None:
            self._toeplitz = ToeplitzNormal(self.plan)
        return self._toeplitz

    def normal(self, x):
        """``A'A x``."""
        x = self._check_image(x)
        if not self.use_toeplitz:
            return self.adjoint(self.forward(x))
        return self._coil_combine(self.scale ** 2 * self.toeplitz.apply(self._coil_images(x)))

    def noise_level(self, y_clean):
        if self.noise_sigma is not None:
            return float(self.noise_sigma)
        return self.noise_rel * float(np.max(np.abs(y_clean))) if y_clean.size else 0.0

    def simulate(self, x, rng=None, sigma=None):
        """``y = A x + eps`` with circular complex Gaussian ``eps``."""
        y = self.forward(x)
        sigma = self.noise_level(y) if sigma is None else sigma
        if sigma > 0:
            rng = np.random.default_rng(rng)
            noise = rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape)
            y = y + sigma / np.sqrt(2) * noise
        return y

    # -- gradients w.r.t. sample locations (real loss, shape (M, Nd)) --

    def _weighted_forward(self, images):
        """``scale * A(S_c u * r_d)`` for each image: shape (n_img, Nd, C, M)."""
        coil = np.stack([self._coil_images(u) for u in images])
        weighted = self.plan.coordinate_weighted(coil)
        return self.scale * self.plan.forward(np.moveaxis(weighted, 0, 1))

    def vjp_forward_omega(self, x, ybar):
        """Through ``y = A x`` with upstream ``ybar``."""
        ybar = np.asarray(ybar).reshape(self.n_coils, -1)
        ax = self._weighted_forward([x])[0]
        g = np.real(np.conj(ybar)[None] * (-1j) * ax)
        return g.sum(axis=1).T

    def vjp_adjoint_omega(self, y, xbar):
        """Through ``x = A' y`` with upstream image ``xbar``."""
        y = np.asarray(y).reshape(self.n_coils, -1)
        au = self._weighted_forward([xbar])[0]
        g = np.real(1j * y[None] * np.conj(au))
        return g.sum(axis=1).T

    def vjp_normal_omega(self, p, qbar):
        """Through ``q = A'A p`` with upstream image ``qbar``."""
        coil = np.stack([self._coil_images(p), self._coil_images(qbar)])
        stack = np.concatenate([coil[:, None], self.plan.coordinate_weighted(coil).swapaxes(0, 1)],
                               axis=1)
        f = self.scale * self.plan.forward(stack)
        z, zd = f[0, 0], f[0, 1:]
        w, wd = f[1, 0], f[1, 1:]
        g = np.real(1j * z[None] * np.conj(wd)) + np.real(np.conj(w)[None] * (-1j) * zd)
        return g.sum(axis=1).T
