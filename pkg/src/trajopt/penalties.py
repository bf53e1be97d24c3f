"""Constraint penalties on trajectories and their gradients w.r.t. samples.

All gradients are returned in the trajectory's own units (per rad/sample),
shape (Nfe, Ns, Nd).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft

from .core import traj_to_gradient, traj_to_slew


def soft_threshold(x, lam):
    """``max(|x| - lam, 0)``."""
    if np.any(np.asarray(lam) < 0):
        raise ValueError("threshold must be nonnegative")
    return np.maximum(np.abs(x) - lam, 0.0)


def soft_threshold_grad(x, lam):
    """Subgradient ``sign(x) * [|x| > lam]`` (zero at the kink)."""
    x = np.asarray(x)
    return np.sign(x) * (np.abs(x) > lam)


def _diff_adjoint(v, axis=0):
    """Transpose of ``np.diff(., axis=axis)``."""
    pad = [(0, 0)] * v.ndim
    pad[axis] = (1, 1)
    return -np.diff(np.pad(v, pad), axis=axis)


def _norm_and_unit(v):
    """Euclidean norm over the last axis and ``v / |v|`` (0 where |v| = 0)."""
    n = np.linalg.norm(v, axis=-1)
    unit = np.divide(v, n[..., None], out=np.zeros_like(v), where=n[..., None] > 0)
    return n, unit


def loss_hardware(traj, limits):
    """Gradient-strength and slew-rate penalties.

    Returns ``(L_g, L_s, grad_g, grad_s)`` where ``L_g`` sums
    ``max(|g| - gmax, 0)`` [mT/m] and ``L_s`` sums ``max(|s| - smax, 0)``
    [T/m/s] over shots and time points, ``|.|`` being the Euclidean norm
    across axes.  ``grad_g``/``grad_s`` are the gradients w.r.t. the samples.
    """
    g = traj_to_gradient(traj, limits)
    s = traj_to_slew(traj, limits)
    gn, gu = _norm_and_unit(g)
    sn, su = _norm_and_unit(s)
    loss_g = float(soft_threshold(gn, limits.gmax).sum())
    loss_s = float(soft_threshold(sn, limits.smax).sum())

    scale = traj.cycles_per_m_per_rad
    cg = scale * 1e3 / (limits.gamma * traj.raster_s)
    cs = scale / (limits.gamma * traj.raster_s ** 2)
    gbar = gu * (gn > limits.gmax)[..., None]
    sbar = su * (sn > limits.smax)[..., None]
    grad_g = _diff_adjoint(gbar) * cg
    grad_s = _diff_adjoint(_diff_adjoint(sbar)) * cs
    return loss_g, loss_s, grad_g, grad_s


@dataclass(frozen=True)
class PnsResponse:
    """Per-axis stimulation fraction ``p`` (L, Ns, Nd), L = Nfe - 2, and its
    root-sum-of-squares across axes ``combined`` (L, Ns)."""

    p: np.ndarray
    combined: np.ndarray

    @property
    def peak(self):
        return float(self.combined.max()) if self.combined.size else 0.0


def pns_kernel(n, limits, raster_s):
    """Causal response kernel ``c dt / (smin (c + m dt)^2)``, m = 0..n-1."""
    c = limits.chronaxie_s
    m = np.arange(n)
    return c * raster_s / (limits.smin * (c + m * raster_s) ** 2)


def _fft_len(n):
    return 1 << int(np.ceil(np.log2(max(2 * n, 2))))


def _causal_conv(s, h):
    """``out[j] = sum_{k<=j} h[j-k] s[k]`` along axis 0, zero-padded FFT."""
    n = s.shape[0]
    nfft = _fft_len(n)
    hf = scipy.fft.rfft(h, nfft)
    sf = scipy.fft.rfft(s, nfft, axis=0)
    return scipy.fft.irfft(sf * hf.reshape((-1,) + (1,) * (s.ndim - 1)), nfft, axis=0)[:n]


def _causal_corr(v, h):
    """Adjoint of :func:`_causal_conv`: ``out[k] = sum_{j>=k} h[j-k] v[j]``."""
    return _causal_conv(v[::-1], h)[::-1]


def pns_from_slew(slew, limits, raster_s):
    """Stimulation response of slew waveforms (L, Ns, Nd)."""
    h = pns_kernel(slew.shape[0], limits, raster_s)
    p = _causal_conv(slew, h)
    return PnsResponse(p, np.linalg.norm(p, axis=-1))


def pns_response(traj, limits):
    """Convolution-model nerve-stimulation response of each shot and axis."""
    return pns_from_slew(traj_to_slew(traj, limits), limits, traj.raster_s)


def loss_pns(traj, limits):
    """``sum max(combined - pmax, 0)`` and its gradient w.r.t. the samples."""
    slew = traj_to_slew(traj, limits)
    h = pns_kernel(slew.shape[0], limits, traj.raster_s)
    p = _causal_conv(slew, h)
    comb, unit = _norm_and_unit(p)
    loss = float(soft_threshold(comb, limits.pmax).sum())
    pbar = unit * (comb > limits.pmax)[..., None]
    sbar = _causal_corr(pbar, h)
    cs = traj.cycles_per_m_per_rad / (limits.gamma * traj.raster_s ** 2)
    grad = _diff_adjoint(_diff_adjoint(sbar)) * cs
    return loss, grad


@dataclass(frozen=True)
class ContrastSpec:
    """Samples constrained to the k-space origin, as (shot, time, dim) triples."""

    points: tuple

    def __post_init__(self):
        pts = tuple(tuple(int(v) for v in p) for p in self.points)
        if any(len(p) != 3 for p in pts):
            raise ValueError("contrast points are (shot, time, dim) triples")
        object.__setattr__(self, "points", pts)

    @classmethod
    def echo_time(cls, te_s, raster_s, n_shots, ndim, shots=None):
        """Lock every axis of sample ``round(te / dt)`` in each shot."""
        j = int(round(te_s / raster_s))
        shots = range(n_shots) if shots is None else shots
        return cls(tuple((i, j, d) for i in shots for d in range(ndim)))

    def index(self, shape):
        nfe, ns, nd = shape
        arr = np.array(self.points, dtype=np.intp).reshape(-1, 3)
        shot, t, d = arr.T
        bad = (shot < 0) | (shot >= ns) | (t < 0) | (t >= nfe) | (d < 0) | (d >= nd)
        if bad.any():
            raise IndexError(f"contrast point {tuple(arr[bad][0])} outside trajectory {shape}")
        return t, shot, d


def loss_contrast(traj, spec):
    """``sum |omega|`` over the constrained points and its subgradient."""
    grad = np.zeros(traj.samples.shape)
    if not spec.points:
        return 0.0, grad
    t, shot, d = spec.index(traj.samples.shape)
    vals = traj.samples[t, shot, d]
    np.add.at(grad, (t, shot, d), np.sign(vals))
    return float(np.abs(vals).sum()), grad
