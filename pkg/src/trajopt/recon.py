"""Differentiable unrolled CG reconstructions and the image-quality loss.

CG is run for a fixed number of iterations from x0 = 0 on

    (A'A + lam I) x = A'y          (cg_sense)
    (A'A + lam T'T) x = A'y        (pls, T = finite differences)

and every iterate is recorded, so the reverse pass in :func:`cg_backward`
differentiates the computed reconstruction exactly (not the limit point)
with respect to the sample locations, ``log(lam)``, and the data.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nufft.plan import NufftPlan

PSNR_CAP_DB = 200.0


@dataclass(frozen=True)
class ReconConfig:
    method: str = "pls"
    lam: float = 1e-3
    n_iter: int = 30
    fd_operator: str = "finite_difference"
    train_lambda: bool = False

    def __post_init__(self):
        if self.method not in ("cg_sense", "pls"):
            raise ValueError(f"unknown reconstruction method {self.method!r}")
        if self.fd_operator not in ("finite_difference", "identity"):
            raise ValueError(f"unknown regularization operator {self.fd_operator!r}")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.n_iter < 1:
            raise ValueError("n_iter must be >= 1")


@dataclass
class ReconParams:
    """Trainable reconstruction parameters; ``lam = exp(log_lam)``."""

    log_lam: float

    @classmethod
    def from_config(cls, cfg):
        return cls(float(np.log(cfg.lam)) if cfg.lam > 0 else -np.inf)

    @property
    def lam(self):
        return float(np.exp(self.log_lam))


def _diff_t(v, axis):
    pad = [(0, 0)] * v.ndim
    pad[axis] = (1, 1)
    return -np.diff(np.pad(v, pad), axis=axis)


def roughness(x):
    """``T'T x`` for first differences along every axis (no wrap-around)."""
    out = np.zeros_like(x)
    for ax in range(x.ndim):
        if x.shape[ax] > 1:
            out += _diff_t(np.diff(x, axis=ax), ax)
    return out


def regularizer(cfg):
    if cfg.method == "cg_sense" or cfg.fd_operator == "identity":
        return lambda x: x
    return roughness


def _rdot(a, b):
    return float(np.real(np.vdot(a, b)))


@dataclass
class CGTape:
    """Recorded CG state: p_k, q_k = M p_k, r_k, alpha_k, beta_k, gamma_k."""

    p: list = field(default_factory=list)
    q: list = field(default_factory=list)
    r: list = field(default_factory=list)
    alpha: list = field(default_factory=list)
    beta: list = field(default_factory=list)
    gamma: list = field(default_factory=list)
    delta: list = field(default_factory=list)


@dataclass
class ReconResult:
    image: np.ndarray
    n_iter: int
    breakdown: bool
    residual_norms: list
    objective: list
    tape: CGTape = None
    lam: float = 0.0


def recon_unrolled(model, y, cfg, lam=None, record=True):
    """Run ``cfg.n_iter`` CG iterations on the regularized normal equations.

    Stops early (``breakdown=True``) on a zero-curvature direction.
    ``objective`` tracks ``x'Mx/2 - Re(b'x)``, which CG decreases
    monotonically; the residual norm is recorded but need not be monotone.
    """
    lam = cfg.lam if lam is None else lam
    reg = regularizer(cfg)

    def apply(v):
        return model.normal(v) + lam * reg(v)

    b = model.adjoint(y)
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    gamma = _rdot(r, r)
    tape = CGTape() if record else None
    res, obj = [np.sqrt(gamma)], [0.0]
    breakdown = False
    n_done = 0
    # residual at round-off level: further steps only divide noise by noise
    tiny = (1e-15 ** 2) * gamma
    for _ in range(cfg.n_iter):
        if gamma <= tiny or gamma == 0.0:
            break
        q = apply(p)
        delta = _rdot(p, q)
        if not delta > 0:
            breakdown = True
            break
        alpha = gamma / delta
        if record:
            tape.p.append(p)
            tape.q.append(q)
            tape.r.append(r)
            tape.gamma.append(gamma)
            tape.delta.append(delta)
            tape.alpha.append(alpha)
        x = x + alpha * p
        r = r - alpha * q
        gamma_new = _rdot(r, r)
        beta = gamma_new / gamma
        if record:
            tape.beta.append(beta)
        p = r + beta * p
        gamma = gamma_new
        n_done += 1
        res.append(np.sqrt(gamma))
        obj.append(0.5 * _rdot(x, b - r) - _rdot(b, x))
    if record:
        tape.r.append(r)
        tape.gamma.append(gamma)
    return ReconResult(x, n_done, breakdown, res, obj, tape, lam)


def cg_backward(model, result, xbar, cfg, need_omega=True):
    """Reverse pass through a recorded :func:`recon_unrolled` run.

    ``xbar`` is ``dL/dRe(x) + i dL/dIm(x)`` for the final iterate.  Returns
    ``(bbar, omega_bar, lam_bar)`` where ``bbar`` is the sensitivity w.r.t.
    the right-hand side ``A'y``, ``omega_bar`` (M, Nd) collects the
    dependence of every ``A'A`` application on the samples, and ``lam_bar``
    is ``dL/dlam``.
    """
    t = result.tape
    lam = result.lam
    reg = regularizer(cfg)
    n = len(t.alpha)
    omega_bar = np.zeros((model.plan.n_samples, model.plan.ndim)) if need_omega else None
    lam_bar = 0.0

    x_bar = xbar
    r_bar = np.zeros_like(xbar)          # adjoint of r_{k+1}
    p_bar = np.zeros_like(xbar)          # adjoint of p_{k+1}
    gamma_bar = 0.0                      # adjoint of gamma_{k+1}
    for k in range(n - 1, -1, -1):
        p, q, r_next = t.p[k], t.q[k], t.r[k + 1]
        alpha, beta, gamma, delta = t.alpha[k], t.beta[k], t.gamma[k], t.delta[k]
        # p_{k+1} = r_{k+1} + beta_k p_k
        r_bar = r_bar + p_bar
        beta_bar = _rdot(p_bar, p)
        pk_bar = beta * p_bar
        # beta_k = gamma_{k+1} / gamma_k
        gamma_bar += beta_bar / gamma
        gk_bar = -beta_bar * beta / gamma
        # gamma_{k+1} = |r_{k+1}|^2
        r_bar = r_bar + 2 * gamma_bar * r_next
        # r_{k+1} = r_k - alpha_k q_k
        alpha_bar = -_rdot(r_bar, q)
        q_bar = -alpha * r_bar
        # x_{k+1} = x_k + alpha_k p_k
        alpha_bar += _rdot(x_bar, p)
        pk_bar = pk_bar + alpha * x_bar
        # alpha_k = gamma_k / delta_k
        gk_bar += alpha_bar / delta
        delta_bar = -alpha_bar * alpha / delta
        # delta_k = Re <p_k, q_k>
        pk_bar = pk_bar + delta_bar * q
        q_bar = q_bar + delta_bar * p
        # q_k = (A'A + lam R) p_k, M Hermitian
        pk_bar = pk_bar + model.normal(q_bar) + lam * reg(q_bar)
        lam_bar += _rdot(q_bar, reg(p))
        if need_omega:
            omega_bar += model.vjp_normal_omega(p, q_bar)
        p_bar, gamma_bar = pk_bar, gk_bar
    # gamma_0 = |r_0|^2, r_0 = p_0 = b
    r_bar = r_bar + 2 * gamma_bar * t.r[0]
    bbar = r_bar + p_bar
    return bbar, omega_bar, lam_bar


def image_loss(xhat, x, l1_frac=0.5):
    """``l1_frac * mean|e| + (1 - l1_frac) * mean|e|^2`` and its sensitivity."""
    e = xhat - x
    a = np.abs(e)
    n = e.size
    value = l1_frac * a.sum() / n + (1 - l1_frac) * (a ** 2).sum() / n
    unit = np.divide(e, a, out=np.zeros_like(e), where=a > 0)
    grad = (l1_frac * unit + (1 - l1_frac) * 2 * e) / n
    return float(value), grad


@dataclass
class ReconLoss:
    value: float
    grad_omega: np.ndarray
    grad_log_lam: float
    images: list


def loss_recon(model, x_batch, cfg, l1_frac=0.5, log_lam=None, rng=None, noise=True,
               need_grad=True):
    """Mean image-quality loss over a batch and its gradients.

    For each ground truth ``x``: simulate ``y = A x + eps``, reconstruct, and
    score with :func:`image_loss`.  Gradients flow through the simulated
    data, the right-hand side ``A'y``, and every CG step.  The noise level
    is treated as a constant.
    """
    if len(x_batch) == 0:
        raise ValueError("empty batch")
    lam = cfg.lam if log_lam is None else float(np.exp(log_lam))
    rng = np.random.default_rng(rng)
    grad = np.zeros((model.plan.n_samples, model.plan.ndim))
    lam_grad = 0.0
    total = 0.0
    images = []
    nb = len(x_batch)
    for x in x_batch:
        x = np.asarray(getattr(x, "data", x), dtype=np.complex128)
        y_clean = model.forward(x)
        y = model.simulate(x, rng) if noise else y_clean
        res = recon_unrolled(model, y, cfg, lam=lam, record=need_grad)
        value, xbar = image_loss(res.image, x, l1_frac)
        total += value / nb
        images.append(res.image)
        if not need_grad:
            continue
        bbar, g_normal, l_bar = cg_backward(model, res, xbar / nb, cfg)
        # b = A'y  ->  ybar = A bbar, plus the adjoint's dependence on omega
        ybar = model.forward(bbar)
        grad += g_normal + model.vjp_adjoint_omega(y, bbar)
        # y = A x + eps
        grad += model.vjp_forward_omega(x, ybar)
        lam_grad += l_bar * lam
    return ReconLoss(total, grad, lam_grad, images)


def psnr(reference, image, cap=PSNR_CAP_DB):
    """Peak SNR in dB against ``max|reference|``, capped for identical images."""
    ref = np.asarray(reference)
    mse = float(np.mean(np.abs(np.asarray(image) - ref) ** 2))
    peak = float(np.max(np.abs(ref)))
    if mse == 0 or peak == 0:
        return cap
    return float(min(cap, 10 * np.log10(peak ** 2 / mse)))


def nrmse(reference, image):
    ref = np.asarray(reference)
    return float(np.linalg.norm(np.asarray(image) - ref) / np.linalg.norm(ref))


def _gaussian_window(u, sigma, half):
    start = np.floor(u).astype(np.intp) - half
    k = start[:, None] + np.arange(2 * half + 2)[None, :]
    w = np.exp(-0.5 * ((u[:, None] - k) / sigma) ** 2)
    return k, w


def sampling_density(omega, matrix_size, sigma, backend=None):
    """Sum of Gaussian bumps (std ``sigma`` grid cells) at the sample locations.

    Grid index ``i`` along axis ``d`` is the k-space location
    ``2 pi (i - N_d // 2) / N_d``; bumps are not wrapped around the edges.
    """
    from .nufft import _backend

    kern = _backend.get_kernels(backend)
    omega = np.asarray(omega).reshape(-1, len(matrix_size))
    half = int(np.ceil(4 * sigma))
    pad = half + 2
    size = tuple(n + 2 * pad for n in matrix_size)
    args = []
    for d, n in enumerate(matrix_size):
        u = omega[:, d] * n / (2 * np.pi) + n // 2 + pad
        k, w = _gaussian_window(u, sigma, half)
        args += [np.ascontiguousarray(np.clip(k, 0, size[d] - 1), dtype=np.intp),
                 np.ascontiguousarray(w)]
    grid = np.zeros((1,) + size, dtype=np.complex128)
    data = np.ones((1, omega.shape[0]), dtype=np.complex128)
    spread = kern.spread2 if len(matrix_size) == 2 else kern.spread3
    spread(data, *args, grid)
    crop = tuple(slice(pad, pad + n) for n in matrix_size)
    return grid[0][crop].real


def psf_and_density(traj, matrix_size=None, gaussian_sigma=1.0, tier="eval"):
    """Single-coil PSF (adjoint of all-ones data) and Gaussian sampling density."""
    if gaussian_sigma <= 0:
        raise ValueError("gaussian_sigma must be positive")
    matrix_size = tuple(matrix_size or traj.matrix_size)
    omega = traj.flat_samples()
    plan = NufftPlan(omega, matrix_size, tier=tier)
    psf = plan.adjoint(np.ones(plan.n_samples, dtype=np.complex128))
    return psf, sampling_density(omega, matrix_size, gaussian_sigma)
