"""Loss aggregation, the SGLD update, and the multi-level optimization driver."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .core import LossWeights, ScannerLimits, Trajectory
from .nufft.system import SystemModel
from .param import BsplineParam, RotationParam, refine
from .penalties import loss_contrast, loss_hardware, loss_pns
from .recon import ReconConfig, loss_recon

log = logging.getLogger(__name__)

TERMS = ("recon", "grad", "slew", "pns", "contrast")


class NumericalFailure(RuntimeError):
    """A loss term or gradient became non-finite.

    ``term`` names the offending term; ``history`` holds the records of the
    steps completed before the failure.
    """

    def __init__(self, term, history=None):
        super().__init__(f"non-finite value in loss term {term!r}")
        self.term = term
        self.history = history or []


@dataclass(frozen=True)
class OptConfig:
    """Optimizer settings.

    ``eta`` is the initial parameter step, decayed linearly towards 0 over
    each level when ``decay="linear"``.  ``eta_theta > 0`` also trains
    ``log(lam)``.  Langevin noise ``noise_factor * sqrt(2 eta) N(0, 1)`` is
    added when ``noise`` is on, except during the last ``quiet_frac`` of the
    steps of each level.  ``clip`` caps ``|grad|`` at ``clip`` times its
    median magnitude (off when None).
    """

    weights: LossWeights = field(default_factory=LossWeights)
    eta: float = 1e-4
    eta_theta: float = 0.0
    decay: str = "linear"
    steps: int = 100
    levels: tuple = (32, 16, 8)
    noise: bool = True
    noise_factor: float = 1.0
    quiet_frac: float = 0.1
    seed: int = 0
    batch_size: int = 1
    clip: float = None

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be > 0")
        if self.eta_theta < 0:
            raise ValueError("eta_theta must be >= 0")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.decay not in ("linear", "constant"):
            raise ValueError(f"unknown step-size decay {self.decay!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 <= self.quiet_frac <= 1:
            raise ValueError("quiet_frac must lie in [0, 1]")
        if self.levels is not None:
            levels = tuple(int(w) for w in self.levels)
            if any(w < 1 for w in levels):
                raise ValueError("B-spline widths must be positive")
            if list(levels) != sorted(levels, reverse=True):
                raise ValueError("levels must be ordered coarse to fine")
            object.__setattr__(self, "levels", levels)

    def step_size(self, k, n_steps, base=None):
        base = self.eta if base is None else base
        if self.decay == "constant" or n_steps == 0:
            return base
        return base * (1.0 - k / n_steps)

    def noisy(self, k, n_steps):
        return self.noise and k < n_steps - int(np.ceil(self.quiet_frac * n_steps))


@dataclass
class Objective:
    """Everything the total loss depends on besides the parameters.

    ``like`` supplies trajectory metadata (FOV, matrix, raster).  The recon
    term needs ``dataset``, a sequence of ground-truth images.
    """

    like: Trajectory
    weights: LossWeights = field(default_factory=LossWeights)
    limits: ScannerLimits = field(default_factory=ScannerLimits)
    contrast: object = None
    recon: ReconConfig = field(default_factory=lambda: ReconConfig(n_iter=6))
    dataset: list = field(default_factory=list)
    maps: object = None
    noise_sigma: float = None
    noise_rel: float = 0.01
    tier: str = "train"
    use_toeplitz: bool = True
    backend: str = None

    def model(self, traj):
        return SystemModel.for_trajectory(traj, self.maps, tier=self.tier, backend=self.backend,
                                          noise_sigma=self.noise_sigma, noise_rel=self.noise_rel,
                                          use_toeplitz=self.use_toeplitz)


@dataclass
class LossEval:
    total: float
    terms: dict
    grad_c: np.ndarray
    grad_theta: float
    grad_omega: np.ndarray


def _check(term, value, history=None):
    if not np.all(np.isfinite(value)):
        raise NumericalFailure(term, history)


def total_loss(param, batch, objective, log_lam=None, rng=None, need_grad=True):
    """Weighted sum of the loss terms and its gradient w.r.t. ``param.coef``.

    ``terms`` holds the unweighted value of every term; terms with weight 0
    are reported as 0 and not evaluated.  Raises :class:`NumericalFailure`
    naming the first non-finite term.
    """
    w = dict(zip(TERMS, objective.weights.as_tuple()))
    omega = param.expand()
    _check("trajectory", omega)
    traj = Trajectory.from_iterate(omega, objective.like)
    terms = dict.fromkeys(TERMS, 0.0)
    grad = np.zeros_like(omega)
    grad_theta = 0.0

    if w["recon"] > 0:
        if len(batch) == 0:
            raise ValueError("the recon term needs a non-empty batch")
        res = loss_recon(objective.model(traj), batch, objective.recon,
                         objective.weights.recon_l1_frac, log_lam, rng, need_grad=need_grad)
        _check("recon", res.value)
        terms["recon"] = res.value
        if need_grad:
            g = res.grad_omega.reshape(omega.shape)
            _check("recon", g)
            grad += w["recon"] * g
            grad_theta = w["recon"] * res.grad_log_lam
    if w["grad"] > 0 or w["slew"] > 0:
        lg, ls, gg, gs = loss_hardware(traj, objective.limits)
        terms["grad"], terms["slew"] = lg, ls
        for name, val, g in (("grad", lg, gg), ("slew", ls, gs)):
            _check(name, val)
            _check(name, g)
            grad += w[name] * g
    if w["pns"] > 0:
        lp, gp = loss_pns(traj, objective.limits)
        _check("pns", lp)
        _check("pns", gp)
        terms["pns"] = lp
        grad += w["pns"] * gp
    if w["contrast"] > 0 and objective.contrast is not None:
        lc, gc = loss_contrast(traj, objective.contrast)
        _check("contrast", lc)
        terms["contrast"] = lc
        grad += w["contrast"] * gc

    total = float(sum(w[k] * terms[k] for k in TERMS))
    grad_c = param.backprop(grad) if need_grad else None
    return LossEval(total, terms, grad_c, grad_theta, grad)


def sgld_step(c, grad, eta, rng=None, noise=True, noise_factor=1.0):
    """One Langevin update ``c - eta grad + noise_factor sqrt(2 eta) N(0, 1)``.

    With ``noise=False`` this is exactly ``c - eta * grad`` and ``rng`` is
    not touched.
    """
    if eta < 0:
        raise ValueError("step size must be >= 0")
    c = np.asarray(c, dtype=np.float64)
    out = c - eta * np.asarray(grad)
    if noise and eta > 0 and noise_factor > 0:
        out = out + noise_factor * np.sqrt(2 * eta) * rng.standard_normal(c.shape)
    return out


@dataclass
class StepRecord:
    step: int
    level: int
    total: float
    terms: dict
    eta: float
    noise_scale: float
    log_lam: float

    def as_row(self):
        row = {"step": self.step, "level": self.level, "total": self.total}
        row.update({f"L_{k}": v for k, v in self.terms.items()})
        row.update({"eta": self.eta, "noise_scale": self.noise_scale, "log_lam": self.log_lam})
        return row


@dataclass
class Phase:
    level: int
    width: object
    steps: int
    projection_error: float


@dataclass
class OptState:
    """Current iterate, step counter, history and the driver's RNG."""

    param: object
    log_lam: float
    rng: np.random.Generator
    step: int = 0
    history: list = field(default_factory=list)


@dataclass
class OptResult:
    trajectory: Trajectory
    final_trajectory: Trajectory
    history: list
    phases: list
    best_loss: float
    best_step: int
    log_lam: float
    param: object

    @property
    def projection_errors(self):
        return [p.projection_error for p in self.phases]


class _Batches:
    """Mini-batches drawn without replacement, reshuffled every epoch."""

    def __init__(self, dataset, size, rng):
        self.dataset = list(dataset)
        self.size = min(size, len(self.dataset)) if self.dataset else 0
        self.rng = rng
        self.order = []

    def next(self):
        if not self.dataset:
            return []
        if len(self.order) < self.size:
            self.order = list(self.rng.permutation(len(self.dataset)))
        idx, self.order = self.order[:self.size], self.order[self.size:]
        return [self.dataset[i] for i in idx]


def _clip(grad, factor):
    if factor is None:
        return grad
    med = np.median(np.abs(grad))
    if med == 0:
        return grad
    return np.clip(grad, -factor * med, factor * med)


def _run_level(state, cfg, objective, batches, level, n_steps, best, callback, loss_fn):
    train_theta = cfg.eta_theta > 0 and objective.weights.w_recon > 0
    for k in range(n_steps):
        batch = batches.next() if objective.weights.w_recon > 0 else []
        try:
            ev = loss_fn(state.param, batch, objective, state.log_lam, state.rng)
        except NumericalFailure as err:
            err.history = state.history
            raise
        if ev.total < best["loss"]:
            best.update(loss=ev.total, step=state.step, omega=state.param.expand(),
                        log_lam=state.log_lam, param=state.param)
        eta = cfg.step_size(k, n_steps)
        noisy = cfg.noisy(k, n_steps)
        grad = _clip(ev.grad_c, cfg.clip)
        new = sgld_step(state.param.coef, grad, eta, state.rng, noisy, cfg.noise_factor)
        if getattr(state.param, "pin_start", False):
            new = state.param.coef + state.param.project_step(new - state.param.coef)
        state.param = state.param.with_coef(new)
        if train_theta:
            eta_t = cfg.step_size(k, n_steps, cfg.eta_theta)
            state.log_lam = float(sgld_step(state.log_lam, ev.grad_theta, eta_t, state.rng,
                                            noisy, cfg.noise_factor))
        rec = StepRecord(state.step, level, ev.total, ev.terms, eta,
                         cfg.noise_factor * np.sqrt(2 * eta) if noisy else 0.0, state.log_lam)
        state.history.append(rec)
        log.debug("step %d level %d loss %.6g", state.step, level, ev.total)
        if callback is not None:
            callback(rec)
        state.step += 1
    # score the iterate left after the last update
    ev = loss_fn(state.param, batches.next() if objective.weights.w_recon > 0 else [],
                 objective, state.log_lam, state.rng, need_grad=False)
    if ev.total < best["loss"]:
        best.update(loss=ev.total, step=state.step, omega=state.param.expand(),
                    log_lam=state.log_lam, param=state.param)


def run_multilevel(init, levels, cfg, objective, pin_start=True, callback=None, loss_fn=None):
    """Optimize a trajectory over a coarse-to-fine sequence of B-spline widths.

    Parameters
    ----------
    init : Trajectory or RotationParam
        A trajectory is refit onto each B-spline level in turn.  A
        :class:`RotationParam` is optimized directly in one phase and
        ``levels`` is ignored.
    levels : sequence of int or None
        B-spline widths, coarse to fine.  None uses ``cfg.levels``.
    cfg : OptConfig
    objective : Objective
    pin_start : bool
        Keep the first sample of every shot fixed.
    callback : callable, optional
        Called with each :class:`StepRecord`.
    loss_fn : callable, optional
        Replacement for :func:`total_loss` with the same signature.

    Returns
    -------
    OptResult
        ``trajectory`` is the best-loss iterate seen (including the final
        one); ``phases`` records steps and projection error per level.  On a
        numerical failure the raised :class:`NumericalFailure` carries the
        history up to that point.
    """
    loss_fn = total_loss if loss_fn is None else loss_fn
    rng = np.random.default_rng(cfg.seed)
    log_lam = float(np.log(objective.recon.lam)) if objective.recon.lam > 0 else -np.inf
    batches = _Batches(objective.dataset, cfg.batch_size, rng)
    best = {"loss": np.inf, "step": -1, "omega": None, "log_lam": log_lam, "param": None}
    phases = []

    if isinstance(init, RotationParam):
        state = OptState(init, log_lam, rng)
        phases.append(Phase(0, None, cfg.steps, 0.0))
        _run_level(state, cfg, objective, batches, 0, cfg.steps, best, callback, loss_fn)
    else:
        levels = cfg.levels if levels is None else tuple(levels)
        if not levels:
            raise ValueError("at least one B-spline level is needed")
        if list(levels) != sorted(levels, reverse=True):
            raise ValueError("levels must be ordered coarse to fine")
        samples = init.samples
        state = None
        for i, width in enumerate(levels):
            if state is None:
                param = BsplineParam.fit(samples, width, pin_start)
                err = float(np.max(np.abs(param.expand() - samples))) if samples.size else 0.0
            else:
                param, err = refine(state.param, width)
            if state is None:
                state = OptState(param, log_lam, rng)
            else:
                state.param = param
            phases.append(Phase(i, width, cfg.steps, err))
            log.info("level %d width %d projection error %.3g", i, width, err)
            _run_level(state, cfg, objective, batches, i, cfg.steps, best, callback, loss_fn)

    like = objective.like
    final = Trajectory.from_iterate(state.param.expand(), like)
    best_traj = Trajectory.from_iterate(best["omega"], like)
    return OptResult(best_traj, final, state.history, phases, best["loss"], best["step"],
                     best["log_lam"], best["param"])


def with_weights(objective, **weights):
    """Copy of ``objective`` with some loss weights replaced."""
    return replace(objective, weights=replace(objective.weights, **weights))
