"""Command-line interface: ``trajopt {optimize,validate,psf,simulate,generate-phantoms}``.

Exit codes: 0 success, 2 input error, 3 infeasible geometry, 4 numerical
failure.
"""
from __future__ import annotations

import argparse
import glob
import hashlib
import json
import logging
import os
import platform
import sys
from typing import List, Literal, Optional, Tuple

import numpy as np
import scipy
import scipy.fft
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import __version__
from .core import LossWeights, ScannerLimits, Trajectory, traj_to_gradient, traj_to_slew
from .io import (FormatError, read_trajectory, read_volume, write_table, write_trajectory,
                 write_volume, write_waveforms)
from .nufft import _backend
from .nufft.system import SystemModel
from .optimize import NumericalFailure, Objective, OptConfig, run_multilevel
from .param import (Geometry, InfeasibleGeometry, RotationParam, epi_readout, generate_initial,
                    spoke_angles, spoke_readout, stack_of_stars_param)
from .penalties import ContrastSpec, pns_response
from .phantoms import birdcage_maps, ellipse_phantom
from .recon import ReconConfig, nrmse, psf_and_density, psnr, recon_unrolled

log = logging.getLogger("trajopt")

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_NUMERICAL = 0, 2, 3, 4


# --------------------------------------------------------------------------
# configuration schema

class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GeometryConfig(_Strict):
    kind: Literal["radial2d", "stack_of_stars", "kooshball3d", "epi"] = "radial2d"
    fov_mm: List[float]
    matrix_size: List[int]
    raster_s: float = Field(4e-6, gt=0)
    n_readout: int = Field(0, ge=0)
    n_shots: int = Field(1, ge=1)
    n_planes: int = Field(1, ge=1)
    scheme: Literal["uniform", "golden"] = "uniform"

    def geometry(self):
        return Geometry(tuple(self.fov_mm), tuple(self.matrix_size), self.n_readout, self.n_shots,
                        self.raster_s, self.n_planes, self.scheme)


class LimitsConfig(_Strict):
    gmax: float = Field(50.0, gt=0)
    smax: float = Field(150.0, gt=0)
    gamma: float = Field(42.5774e6, gt=0)
    chronaxie_s: float = Field(334e-6, gt=0)
    smin: float = Field(70.0, gt=0)
    pmax: float = Field(0.8, gt=0, le=1)
    headroom: float = Field(0.9, gt=0, le=1)

    def physical(self):
        return ScannerLimits(self.gmax, self.smax, self.gamma, self.chronaxie_s, self.smin,
                             self.pmax)

    def design(self):
        """Limits used as optimization targets: gmax/smax times ``headroom``."""
        return self.physical().scaled(self.headroom)


class ContrastConfig(_Strict):
    te_ms: Optional[float] = Field(None, gt=0)
    at_echo: bool = False
    shots: Optional[List[int]] = None
    points: List[Tuple[int, int, int]] = []


class ParamConfig(_Strict):
    kind: Literal["bspline", "rotation"] = "bspline"
    levels: List[int] = [32, 16, 8]
    pin_start: bool = True


class ReconSection(_Strict):
    method: Literal["cg_sense", "pls"] = "pls"
    lam: float = Field(1e-3, ge=0)
    n_iter: int = Field(6, ge=1)
    eval_n_iter: int = Field(30, ge=1)
    fd_operator: Literal["finite_difference", "identity"] = "finite_difference"
    train_lambda: bool = False
    tier: Literal["train", "eval"] = "train"
    use_toeplitz: bool = True
    noise_rel: float = Field(0.01, ge=0)
    noise_sigma: Optional[float] = Field(None, ge=0)

    def config(self, evaluation=False):
        return ReconConfig(self.method, self.lam, self.eval_n_iter if evaluation else self.n_iter,
                           self.fd_operator, self.train_lambda)


class WeightsConfig(_Strict):
    w_recon: float = 1.0
    w_grad: float = 0.1
    w_slew: float = 0.1
    w_pns: float = 1.0
    w_contrast: float = 0.0
    recon_l1_frac: float = 0.5

    def weights(self):
        return LossWeights(**self.model_dump())


class OptimizerConfig(_Strict):
    eta: float = Field(1e-4, gt=0)
    eta_theta: float = Field(0.0, ge=0)
    decay: Literal["linear", "constant"] = "linear"
    steps: int = Field(100, ge=0)
    noise: bool = True
    noise_factor: float = Field(1.0, ge=0)
    quiet_frac: float = Field(0.1, ge=0, le=1)
    batch_size: int = Field(1, ge=1)
    clip: Optional[float] = Field(None, gt=0)


class DatasetConfig(_Strict):
    path: Optional[str] = None
    n_phantoms: int = Field(20, ge=1)
    n_coils: int = Field(1, ge=1)
    seed: int = 0


class RunConfig(_Strict):
    seed: int = 0
    output_dir: str = "out"
    geometry: GeometryConfig
    initial_trajectory: Optional[str] = None
    limits: LimitsConfig = LimitsConfig()
    contrast: ContrastConfig = ContrastConfig()
    parameterization: ParamConfig = ParamConfig()
    recon: ReconSection = ReconSection()
    weights: WeightsConfig = WeightsConfig()
    optimizer: OptimizerConfig = OptimizerConfig()
    dataset: DatasetConfig = DatasetConfig()


def load_config(path):
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as err:
        raise FormatError(f"cannot read config {path}: {err}") from err
    if not isinstance(raw, dict):
        raise FormatError(f"{path}: config must be a mapping")
    return RunConfig.model_validate(raw)


def config_hash(cfg):
    text = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


# --------------------------------------------------------------------------
# building blocks

def _rotation_param(geo_cfg):
    geo = geo_cfg.geometry()
    if geo_cfg.kind == "stack_of_stars":
        return stack_of_stars_param(geo)
    if geo_cfg.kind == "radial2d":
        base = np.zeros((geo.n_readout, 1, 2))
        base[:, 0, 0] = spoke_readout(geo.n_readout)
        return RotationParam(base, spoke_angles(geo.n_shots, geo.scheme), None, "z")
    raise FormatError(f"rotation parameterization is not available for {geo_cfg.kind!r}")


def build_initial(cfg):
    """``(trajectory, echo_index or None, RotationParam or None)``."""
    limits = cfg.limits.physical()
    if cfg.initial_trajectory:
        if cfg.parameterization.kind == "rotation":
            raise FormatError("rotation parameterization needs a generated initial trajectory")
        return read_trajectory(cfg.initial_trajectory), None, None
    g = cfg.geometry
    if g.kind == "epi":
        traj, echo = epi_readout(g.geometry(), limits)
        return traj, echo, None
    if cfg.parameterization.kind == "rotation":
        p = _rotation_param(g)
        traj = Trajectory(p.expand(), g.fov_mm, g.matrix_size, g.raster_s)
        generate_initial(g.kind, g.geometry(), limits)  # feasibility check
        return traj, None, p
    return generate_initial(g.kind, g.geometry(), limits), None, None


def build_contrast(cfg, traj, echo):
    c = cfg.contrast
    points = [tuple(p) for p in c.points]
    if c.te_ms is not None:
        points += ContrastSpec.echo_time(c.te_ms * 1e-3, traj.raster_s, traj.n_shots,
                                         traj.ndim, c.shots).points
    if c.at_echo:
        if echo is None:
            raise FormatError("contrast.at_echo needs an EPI geometry")
        shots = range(traj.n_shots) if c.shots is None else c.shots
        points += [(i, echo, d) for i in shots for d in range(traj.ndim)]
    if not points:
        return None
    spec = ContrastSpec(tuple(points))
    spec.index(traj.samples.shape)
    return spec


def load_dataset(path, matrix_size=None):
    """Phantom volumes ``phantom_*.hdr`` and optional ``maps.hdr`` from a directory."""
    files = sorted(glob.glob(os.path.join(path, "phantom_*.hdr")))
    if not files:
        raise FormatError(f"no phantom_*.hdr volumes in {path}")
    images = [read_volume(f)[0] for f in files]
    maps = None
    if os.path.exists(os.path.join(path, "maps.hdr")):
        maps = read_volume(os.path.join(path, "maps"))[0]
    if matrix_size is not None:
        matrix_size = tuple(matrix_size)
        for f, x in zip(files, images):
            if x.shape != matrix_size:
                raise FormatError(f"{f}: volume {x.shape} does not match matrix {matrix_size}")
        if maps is not None and maps.shape[1:] != matrix_size:
            raise FormatError(f"maps {maps.shape[1:]} do not match matrix {matrix_size}")
    return images, maps


def synthetic_dataset(matrix_size, n, n_coils=1, seed=0):
    rng = np.random.default_rng(seed)
    images = [ellipse_phantom(matrix_size, rng) for _ in range(n)]
    maps = birdcage_maps(matrix_size, n_coils) if n_coils > 1 else None
    return images, maps


def validate_report(traj, limits, contrast=None, tolerance=0.0, contrast_tol=1e-3):
    """Constraint metrics of ``traj`` against ``limits`` as an ordered dict.

    Violations are relative overshoots in percent; a check passes when the
    overshoot is at most ``tolerance`` (a fraction).
    """
    g = np.linalg.norm(traj_to_gradient(traj, limits), axis=-1)
    s = np.linalg.norm(traj_to_slew(traj, limits), axis=-1)
    peak = pns_response(traj, limits).peak
    gmax, smax, pns = float(g.max()), float(s.max()), float(peak)
    rep = {
        "n_readout": traj.n_readout, "n_shots": traj.n_shots, "ndim": traj.ndim,
        "max_grad_mT_m": gmax, "max_slew_T_m_s": smax, "peak_pns": pns,
        "gmax_mT_m": limits.gmax, "smax_T_m_s": limits.smax, "pmax": limits.pmax,
        "grad_violation_pct": max(0.0, gmax / limits.gmax - 1) * 100,
        "slew_violation_pct": max(0.0, smax / limits.smax - 1) * 100,
        "pns_violation_pct": max(0.0, pns / limits.pmax - 1) * 100,
        "grad_samples_over_frac": float(np.mean(g > limits.gmax * (1 + tolerance))),
        "slew_samples_over_frac": float(np.mean(s > limits.smax * (1 + tolerance))),
    }
    ok = {
        "grad": rep["grad_violation_pct"] <= tolerance * 100,
        "slew": rep["slew_violation_pct"] <= tolerance * 100,
        "pns": rep["pns_violation_pct"] <= tolerance * 100,
    }
    if contrast is not None and contrast.points:
        t, shot, d = contrast.index(traj.samples.shape)
        off = float(np.abs(traj.samples[t, shot, d]).max())
        rep["contrast_points"] = len(contrast.points)
        rep["contrast_max_offset_rad"] = off
        ok["contrast"] = off <= contrast_tol
    for k, v in ok.items():
        rep[f"{k}_check"] = "PASS" if v else "FAIL"
    rep["result"] = "PASS" if all(ok.values()) else "FAIL"
    return rep


def format_report(rep, human=False):
    def val(v):
        return v if isinstance(v, str) else (f"{v:.6g}" if isinstance(v, float) else str(v))
    if human:
        width = max(len(k) for k in rep)
        return "\n".join(f"{k:<{width}}  {val(v)}" for k, v in rep.items()) + "\n"
    return "".join(f"{k}={val(v)}\n" for k, v in rep.items())


# --------------------------------------------------------------------------
# commands

def _out_dir(args, default):
    out = args.out or default
    os.makedirs(out, exist_ok=True)
    return out


def cmd_optimize(args):
    if not args.config:
        raise FormatError("optimize needs --config")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.model_copy(update={"seed": args.seed})
    out = _out_dir(args, cfg.output_dir)
    init, echo, rot = build_initial(cfg)
    contrast = build_contrast(cfg, init, echo)
    weights = cfg.weights.weights()

    images, maps = [], None
    if weights.w_recon > 0:
        if cfg.dataset.path:
            images, maps = load_dataset(cfg.dataset.path, init.matrix_size)
        else:
            images, maps = synthetic_dataset(init.matrix_size, cfg.dataset.n_phantoms,
                                             cfg.dataset.n_coils, cfg.dataset.seed)
    rc = cfg.recon
    objective = Objective(init, weights, cfg.limits.design(), contrast, rc.config(), images, maps,
                          rc.noise_sigma, rc.noise_rel, rc.tier, rc.use_toeplitz)
    oc = cfg.optimizer
    levels = tuple(cfg.parameterization.levels) if rot is None else None
    opt = OptConfig(weights, oc.eta, oc.eta_theta if rc.train_lambda else 0.0, oc.decay, oc.steps,
                    levels, oc.noise, oc.noise_factor, oc.quiet_frac, cfg.seed, oc.batch_size,
                    oc.clip)

    def progress(rec):
        log.debug("step %d level %d total %.6g", rec.step, rec.level, rec.total)

    result = run_multilevel(rot if rot is not None else init, levels, opt, objective,
                            cfg.parameterization.pin_start, progress)
    traj = result.trajectory
    limits = cfg.limits.physical()

    write_trajectory(os.path.join(out, "initial_trajectory.traj"), init)
    write_trajectory(os.path.join(out, "trajectory.traj"), traj)
    write_trajectory(os.path.join(out, "trajectory_physical.traj"), traj, units="cycles_per_m")
    write_waveforms(os.path.join(out, "waveforms"), traj, limits)
    rows = [rec.as_row() for rec in result.history]
    header = ["step", "level", "total"] + [f"L_{k}" for k in
                                            ("recon", "grad", "slew", "pns", "contrast")] + \
        ["eta", "noise_scale", "log_lam"]
    write_table(os.path.join(out, "loss_curve.csv"), header, [[r[h] for h in header] for r in rows])
    report = validate_report(traj, limits, contrast)
    with open(os.path.join(out, "validation.txt"), "w") as fh:
        fh.write(format_report(report))
    manifest = {
        "config_sha256": config_hash(cfg),
        "seed": cfg.seed,
        "versions": {"trajopt": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "kernel_backend": _backend.BACKEND,
        "best_step": result.best_step,
        "best_loss": result.best_loss,
        "lam": float(np.exp(result.log_lam)),
        "phases": [{"level": p.level, "width": p.width, "steps": p.steps,
                    "projection_error": p.projection_error} for p in result.phases],
        "validation": report["result"],
        "outputs": ["initial_trajectory.traj", "trajectory.traj", "trajectory_physical.traj",
                    "waveforms/", "loss_curve.csv", "validation.txt"],
    }
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"best loss {result.best_loss:.6g} at step {result.best_step}; "
          f"validation {report['result']}; outputs in {out}")
    return EXIT_OK


def _limits_from(args):
    if args.config:
        limits = load_config(args.config).limits.physical()
    else:
        limits = ScannerLimits()
    kw = {k: getattr(args, k) for k in ("gmax", "smax", "pmax") if getattr(args, k) is not None}
    if kw:
        limits = ScannerLimits(kw.get("gmax", limits.gmax), kw.get("smax", limits.smax),
                               limits.gamma, limits.chronaxie_s, limits.smin,
                               kw.get("pmax", limits.pmax))
    return limits


def cmd_validate(args):
    traj = read_trajectory(args.trajectory)
    if traj.n_readout < 3:
        raise FormatError("trajectory too short: validation needs at least 3 samples per shot")
    limits = _limits_from(args)
    contrast = None
    if args.te_ms is not None:
        contrast = ContrastSpec.echo_time(args.te_ms * 1e-3, traj.raster_s, traj.n_shots,
                                          traj.ndim)
    rep = validate_report(traj, limits, contrast, args.tolerance)
    text = format_report(rep)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "validation.txt"), "w") as fh:
            fh.write(text)
    sys.stdout.write(format_report(rep, human=True) if args.format == "human" else text)
    return EXIT_OK


def _parse_ints(text):
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError as err:
        raise FormatError(f"expected comma-separated integers, got {text!r}") from err


def cmd_psf(args):
    traj = read_trajectory(args.trajectory)
    matrix = _parse_ints(args.matrix) if args.matrix else traj.matrix_size
    if len(matrix) != traj.ndim:
        raise FormatError(f"grid {matrix} does not match a {traj.ndim}-D trajectory")
    if not args.sigma > 0:
        raise FormatError("--sigma must be positive")
    out = _out_dir(args, "psf")
    psf, density = psf_and_density(traj, matrix, args.sigma)
    mag = np.abs(psf)
    peak = mag.max() if mag.max() > 0 else 1.0
    rel = mag / peak
    db = 20 * np.log10(np.maximum(rel, 1e-12))
    write_volume(os.path.join(out, "psf_log"), db)
    write_volume(os.path.join(out, "density"), density)
    centre = tuple(n // 2 for n in matrix)
    for ax, n in enumerate(matrix):
        sl = list(centre)
        sl[ax] = slice(None)
        sl = tuple(sl)
        rows = [[i - n // 2, rel[sl][i], db[sl][i], density[sl][i]] for i in range(n)]
        write_table(os.path.join(out, f"profile_axis{ax}.csv"),
                    ["offset", "psf_mag", "psf_db", "density"], rows)
    print(f"PSF and density written to {out}")
    return EXIT_OK


def cmd_simulate(args):
    traj = read_trajectory(args.trajectory)
    rs = load_config(args.config).recon if args.config else ReconSection()
    upd = {k: v for k, v in (("method", args.method), ("lam", args.lam),
                              ("eval_n_iter", args.n_iter), ("noise_rel", args.noise_rel),
                              ("noise_sigma", args.noise_sigma)) if v is not None}
    rs = ReconSection.model_validate({**rs.model_dump(), **upd})
    if args.dataset:
        images, maps = load_dataset(args.dataset, traj.matrix_size)
    else:
        images, maps = synthetic_dataset(traj.matrix_size, args.n_phantoms, 1,
                                         1000 + (args.seed or 0))
    model = SystemModel.for_trajectory(traj, maps, tier=args.tier, noise_sigma=rs.noise_sigma,
                                       noise_rel=rs.noise_rel, use_toeplitz=rs.use_toeplitz)
    cfg = rs.config(evaluation=True)
    rng = np.random.default_rng(args.seed or 0)
    rows = []
    for i, x in enumerate(images):
        res = recon_unrolled(model, model.simulate(x, rng), cfg, record=False)
        if not np.all(np.isfinite(res.image)):
            raise NumericalFailure("reconstruction")
        rows.append([i, psnr(x, res.image), nrmse(x, res.image), int(res.breakdown)])
    out = _out_dir(args, "simulate")
    mean_p = float(np.mean([r[1] for r in rows]))
    mean_e = float(np.mean([r[2] for r in rows]))
    write_table(os.path.join(out, "metrics.csv"), ["volume", "psnr_db", "nrmse", "cg_breakdown"],
                rows + [["mean", mean_p, mean_e, sum(r[3] for r in rows)]])
    print(f"mean PSNR {mean_p:.3f} dB, mean NRMSE {mean_e:.4g} over {len(rows)} volumes")
    return EXIT_OK


def cmd_generate_phantoms(args):
    matrix = _parse_ints(args.matrix)
    if len(matrix) not in (2, 3):
        raise FormatError("phantoms are 2-D or 3-D")
    out = _out_dir(args, "phantoms")
    seed = 0 if args.seed is None else args.seed
    images, maps = synthetic_dataset(matrix, args.n, args.coils, seed)
    spacing = None
    if args.fov_mm:
        fov = [float(v) for v in args.fov_mm.split(",")]
        fov = fov * len(matrix) if len(fov) == 1 else fov
        spacing = tuple(f / n for f, n in zip(fov, matrix))
    for i, x in enumerate(images):
        write_volume(os.path.join(out, f"phantom_{i:04d}"), x, spacing)
    if maps is not None:
        write_volume(os.path.join(out, "maps"), maps, (1.0,) * maps.ndim)
    print(f"{len(images)} phantoms written to {out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration (YAML)")
    common.add_argument("--seed", type=int, help="override the random seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, default=1, help="FFT worker threads")
    common.add_argument("--verbose", "-v", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="trajopt", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"trajopt {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("optimize", parents=[common], help="optimize a trajectory")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("validate", parents=[common], help="check hardware and PNS limits")
    p.add_argument("trajectory")
    p.add_argument("--gmax", type=float)
    p.add_argument("--smax", type=float)
    p.add_argument("--pmax", type=float)
    p.add_argument("--te-ms", type=float, help="check that every shot crosses k = 0 at TE")
    p.add_argument("--tolerance", type=float, default=0.0,
                   help="allowed relative overshoot before a check fails")
    p.add_argument("--format", choices=("kv", "human"), default="kv")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("psf", parents=[common], help="PSF and sampling density")
    p.add_argument("trajectory")
    p.add_argument("--matrix", help="grid size, e.g. 64,64")
    p.add_argument("--sigma", type=float, default=1.0, help="Gaussian std in grid cells")
    p.set_defaults(func=cmd_psf)

    p = sub.add_parser("simulate", parents=[common], help="simulate, reconstruct, score")
    p.add_argument("trajectory")
    p.add_argument("--dataset", help="directory written by generate-phantoms")
    p.add_argument("--n-phantoms", type=int, default=10)
    p.add_argument("--method", choices=("cg_sense", "pls"))
    p.add_argument("--lam", type=float)
    p.add_argument("--n-iter", type=int)
    p.add_argument("--noise-rel", type=float)
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--tier", choices=("eval", "fine"), default="eval",
                   help="transform accuracy: eval ~1e-5, fine ~1e-9")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("generate-phantoms", parents=[common], help="write a synthetic dataset")
    p.add_argument("--matrix", required=True)
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--coils", type=int, default=1)
    p.add_argument("--fov-mm", help="field of view, sets the voxel spacing")
    p.set_defaults(func=cmd_generate_phantoms)
    return parser


def _validation_message(err):
    lines = ["invalid configuration:"]
    for e in err.errors():
        loc = ".".join(str(v) for v in e["loc"]) or "<root>"
        lines.append(f"  {loc}: {e['msg']}")
    return "\n".join(lines)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with scipy.fft.set_workers(max(1, args.threads)):
            return args.func(args)
    except ValidationError as err:
        print(_validation_message(err), file=sys.stderr)
        return EXIT_INPUT
    except InfeasibleGeometry as err:
        print(f"infeasible geometry: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (NumericalFailure, FloatingPointError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (FormatError, ValueError, IndexError, OSError, yaml.YAMLError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
