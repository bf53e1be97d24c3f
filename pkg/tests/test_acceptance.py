"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run directly with ``python tests/test_acceptance.py`` or as part of pytest;
the summary lines are collected at the end of the pytest report.
"""
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np
import pytest
import yaml

from oracles import dft_forward_loop, fd_gradient, pns_bruteforce, spiral
from trajopt.cli import main
from trajopt.core import LossWeights, ScannerLimits, Trajectory, traj_to_gradient, traj_to_slew
from trajopt.io import read_trajectory
from trajopt.nufft import _backend
from trajopt.nufft.plan import NufftPlan, forward_omega_vjp
from trajopt.nufft.system import SystemModel
from trajopt.optimize import TERMS, LossEval, Objective, OptConfig, run_multilevel, total_loss
from trajopt.param import BsplineParam, bspline_ncoef, refine
from trajopt.penalties import pns_from_slew, pns_response
from trajopt.phantoms import ellipse_phantom
from trajopt.recon import ReconConfig, loss_recon

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
BACKENDS = ["python"] + (["cython"] if _backend.BACKEND == "cython" else [])
LIM = ScannerLimits()


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def rel(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def cli(*argv):
    code = main([str(a) for a in argv])
    assert code == 0, f"trajopt {' '.join(map(str, argv))} exited with {code}"


def config_copy(tmp, name, **updates):
    """Write a copy of a shipped config with nested ``updates`` applied."""
    cfg = yaml.safe_load((CONFIGS / name).read_text())
    for key, val in updates.items():
        if isinstance(val, dict):
            cfg[key] = {**cfg.get(key, {}), **val}
        else:
            cfg[key] = val
    path = Path(tmp) / f"{Path(name).stem}_{len(list(Path(tmp).glob('*.yaml')))}.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


def kv_file(path):
    return dict(line.split("=", 1) for line in Path(path).read_text().splitlines())


def mean_psnr(metrics_csv):
    with open(metrics_csv) as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    return float(next(r for r in rows if r[0] == "mean")[1])


# -- 1 ---------------------------------------------------------------------

def test_nufft_matches_exact_dft(criterion):
    with criterion(1, "NUFFT correctness") as c:
        t0 = time.perf_counter()
        rng = np.random.default_rng(2024)
        worst_fwd, worst_dot = 0.0, 0.0
        for case in range(100):
            nd = 2 if case % 2 == 0 else 3
            shape = tuple(int(n) for n in rng.integers(4, 33, nd))
            m = int(rng.integers(16, 257))
            omega = rng.uniform(-np.pi, np.pi, (m, nd))
            x, y = crandn(rng, *shape), crandn(rng, m)
            exact = dft_forward_loop(omega, x)
            for backend in BACKENDS:
                plan = NufftPlan(omega, shape, tier="eval", backend=backend)
                worst_fwd = max(worst_fwd, rel(plan.forward(x), exact))
                lhs = np.vdot(y, plan.forward(x))
                rhs = np.vdot(plan.adjoint(y), x)
                worst_dot = max(worst_dot, abs(lhs - rhs) / abs(lhs))
        elapsed = time.perf_counter() - t0
        c.check(worst_fwd <= 1e-4, f"max forward error {worst_fwd:.2e} (<= 1e-4)")
        c.check(worst_dot <= 1e-4, f"max adjoint mismatch {worst_dot:.2e} (<= 1e-4)")
        c.check(elapsed < 60, f"{elapsed:.1f} s for {len(BACKENDS)} backend(s)")


# -- 2 ---------------------------------------------------------------------

def test_data_fit_jacobian_matches_finite_differences(criterion):
    with criterion(2, "sample-location Jacobian") as c:
        t0 = time.perf_counter()
        rng = np.random.default_rng(7)
        worst = 0.0
        for case in range(20):
            shape = (16, 16) if case < 10 else (12, 12, 12)
            m = 48 if len(shape) == 2 else 32
            x = crandn(rng, *shape)
            omega = rng.uniform(-np.pi, np.pi, (m, len(shape))) * 0.9
            y0 = crandn(rng, m) * np.abs(x).sum() * 0.1

            def fit(om):
                return float(np.sum(np.abs(NufftPlan(om, shape).forward(x) - y0) ** 2))
            plan = NufftPlan(omega, shape)
            g = forward_omega_vjp(plan, x, 2 * (plan.forward(x) - y0))
            worst = max(worst, rel(g, fd_gradient(fit, omega, h=1e-5)))
        elapsed = time.perf_counter() - t0
        c.check(worst <= 1e-3, f"max relative error {worst:.2e} over 20 cases (<= 1e-3)")
        c.check(elapsed < 120, f"{elapsed:.1f} s")


# -- 3 ---------------------------------------------------------------------

def test_unrolled_recon_gradient(criterion):
    with criterion(3, "gradient through unrolled recon") as c:
        t0 = time.perf_counter()
        shape = (16, 16)
        like = Trajectory(spiral(40, 2), 100.0, shape)
        rng = np.random.default_rng(8)
        x = [ellipse_phantom(shape, rng)]
        worst = 0.0
        for method in ("cg_sense", "pls"):
            for n_iter in (3, 4, 5):
                cfg = ReconConfig(method, 0.05, n_iter)

                def loss(samples, grad=False):
                    model = SystemModel.for_trajectory(Trajectory.from_iterate(samples, like),
                                                       tier="eval", noise_sigma=0.05)
                    return loss_recon(model, x, cfg, rng=0, need_grad=grad)
                g = loss(like.samples, True).grad_omega.reshape(like.samples.shape)
                fd = fd_gradient(lambda s: loss(s).value, like.samples)
                worst = max(worst, rel(g, fd))
        elapsed = time.perf_counter() - t0
        c.check(worst <= 2e-3, f"max relative error {worst:.2e}, 3-5 CG iterations (<= 2e-3)")
        c.check(elapsed < 300, f"{elapsed:.1f} s")


# -- 4 ---------------------------------------------------------------------

def test_pns_convolution(criterion):
    with criterion(4, "PNS model") as c:
        rng = np.random.default_rng(4)
        dt = 4e-6
        worst = 0.0
        for _ in range(50):
            s = rng.uniform(-180, 180, (64, 1, 3))
            fast = pns_from_slew(s, LIM, dt).p
            slow = pns_bruteforce(s, LIM.chronaxie_s, dt, LIM.smin)
            worst = max(worst, float(np.max(np.abs(fast - slow))))
        c.check(worst <= 1e-10, f"max deviation from double sum {worst:.1e} (<= 1e-10)")
        n, k0, s0 = 64, 17, 120.0
        s = np.zeros((n, 1, 3))
        s[k0, 0, 2] = s0
        p = pns_from_slew(s, LIM, dt).p[:, 0, 2]
        j = np.arange(n)
        cx = LIM.chronaxie_s
        closed = np.where(j >= k0, s0 * cx * dt / (LIM.smin * (cx + (j - k0) * dt) ** 2), 0.0)
        err = float(np.max(np.abs(p[k0:] / closed[k0:] - 1)))
        before = float(np.max(np.abs(p[:k0])))
        c.check(err <= 1e-12 and before <= 1e-15,
                f"impulse closed form relative error {err:.1e}, before impulse {before:.0e}")


# -- 5 ---------------------------------------------------------------------

def test_pns_suppression_of_epi_readout(criterion, tmp_path):
    with criterion(5, "PNS penalty efficacy") as c:
        t0 = time.perf_counter()
        for pmax in (0.8, 0.7):
            out = tmp_path / f"epi_{pmax}"
            cli("optimize", "--config",
                config_copy(tmp_path, "epi_pns.yaml", limits={"pmax": pmax}), "--out", out)
            init = read_trajectory(out / "initial_trajectory.traj")
            final = read_trajectory(out / "trajectory.traj")
            p0 = pns_response(init, LIM).peak
            p1 = pns_response(final, LIM).peak
            rep = kv_file(out / "validation.txt")
            off = float(rep["contrast_max_offset_rad"])
            c.check(p0 >= pmax, f"pmax {pmax}: initial peak {p0:.3f}")
            c.check(p1 <= pmax * 1.02, f"final peak {p1:.4f} (<= {pmax * 1.02:.3f})")
            c.check(off <= 1e-3, f"echo offset {off:.1e} rad")
        c.check(time.perf_counter() - t0 < 900, f"{time.perf_counter() - t0:.0f} s")


# -- 6 ---------------------------------------------------------------------

def test_optimized_angles_beat_golden_angle(criterion, tmp_path):
    with criterion(6, "image-quality improvement") as c:
        t0 = time.perf_counter()
        cfg = CONFIGS / "sos_angles.yaml"
        out = tmp_path / "sos"
        cli("optimize", "--config", cfg, "--out", out)
        cli("generate-phantoms", "--matrix", "64,64,4", "--n", 10, "--seed", 2,
            "--out", tmp_path / "heldout")
        scores = {}
        for name in ("initial_trajectory", "trajectory"):
            cli("simulate", out / f"{name}.traj", "--config", cfg, "--dataset",
                tmp_path / "heldout", "--seed", 123, "--out", tmp_path / name)
            scores[name] = mean_psnr(tmp_path / name / "metrics.csv")
        gain = scores["trajectory"] - scores["initial_trajectory"]
        c.check(gain >= 0.3, f"golden {scores['initial_trajectory']:.2f} dB, optimized "
                f"{scores['trajectory']:.2f} dB, gain {gain:.2f} dB (>= 0.3)")
        c.check(time.perf_counter() - t0 < 7200, f"{time.perf_counter() - t0:.0f} s")


# -- 7 and 10 share one three-level freeform run ---------------------------

@pytest.fixture(scope="module")
def kooshball_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("kooshball")
    t0 = time.perf_counter()
    cli("optimize", "--config", CONFIGS / "kooshball_freeform.yaml", "--out", out)
    return out, time.perf_counter() - t0


def test_freeform_run_respects_hardware_limits(criterion, kooshball_run):
    with criterion(7, "hardware-constraint satisfaction") as c:
        out, elapsed = kooshball_run
        traj = read_trajectory(out / "trajectory.traj")
        g = np.linalg.norm(traj_to_gradient(traj, LIM), axis=-1)
        s = np.linalg.norm(traj_to_slew(traj, LIM), axis=-1)
        fg = float(np.mean(g > 1.02 * LIM.gmax))
        fs = float(np.mean(s > 1.02 * LIM.smax))
        c.check(fg + fs <= 1e-3, f"samples over 1.02 gmax {fg:.2%}, over 1.02 smax {fs:.2%} "
                f"(peaks {g.max():.1f} mT/m, {s.max():.1f} T/m/s)")
        c.check(True, f"{elapsed:.0f} s")


# -- 8 ---------------------------------------------------------------------

def test_sgld_contract(criterion):
    with criterion(8, "SGLD contract") as c:
        like = Trajectory(spiral(40, 2), 100.0, (16, 16))
        obj = Objective(like, LossWeights(0, 0.1, 1, 1, 0), LIM)
        cfg = OptConfig(obj.weights, eta=1e-7, steps=20, levels=(8,), noise=False, seed=5)
        res = run_multilevel(like, None, cfg, obj, pin_start=False)
        p = BsplineParam.fit(like.samples, 8)
        same = True
        for k in range(cfg.steps):
            ev = total_loss(p, [], obj)
            same &= ev.total == res.history[k].total
            p = p.with_coef(p.coef - cfg.step_size(k, cfg.steps) * ev.grad_c)
        same &= np.array_equal(res.final_trajectory.samples, p.expand())
        c.check(same, "noise-off run equals plain gradient descent bit for bit")

        # zero gradient: every increment is pure Langevin noise
        eta, n = 0.01, 100_000
        seen = []

        def zero_loss(param, batch, objective, log_lam=None, rng=None, need_grad=True):
            seen.append(param.coef.ravel().copy())
            return LossEval(0.0, dict.fromkeys(TERMS, 0.0), np.zeros_like(param.coef), 0.0, None)
        small = Trajectory(np.zeros((4, 1, 2)), 100.0, (8, 8), wrap=False)
        cfg = OptConfig(LossWeights(0, 1, 0, 0, 0), eta=eta, decay="constant", steps=n,
                        levels=(8,), quiet_frac=0.0)
        run_multilevel(small, None, cfg, Objective(small, cfg.weights), pin_start=False,
                       loss_fn=zero_loss)
        var = np.diff(np.array(seen), axis=0).var(axis=0)
        worst = float(np.max(np.abs(var / (2 * eta) - 1)))
        c.check(worst <= 0.03, f"increment variance / 2 eta deviates by {worst:.2%} over "
                f"{n} steps (<= 3%)")


# -- 9 ---------------------------------------------------------------------

def test_optimize_is_deterministic(criterion, tmp_path):
    with criterion(9, "determinism") as c:
        configs = {
            "epi": config_copy(tmp_path, "epi_pns.yaml", optimizer={"steps": 60}),
            "sos": config_copy(tmp_path, "sos_angles.yaml", optimizer={"steps": 4},
                               dataset={"n_phantoms": 3}),
        }
        files = ("trajectory.traj", "trajectory_physical.traj", "loss_curve.csv",
                 "manifest.json")
        for name, cfg in configs.items():
            runs = []
            for i in range(2):
                out = tmp_path / f"{name}_{i}"
                cli("optimize", "--config", cfg, "--out", out)
                runs.append([(out / f).read_bytes() for f in files])
            c.check(runs[0] == runs[1], f"{name}: outputs byte-identical")


# -- 10 --------------------------------------------------------------------

def test_multilevel_refinement(criterion, kooshball_run):
    with criterion(10, "multi-level refinement") as c:
        rng = np.random.default_rng(10)
        n = 256
        coarse = BsplineParam(rng.standard_normal((bspline_ncoef(n, 32), 4, 3)), 32, n)
        for width in (16, 8):
            p, err = refine(coarse, width)
            dev = float(np.max(np.abs(p.expand() - coarse.expand())))
            c.check(max(err, dev) <= 1e-10, f"width 32 -> {width}: error {max(err, dev):.1e}")
        out, _ = kooshball_run
        cfg = yaml.safe_load((CONFIGS / "kooshball_freeform.yaml").read_text())
        phases = json.loads((out / "manifest.json").read_text())["phases"]
        widths = [ph["width"] for ph in phases]
        steps = [ph["steps"] for ph in phases]
        with open(out / "loss_curve.csv") as fh:
            rows = [r for r in csv.DictReader(line for line in fh if not line.startswith("#"))]
        levels = [int(float(r["level"])) for r in rows]
        per_level = [levels.count(i) for i in range(len(phases))]
        expected = [cfg["optimizer"]["steps"]] * 3
        c.check(widths == cfg["parameterization"]["levels"] and steps == expected and
                per_level == expected, f"phases {widths}, steps per level {per_level}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
