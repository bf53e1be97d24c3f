import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from oracles import fd_gradient, pns_bruteforce
from trajopt.core import ScannerLimits, Trajectory, traj_to_slew
from trajopt.penalties import (ContrastSpec, loss_contrast, loss_hardware, loss_pns,
                               pns_from_slew, pns_kernel, pns_response, soft_threshold,
                               soft_threshold_grad)

LIM = ScannerLimits()
FOV, MATRIX = 200.0, 64


def traj_from(samples):
    return Trajectory(samples, FOV, MATRIX, wrap=False)


def smooth_traj(seed, nfe=40, ns=2, nd=3, amp=0.6):
    """Sums of random sinusoids: smooth, with gradient/slew above the limits."""
    rng = np.random.default_rng(seed)
    t = np.arange(nfe)[:, None, None]
    out = np.zeros((nfe, ns, nd))
    for _ in range(3):
        f = rng.uniform(0.02, 0.2, (1, ns, nd))
        ph = rng.uniform(0, 2 * np.pi, (1, ns, nd))
        out += amp * np.sin(2 * np.pi * f * t + ph)
    return out


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


@pytest.mark.parametrize("x,lam,expected", [(0.3, 0.5, 0.0), (0.8, 0.5, 0.3), (-0.1, 0.0, 0.1),
                                            (-2.0, 0.5, 1.5)])
def test_soft_threshold_values(x, lam, expected):
    assert soft_threshold(x, lam) == pytest.approx(expected)


def test_soft_threshold_subgradient_and_errors():
    np.testing.assert_array_equal(soft_threshold_grad(np.array([-2.0, 0.2, 0.5, 3.0]), 0.5),
                                  [-1, 0, 0, 1])
    with pytest.raises(ValueError):
        soft_threshold(1.0, -0.1)


def test_feasible_trajectory_has_zero_hardware_loss():
    samples = np.linspace(-1, 1, 50)[:, None, None] * np.array([1.0, 0.5])
    lg, ls, gg, gs = loss_hardware(traj_from(samples), LIM)
    assert lg == 0 and ls == 0 and not gg.any() and not gs.any()


def test_single_gradient_violation_is_counted_exactly():
    # constant gradient 20 mT/m with one step at gmax + 3
    g = np.full(20, 20.0)
    g[7] = LIM.gmax + 3
    dk = g * 1e-3 * LIM.gamma * 4e-6                  # cycles/m per sample
    k = np.concatenate([[0.0], np.cumsum(dk)])
    k_phys = np.stack([k, np.zeros_like(k)], axis=-1)[:, None, :]
    traj = Trajectory.from_physical(k_phys, FOV, MATRIX, wrap=False)
    lg, _, _, _ = loss_hardware(traj, LIM)
    assert lg == pytest.approx(3.0, rel=1e-9)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_hardware_gradients_match_finite_differences(seed):
    traj = traj_from(smooth_traj(seed))
    lg, ls, gg, gs = loss_hardware(traj, LIM)
    assert lg > 0 and ls > 0
    fg = fd_gradient(lambda s: loss_hardware(traj_from(s), LIM)[0], traj.samples, h=1e-7)
    fs = fd_gradient(lambda s: loss_hardware(traj_from(s), LIM)[1], traj.samples, h=1e-7)
    assert rel(gg, fg) <= 1e-4
    assert rel(gs, fs) <= 1e-4


def test_pns_of_zero_slew_is_zero():
    p = pns_from_slew(np.zeros((30, 2, 3)), LIM, 4e-6)
    assert not p.p.any() and p.peak == 0


def test_pns_single_impulse_closed_form():
    n, k0, s0, dt = 64, 10, 120.0, 4e-6
    s = np.zeros((n, 1, 3))
    s[k0, 0, 1] = s0
    p = pns_from_slew(s, LIM, dt).p[:, 0, 1]
    j = np.arange(n)
    c = LIM.chronaxie_s
    expected = np.where(j >= k0, s0 * c * dt / (LIM.smin * (c + (j - k0) * dt) ** 2), 0.0)
    np.testing.assert_allclose(p, expected, rtol=1e-12, atol=1e-15)


def test_pns_matches_bruteforce():
    rng = np.random.default_rng(3)
    for _ in range(5):
        s = rng.uniform(-150, 150, (64, 2, 3))
        p = pns_from_slew(s, LIM, 4e-6)
        np.testing.assert_allclose(p.p, pns_bruteforce(s, LIM.chronaxie_s, 4e-6, LIM.smin),
                                   rtol=0, atol=1e-10)
        np.testing.assert_allclose(p.combined, np.sqrt(np.sum(p.p ** 2, axis=-1)), rtol=1e-12)


def test_pns_kernel_values():
    h = pns_kernel(3, LIM, 4e-6)
    c = LIM.chronaxie_s
    np.testing.assert_allclose(h, c * 4e-6 / (LIM.smin * (c + np.arange(3) * 4e-6) ** 2))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_pns_is_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    s1, s2 = rng.standard_normal((2, 50, 1, 3)) * 100
    lhs = pns_from_slew(a * s1 + b * s2, LIM, 4e-6).p
    rhs = a * pns_from_slew(s1, LIM, 4e-6).p + b * pns_from_slew(s2, LIM, 4e-6).p
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-10)


def test_pns_response_has_slew_length():
    traj = traj_from(smooth_traj(4))
    r = pns_response(traj, LIM)
    assert r.p.shape == traj_to_slew(traj, LIM).shape
    assert r.combined.shape == r.p.shape[:2]


def _scaled_below(traj, level):
    """Same shape, scaled so the peak response equals ``level``."""
    peak = pns_response(traj, LIM).peak
    return traj_from(traj.samples * level / peak)


def test_feasible_pns_loss_is_zero():
    traj = _scaled_below(traj_from(smooth_traj(5, amp=0.01)), 0.6)
    assert pns_response(traj, LIM).peak == pytest.approx(0.6)
    loss, grad = loss_pns(traj, LIM)
    assert loss == 0 and not grad.any()


def test_pns_loss_is_monotone_in_threshold():
    traj = _scaled_below(traj_from(smooth_traj(6, amp=0.01)), 1.1)
    l8 = loss_pns(traj, ScannerLimits(pmax=0.8))[0]
    l7 = loss_pns(traj, ScannerLimits(pmax=0.7))[0]
    assert l7 >= l8 > 0


@pytest.mark.parametrize("seed", [7, 8])
def test_pns_gradient_matches_finite_differences(seed):
    traj = _scaled_below(traj_from(smooth_traj(seed, nfe=48, amp=0.01)), 1.3)
    loss, grad = loss_pns(traj, LIM)
    assert loss > 0
    fd = fd_gradient(lambda s: loss_pns(traj_from(s), LIM)[0], traj.samples, h=1e-7)
    assert rel(grad, fd) <= 1e-3


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_penalties_are_rotation_invariant(seed):
    samples = smooth_traj(seed % 1000, amp=0.3)
    rot = Rotation.random(random_state=seed).as_matrix()
    a, b = traj_from(samples), traj_from(samples @ rot.T)
    la, lb = loss_hardware(a, LIM)[:2], loss_hardware(b, LIM)[:2]
    np.testing.assert_allclose(lb, la, rtol=1e-9)
    np.testing.assert_allclose(pns_response(b, LIM).combined, pns_response(a, LIM).combined,
                               rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(loss_pns(b, LIM)[0], loss_pns(a, LIM)[0], rtol=1e-9, atol=1e-12)


def test_losses_are_nonnegative_and_zero_when_feasible():
    for seed in range(5):
        traj = traj_from(smooth_traj(seed))
        lg, ls, _, _ = loss_hardware(traj, LIM)
        assert lg >= 0 and ls >= 0 and loss_pns(traj, LIM)[0] >= 0
    zero = traj_from(np.zeros((10, 2, 3)))
    assert loss_hardware(zero, LIM)[:2] == (0.0, 0.0) and loss_pns(zero, LIM)[0] == 0.0


def test_contrast_loss():
    samples = np.zeros((10, 2, 2))
    samples[4, 1, 0] = 0.1
    traj = traj_from(samples)
    spec = ContrastSpec(((1, 4, 0), (0, 4, 1)))
    loss, grad = loss_contrast(traj, spec)
    assert loss == pytest.approx(0.1)
    expected = np.zeros_like(samples)
    expected[4, 1, 0] = 1.0
    np.testing.assert_array_equal(grad, expected)
    assert loss_contrast(traj_from(np.zeros((10, 2, 2))), spec)[0] == 0


def test_contrast_index_errors():
    traj = traj_from(np.zeros((10, 2, 2)))
    with pytest.raises(IndexError):
        loss_contrast(traj, ContrastSpec(((2, 0, 0),)))
    with pytest.raises(IndexError):
        loss_contrast(traj, ContrastSpec(((0, 10, 0),)))
    with pytest.raises(ValueError):
        ContrastSpec(((0, 1),))


def test_echo_time_lock_index():
    # TE = 7.4 ms at 4 us raster is sample 1850 in every shot
    spec = ContrastSpec.echo_time(7.4e-3, 4e-6, n_shots=3, ndim=3)
    assert len(spec.points) == 9
    assert {p[1] for p in spec.points} == {1850}
