import math
import os
import subprocess
import sys
import warnings

import numpy as np
import pytest

from elbsde.bsde import _kernel_py, kernels
from elbsde.bsde.inputs import assemble_inputs
from elbsde.bsde.networks import NetworkSet, default_normalizer, price_at_zero
from elbsde.bsde.rollout import euler_price_update, rollout_step, rollout_terminal, tape_loss, tape_loss_and_grad
from elbsde.bsde.train import TrainConfig, TrainReport, train
from elbsde.deepnet import MLP, autodiff as ad
from elbsde.errors import MissingCheckpoint, NonFiniteGradient
from elbsde.model import ModelParams, State
from elbsde.oracle import GmmbParams
from elbsde.scenario import GridSpec, InitRegion, sample_initial_array, simulate_paths

P = ModelParams()
BASE = State(0.0, 0.0, 1.0, 0.1, 0.015, 100)
REGION = InitRegion.around(BASE)


def constant_nets(phi0, grad, phi_lower, region=REGION):
    """Networks with zero weights, so each outputs its bias."""
    n1 = MLP((6, 20, 20, 1))
    n2 = MLP((7, 20, 20, 5))
    n3 = MLP((7, 20, 20, 1))
    n1.biases[-1][...] = phi0
    n2.biases[-1][...] = grad
    n3.biases[-1][...] = phi_lower
    return NetworkSet(n1, n2, n3, default_normalizer(region, 1.0), region)


def random_nets(rng, scale=0.2, region=REGION):
    nets = NetworkSet.initialized(default_normalizer(region, 1.0), rng, 6.0, region)
    for p in nets.params():
        p += scale * rng.normal(size=p.shape)
    return nets


# --- one Euler step -------------------------------------------------------------


def test_euler_update_hand_example():
    phi = euler_price_update(6.0, 0.0, 0.0, 100, 0.015, 0.0, 1.0, 0.0, 0.01, 5.95, 0, 0.01)
    assert phi == pytest.approx(6.01075, abs=1e-12)


def test_rollout_step_hand_example():
    p = P.replace(alpha=0.0, c=0.0, psi_const=0.0, d_star=0.0)
    nets = constant_nets(6.0, [0.0, 0.0, 1.0, 0.0, 0.0], 5.95)
    sig_ff = (1 - p.u) * 1.0 * math.sqrt(0.1)
    dW = np.array([0.0, 0.0, 0.01 / sig_ff, 0.0, 0.0])
    phi, s_next = rollout_step(nets, 0.0, BASE, 6.0, dW, 0, p, 0.01)
    assert phi == pytest.approx(6.01075, abs=1e-12)
    assert s_next.k == 100
    _, s_dead = rollout_step(nets, 0.0, BASE, 6.0, dW, 3, p, 0.01)
    assert s_dead.k == 97


def test_rollout_step_empty_portfolio():
    s = State(0.004, 0.001, 0.9, 0.1, 0.015, 0)
    nets = constant_nets(0.0, [0.1, -0.2, 0.5, 0.3, 0.0], 2.0)
    dW = np.array([0.01, -0.02, 0.03, 0.0, 0.05])
    phi, _ = rollout_step(nets, 0.2, s, 0.4, dW, 0, P, 0.01)
    m = P.dynamics()
    r = float(m.rate(0.2, s.z))
    g = np.array([0.1, -0.2, 0.5, 0.3, 0.0])
    resid = g @ m.residual_cov(0.2, s.z) @ g
    expected = 0.4 - P.alpha * math.sqrt(resid) * 0.01 + 0.4 * r * 0.01 + g @ m.sigma(0.2, s.z) @ dW
    assert phi == pytest.approx(expected, abs=1e-14)


def test_rollout_step_only_compensator():
    p = P.replace(alpha=0.0, c=0.0, psi_const=0.0, d_star=0.0)
    nets = constant_nets(0.0, np.zeros(5), 5.5)
    phi, _ = rollout_step(nets, 0.0, BASE, 6.0, np.zeros(5), 0, p, 0.01)
    assert phi == pytest.approx(6.0 + (5.5 - 6.0) * (-100 * 0.015 * 0.01), abs=1e-14)


# --- whole rollout ----------------------------------------------------------------


def test_noiseless_rollout_compounds_discretely():
    g = GmmbParams(r=0.03, sigma_f=0.0, lam_const=0.0, alpha=0.0)
    s0 = State(0.0, 0.0, 1.0, 0.0, 0.0, 10)
    region = InitRegion.point(s0)
    nets = constant_nets(2.0, [0.3, 0.1, 0.7, 0.0, 0.0], 1.0, region)
    grid = GridSpec(20, 0.05)
    bundle = simulate_paths(g.dynamics(), grid, [s0] * 3, seed=0)
    phi_T, target = rollout_terminal(nets, bundle, g.dynamics())
    np.testing.assert_allclose(phi_T, 2.0 * (1 + 0.03 * 0.05) ** 20, rtol=1e-14)
    np.testing.assert_allclose(target, 10 * max(1.02 - math.exp(0) * (1 + 0.03 * 0.05) ** 20, 0.0), rtol=1e-12)


def test_single_step_rollout_matches_rollout_step(rng):
    nets = random_nets(rng)
    bundle = simulate_paths(P, GridSpec(1, 1.0), [BASE], seed=2)
    phi_T, target = rollout_terminal(nets, bundle, P)
    phi0 = float(nets.price(BASE.z, BASE.k))
    phi1, s1 = rollout_step(nets, 0.0, BASE, phi0, bundle.dW[0, 0], int(bundle.dN[0, 0]), P, 1.0)
    assert phi_T[0] == pytest.approx(phi1, abs=1e-10)
    assert target[0] == pytest.approx(s1.k * max(P.s_star - s1.f, 0.0), abs=1e-14)


def test_multi_step_rollout_matches_scalar_recursion(rng):
    nets = random_nets(rng)
    grid = GridSpec(8, 0.125)
    z0, k0 = sample_initial_array(REGION, 4, rng)
    bundle = simulate_paths(P, grid, (z0, k0), seed=7)
    phi_T, _ = rollout_terminal(nets, bundle, P)
    for i in range(4):
        s = State.from_array(z0[i], k0[i])
        phi = float(nets.price(s.z, s.k))
        for n in range(grid.n_steps):
            s_path = State.from_array(bundle.z[i, n], bundle.k[i, n])
            phi, _ = rollout_step(nets, n * grid.dt, s_path, phi, bundle.dW[i, n], int(bundle.dN[i, n]), P, grid.dt)
        assert phi_T[i] == pytest.approx(phi, abs=1e-10)


# --- gradients: three independent routes -------------------------------------------


def small_inputs(rng, n_paths=6, n_steps=5):
    nets = random_nets(rng)
    grid = GridSpec(n_steps, 1.0 / n_steps)
    bundle = simulate_paths(P, grid, sample_initial_array(REGION, n_paths, rng), seed=11)
    return nets, assemble_inputs(bundle, P.dynamics(), nets)


@pytest.mark.parametrize("backend", ["python", "cython"])
def test_fused_kernels_match_tape(rng, backend):
    if backend == "cython" and kernels.BACKEND != "cython":
        pytest.skip("compiled kernel not built")
    nets, inp = small_inputs(rng)
    loss, grads, _ = kernels.loss_and_grad(nets.params(), inp, backend=backend)
    loss_t, grads_t = tape_loss_and_grad(nets, inp)
    assert loss == pytest.approx(loss_t, rel=1e-12)
    for a, b in zip(grads, grads_t):
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12 * max(1.0, np.abs(b).max()))


def test_full_rollout_gradient_matches_finite_differences(rng):
    # 2 steps, 2 paths; every parameter of the three networks
    nets, inp = small_inputs(rng, n_paths=2, n_steps=2)
    params = nets.params()
    _, grads, _ = kernels.loss_and_grad(params, inp)
    h = 1e-5
    worst = 0.0
    for p, g in zip(params, grads):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = _kernel_py.loss_and_grad(params, inp, need_grad=False)[0]
            flat[i] = old - h
            dn = _kernel_py.loss_and_grad(params, inp, need_grad=False)[0]
            flat[i] = old
            fd = (up - dn) / (2 * h)
            worst = max(worst, abs(fd - gflat[i]) / max(1.0, abs(fd)))
    assert worst < 1e-4


def test_tape_loss_value(rng):
    nets, inp = small_inputs(rng, n_paths=3, n_steps=3)
    leaves = [ad.param(p.copy()) for p in nets.params()]
    phi_T = kernels.loss_and_grad(nets.params(), inp, need_grad=False)[2]
    assert float(tape_loss(leaves, inp).value) == pytest.approx(np.mean((inp.target - phi_T) ** 2), rel=1e-13)


def test_backend_override_selects_python():
    env = dict(os.environ, ELBSDE_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", "from elbsde.bsde import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


# --- networks ---------------------------------------------------------------------


def test_network_set_save_load(tmp_path, rng):
    nets = random_nets(rng)
    path = tmp_path / "n.ckpt"
    nets.save(path, {"seed": 3})
    back = NetworkSet.load(path)
    assert back.n1 == nets.n1 and back.n2 == nets.n2 and back.n3 == nets.n3
    assert back.normalizer == nets.normalizer and back.region == nets.region
    with pytest.raises(MissingCheckpoint):
        NetworkSet.load(tmp_path / "absent.ckpt")


def test_price_at_zero_is_pure_and_warns_outside(rng):
    nets = random_nets(rng)
    assert price_at_zero(nets, BASE) == price_at_zero(nets, BASE)
    with pytest.warns(RuntimeWarning):
        price_at_zero(nets, State(0, 0, 3.0, 0.1, 0.015, 100))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        price_at_zero(nets, BASE)


def test_lower_price_is_zero_without_policies(rng):
    nets = random_nets(rng)
    assert nets.lower_price(0.3, BASE.z, 0) == 0.0
    assert nets.lower_price(0.3, BASE.z, 1) != 0.0


def test_degenerate_normalizer_widening():
    nz = default_normalizer(InitRegion.point(BASE), 1.0)
    np.testing.assert_allclose(nz.lo, [0, -0.005, -0.005, 0.75, 0.075, 0.01125, 0])
    np.testing.assert_allclose(nz.hi, [1, 0.005, 0.005, 1.25, 0.125, 0.01875, 100])


# --- training ---------------------------------------------------------------------


def tiny_config(**kw):
    base = dict(epochs=3, batch_size=20, pool_size=60, grid=GridSpec(10, 0.1), region=REGION, seed=5)
    base.update(kw)
    return TrainConfig(**base)


def test_zero_epochs_returns_initial_networks():
    nets, report = train(tiny_config(epochs=0), P)
    assert report == TrainReport() and report.epochs == 0
    again, _ = train(tiny_config(epochs=0), P)
    assert nets.n2 == again.n2


def test_training_is_deterministic():
    a, ra = train(tiny_config(), P)
    b, rb = train(tiny_config(), P)
    assert ra == rb and ra.epochs == 3
    assert a.n1 == b.n1 and a.n2 == b.n2 and a.n3 == b.n3
    c, rc = train(tiny_config(seed=6), P)
    assert rc != ra


def test_fresh_paths_changes_the_pool():
    _, ra = train(tiny_config(), P)
    _, rb = train(tiny_config(fresh_paths=True), P)
    assert ra.mse[0] == rb.mse[0] and ra.mse[1:] != rb.mse[1:]


def test_loss_decreases_on_small_problem():
    _, rep = train(tiny_config(epochs=60, pool_size=200, batch_size=50), P)
    assert rep.mse[-1] < rep.mse[0]
    assert np.mean(rep.mse[-20:]) <= np.mean(rep.mse[:20])


def test_non_finite_gradient_reports_epoch(monkeypatch):
    calls = {"n": 0}
    real = kernels.loss_and_grad

    def flaky(params, batch, need_grad=True, backend=None):
        calls["n"] += 1
        loss, grads, phi = real(params, batch, need_grad)
        if calls["n"] > 4:
            grads[0] = grads[0] * np.nan
        return loss, grads, phi

    monkeypatch.setattr(kernels, "loss_and_grad", flaky)
    with pytest.raises(NonFiniteGradient) as exc:
        train(tiny_config(), P)
    assert exc.value.epoch == 1


def test_report_csv(tmp_path):
    rep = TrainReport([1.5, 0.25], [6.0, 6.1])
    path = tmp_path / "r.csv"
    rep.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines == ["epoch,mse,base_price", "1,1.5,6", "2,0.25,6.0999999999999996"]


def test_config_validation():
    from elbsde.errors import InvariantViolation

    with pytest.raises(InvariantViolation):
        TrainConfig(batch_size=500, pool_size=100)
    with pytest.raises(InvariantViolation):
        TrainConfig(epochs=-1)
