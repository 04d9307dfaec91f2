"""Euler rollout of the liability price along simulated paths.

Three routes compute the same recursion:

* :func:`rollout_step` advances a single state with scalar arithmetic;
* :func:`tape_loss` builds the batch loss on the autodiff graph;
* :mod:`.kernels` evaluates loss and gradient in one fused pass (training).

The first two serve as independent checks of the third.
"""

from __future__ import annotations

import numpy as np

from .. import deepnet
from ..deepnet import autodiff as ad
from ..model import LAM, ModelParams, State
from ..scenario import PathBundle
from . import kernels
from .inputs import SQRT_EPS, RolloutInputs, assemble_inputs
from .networks import NetworkSet


def _dynamics(model):
    return model.dynamics() if isinstance(model, ModelParams) else model


def euler_price_update(phi_n, upsilon, death_benefit, k, lam, fee_rate, f, r, g_sigma_dw, phi_km1, dn, dt):
    """One Euler step of the price recursion from precomputed pieces."""
    klam = k * lam
    return (
        phi_n
        - upsilon * dt
        - death_benefit * klam * dt
        + (fee_rate * k * f + phi_n * r) * dt
        + g_sigma_dw
        + (phi_km1 - phi_n) * (dn - klam * dt)
    )


def rollout_step(nets: NetworkSet, t_n: float, s: State, phi_n: float, dW, dN_count: int, model, dt: float):
    """Advance ``(phi, state)`` by one step; returns ``(phi_next, s_next)``."""
    dyn = _dynamics(model)
    if not 0 <= dN_count <= s.k:
        raise ValueError("dN_count must lie in [0, k]")
    z = s.z
    g = nets.gradient(t_n, z, s.k)
    phi_km1 = float(nets.lower_price(t_n, z, s.k))
    ben = float(dyn.death_benefit(t_n, z[2]))
    M = dyn.residual_cov(t_n, z)
    lam = z[LAM]
    var = float(g @ M @ g)
    if s.k >= 1:
        var += (phi_km1 + ben - phi_n) ** 2 * s.k * lam
    upsilon = dyn.alpha * np.sqrt(max(var, 0.0))
    sdw = float(g @ (dyn.sigma(t_n, z) @ np.asarray(dW, dtype=float)))
    phi_next = euler_price_update(
        phi_n, upsilon, ben, s.k, lam, dyn.c, z[2], float(dyn.rate(t_n, z)), sdw, phi_km1, dN_count, dt
    )
    raw = z + dyn.drift_star(t_n, z) * dt + dyn.sigma(t_n, z) @ np.asarray(dW, dtype=float)
    raw[list(dyn.positive)] = np.maximum(raw[list(dyn.positive)], 0.0)
    return float(phi_next), State.from_array(raw, s.k - dN_count)


def rollout_terminal(nets: NetworkSet, bundle: PathBundle, model, alpha: float | None = None):
    """Per-path ``(phi_hat_T, target)`` from ``N1`` at time 0 through every step."""
    dyn = _dynamics(model)
    inputs = assemble_inputs(bundle, dyn, nets, alpha)
    _, _, phi_T = kernels.loss_and_grad(nets.params(), inputs, need_grad=False)
    return phi_T, inputs.target


def tape_loss(params: list[ad.Tensor], b: RolloutInputs) -> ad.Tensor:
    """Mean squared terminal mismatch built on the autodiff graph.

    ``params`` holds 18 leaves ordered ``N1 + N2 + N3``. Slow, but it shares
    no code with the fused kernels.
    """
    P1, P2, P3 = params[0:6], params[6:12], params[12:18]
    phi = ad.getitem(deepnet.forward_tensor(P1, b.x1), (slice(None), 0))
    for n in range(b.n_steps):
        g = deepnet.forward_tensor(P2, b.x2[n])
        psi = ad.getitem(deepnet.forward_tensor(P3, b.x3[n]), (slice(None), 0)) * b.has_k[n]
        jd = psi + b.ben[n] - phi
        var = ad.quadform(g, b.M[n]) + ad.square(jd) * b.klam[n]
        upsilon = ad.sqrt(var, SQRT_EPS) * b.alpha
        g_sdw = ad.sum(g * b.sdw[n], axis=1)
        comp = b.dn[n] - b.klam[n] * b.dt
        phi = (
            phi
            - upsilon * b.dt
            - b.ben[n] * b.klam[n] * b.dt
            + (b.fee[n] + phi * b.r[n]) * b.dt
            + g_sdw
            + (psi - phi) * comp
        )
    resid = phi - b.target
    return ad.mean(ad.square(resid))


def tape_loss_and_grad(nets: NetworkSet, b: RolloutInputs):
    leaves = [ad.param(p.copy()) for p in nets.params()]
    loss = tape_loss(leaves, b)
    return float(loss.value), deepnet.gradient(loss, leaves)
