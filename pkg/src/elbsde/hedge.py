"""Optimal bond/equity hedge, local variance and the BSDE driver."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateHedgeBasis, VanishingVariance
from .model import DEN_TOL, FactorModel, ModelParams, State, _corr_weights, bond_coefficients

V_TOL = 1e-10


@dataclass
class HedgePosition:
    theta1: float  # amount held in the bond
    theta2: float  # amount held in the equity


@dataclass
class Gradient5:
    dphi_x: float = 0.0
    dphi_y: float = 0.0
    dphi_f: float = 0.0
    dphi_v: float = 0.0
    dphi_lam: float = 0.0

    @property
    def vec(self) -> np.ndarray:
        return np.array([self.dphi_x, self.dphi_y, self.dphi_f, self.dphi_v, self.dphi_lam])


def _as_vec(g):
    return g.vec if isinstance(g, Gradient5) else np.asarray(g, dtype=float)


def benefits(t, f, p: ModelParams):
    """Death and survival benefit amounts ``(D, S)`` for fund value ``f``."""
    return np.maximum(p.d_star - f, 0.0), np.maximum(p.s_star - f, 0.0)


def corr_weights(t, p: ModelParams):
    A, B, _ = bond_coefficients(t, p)
    return _corr_weights(A, B, p.corr)


def hedge_vector(t, s: State, h: HedgePosition, p: ModelParams) -> np.ndarray:
    A, B, _ = bond_coefficients(t, p)
    return np.array([h.theta1 * A, h.theta1 * B, h.theta2 * np.sqrt(max(s.v, 0.0)), 0.0, 0.0])


def optimal_hedge(t, s: State, g, p: ModelParams, allow_vanishing: bool = False) -> HedgePosition:
    """Bond and equity amounts minimising the local variance of the NAV.

    With ``allow_vanishing`` the equity amount keeps only its fund term when
    ``v`` is below ``V_TOL`` instead of raising.
    """
    g = _as_vec(g)
    A, B, _ = bond_coefficients(t, p)
    Q = p.corr
    rho_x, rho_y, rho_v = _corr_weights(A, B, Q)
    den = A * rho_x + B * rho_y
    if abs(den) < DEN_TOL:
        raise DegenerateHedgeBasis(f"A*rho_x + B*rho_y = {den:g} at t={t}")
    gx, gy, gf, gv, _ = g
    sv = np.sqrt(max(s.v, 0.0))
    theta1 = p.u * gf * s.f + (gx * p.sigma_x * rho_x + gy * p.sigma_y * rho_y + gv * p.sigma_v * sv * rho_v) / den
    theta2 = (1 - p.u) * gf * s.f
    if s.v < V_TOL:
        if not allow_vanishing:
            raise VanishingVariance(f"v = {s.v:g} below {V_TOL:g}")
        return HedgePosition(float(theta1), float(theta2))
    s_ = Q[2, 0] * A + Q[2, 1] * B
    theta2 += gx * p.sigma_x / sv * (Q[2, 0] - s_ * rho_x / den)
    theta2 += gy * p.sigma_y / sv * (Q[2, 1] - s_ * rho_y / den)
    theta2 += gv * p.sigma_v * (Q[2, 3] - s_ * rho_v / den)
    return HedgePosition(float(theta1), float(theta2))


def local_variance(t, s: State, g, h: HedgePosition, p: ModelParams) -> float:
    """Instantaneous variance of the NAV diffusion part under hedge ``h``."""
    g = _as_vec(g)
    w = g @ FactorModel(p).sigma(t, s.z) - hedge_vector(t, s, h, p)
    return float(w @ p.corr @ w)


def driver_upsilon(t, s: State, phi_k, phi_km1, g, p: ModelParams) -> float:
    """Risk-margin driver: ``alpha`` times the unhedgeable standard deviation."""
    if p.alpha == 0.0:
        return 0.0
    g = _as_vec(g)
    m = FactorModel(p).residual_cov(t, s.z)
    var = float(g @ m @ g)
    if s.k >= 1:
        d, _ = benefits(t, s.f, p)
        var += (phi_km1 + d - phi_k) ** 2 * s.k * s.lam
    return p.alpha * np.sqrt(max(var, 0.0))
