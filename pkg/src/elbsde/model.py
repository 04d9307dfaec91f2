"""Risk-factor dynamics: G2++ rates, Heston equity, Feller mortality.

The state vector ``z`` is ordered ``(x, y, F, v, lambda)``. Every vectorised
function here accepts ``z`` with shape ``(..., 5)`` and a time ``t`` that is
either a scalar or broadcastable against ``z[..., 0]``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateHedgeBasis, InvariantViolation

X, Y, F, V, LAM = range(5)
DEN_TOL = 1e-12

BASE_CORR = np.array(
    [
        [1.0, -0.4, 0.35, 0.0, 0.0],
        [-0.4, 1.0, 0.08, 0.0, 0.0],
        [0.35, 0.08, 1.0, -0.3, 0.0],
        [0.0, 0.0, -0.3, 1.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 1.0],
    ]
)


@dataclass(frozen=True)
class ModelParams:
    """Market, mortality and contract constants.

    ``T_star`` defaults to ``T`` (bond maturing with the contract).
    """

    a: float = 0.2770
    b: float = 0.0551
    sigma_x: float = 0.0118
    sigma_y: float = 0.0136
    delta_x: float = -0.1
    delta_y: float = -0.1
    psi_const: float = 0.02
    kappa: float = 0.0231
    eta: float = 0.9052
    sigma_v: float = 0.1434
    gamma: float = 0.0113
    q: float = 0.11
    sigma_lambda: float = 0.007
    u: float = 0.5
    c: float = 0.01
    d_star: float = 1.02
    s_star: float = 1.02
    alpha: float = 0.1
    T: float = 1.0
    T_star: float | None = None
    corr: np.ndarray = field(default_factory=lambda: BASE_CORR.copy())

    def __post_init__(self):
        if self.T_star is None:
            object.__setattr__(self, "T_star", float(self.T))
        corr = np.array(self.corr, dtype=float)
        corr.setflags(write=False)
        object.__setattr__(self, "corr", corr)
        self.validate()

    def validate(self):
        for name in ("a", "b", "sigma_x", "sigma_y", "q", "T"):
            if not getattr(self, name) > 0:
                raise InvariantViolation(name, "must be positive")
        for name in ("kappa", "eta", "sigma_v", "sigma_lambda", "c", "d_star", "s_star"):
            if getattr(self, name) < 0:
                raise InvariantViolation(name, "must be non-negative")
        if self.alpha < 0:
            raise InvariantViolation("alpha", "must be non-negative")
        if not 0.0 <= self.u <= 1.0:
            raise InvariantViolation("u", "must lie in [0, 1]")
        if self.T_star < self.T:
            raise InvariantViolation("T_star", "must be >= T")
        if 2.0 * self.kappa * self.eta < self.sigma_v**2:
            raise InvariantViolation("sigma_v", "Feller condition 2*kappa*eta >= sigma_v^2 violated")
        check_correlation(self.corr)

    def replace(self, **changes) -> "ModelParams":
        if "T" in changes and "T_star" not in changes and self.T_star == self.T:
            changes["T_star"] = None
        return dataclasses.replace(self, **changes)

    def with_corr(self, i: int, j: int, value: float) -> "ModelParams":
        """Copy with the symmetric entry ``(i, j)`` (0-based) set to ``value``."""
        corr = np.array(self.corr)
        corr[i, j] = corr[j, i] = value
        return self.replace(corr=corr)

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        for f in dataclasses.fields(self):
            mine, theirs = getattr(self, f.name), getattr(other, f.name)
            if f.name == "corr":
                if not np.array_equal(mine, theirs):
                    return False
            elif mine != theirs:
                return False
        return True

    def dynamics(self) -> "FactorModel":
        return FactorModel(self)


def check_correlation(corr, field_name="corr"):
    corr = np.asarray(corr, dtype=float)
    if corr.shape != (5, 5):
        raise InvariantViolation(field_name, "must be 5x5")
    if not np.allclose(corr, corr.T, atol=0, rtol=0):
        raise InvariantViolation(field_name, "must be symmetric")
    if not np.all(np.diag(corr) == 1.0):
        raise InvariantViolation(field_name, "must have unit diagonal")
    if np.any(corr[4, :4] != 0.0):
        raise InvariantViolation(field_name, "mortality must be uncorrelated with market factors")
    if np.linalg.eigvalsh(corr).min() < -1e-10:
        raise InvariantViolation(field_name, "must be positive semi-definite")


@dataclass
class State:
    x: float = 0.0
    y: float = 0.0
    f: float = 1.0
    v: float = 0.1
    lam: float = 0.015
    k: int = 100

    @property
    def z(self) -> np.ndarray:
        return np.array([self.x, self.y, self.f, self.v, self.lam], dtype=float)

    @classmethod
    def from_array(cls, z, k) -> "State":
        return cls(float(z[0]), float(z[1]), float(z[2]), float(z[3]), float(z[4]), int(k))


# --- closed forms -----------------------------------------------------------


def bond_coefficients(t, p: ModelParams):
    """Bond volatility loadings ``A``, ``B`` and the bond risk premium."""
    tau = p.T_star - np.asarray(t, dtype=float)
    A = -p.sigma_x * (-np.expm1(-p.a * tau)) / p.a
    B = -p.sigma_y * (-np.expm1(-p.b * tau)) / p.b
    zeta = A * p.delta_x + B * p.delta_y
    if np.ndim(A) == 0:
        return float(A), float(B), float(zeta)
    return A, B, zeta


def short_rate(t, x, y, p: ModelParams):
    return p.psi_const + x + y


def _feller_beta(t, q, sigma, m):
    """Exponent of ``E[exp(-m * int_0^t lambda)] = exp(beta * lambda0)``."""
    t = np.asarray(t, dtype=float)
    b = -np.sqrt(q * q + 2.0 * m * sigma * sigma)
    if b == 0.0:
        return -m * t
    e = np.expm1(b * t)
    return -m * e / (0.5 * b * (2.0 + e) - 0.5 * q * e)


def survival_prob(t, lam0, p: ModelParams):
    return np.exp(_feller_beta(t, p.q, p.sigma_lambda, 1.0) * lam0)


def joint_survival_prob(T, lam0, p: ModelParams):
    """Probability that two given lives both survive to ``T``."""
    return np.exp(_feller_beta(T, p.q, p.sigma_lambda, 2.0) * lam0)


def _corr_weights(A, B, Q):
    r12, r13, r14 = Q[0, 1], Q[0, 2], Q[0, 3]
    r23, r24, r34 = Q[1, 2], Q[1, 3], Q[2, 3]
    r31, r32 = Q[2, 0], Q[2, 1]
    rho_x = A + r12 * B - r31 * r13 * A - r31 * r23 * B
    rho_y = B + r12 * A - r32 * r13 * A - r32 * r23 * B
    rho_v = r14 * A + r24 * B - r34 * r13 * A - r34 * r23 * B
    return rho_x, rho_y, rho_v


# --- vectorised dynamics ----------------------------------------------------


class FactorModel:
    """Coefficients of the five-factor state under the real-world and
    risk-adjusted measures, plus the contract cash flows.

    This is the dynamics object consumed by the scenario generator, the
    rollout assembly and the Monte-Carlo oracles.
    """

    positive = (V, LAM)

    def __init__(self, params: ModelParams):
        self.p = params
        self.corr = np.asarray(params.corr)
        self.T = params.T
        self.c = params.c
        self.alpha = params.alpha

    def rate(self, t, z):
        return short_rate(t, z[..., X], z[..., Y], self.p)

    def drift(self, t, z):
        p = self.p
        _, _, zeta = bond_coefficients(t, p)
        sv = np.sqrt(np.maximum(z[..., V], 0.0))
        out = np.empty(np.shape(z))
        out[..., X] = p.delta_x * p.sigma_x - p.a * z[..., X]
        out[..., Y] = p.delta_y * p.sigma_y - p.b * z[..., Y]
        out[..., F] = (self.rate(t, z) - p.c + p.u * zeta + (1 - p.u) * p.gamma * sv) * z[..., F]
        out[..., V] = p.kappa * (p.eta - np.maximum(z[..., V], 0.0))
        out[..., LAM] = p.q * np.maximum(z[..., LAM], 0.0)
        return out

    def sigma(self, t, z):
        p = self.p
        A, B, _ = bond_coefficients(t, p)
        sv = np.sqrt(np.maximum(z[..., V], 0.0))
        f = z[..., F]
        out = np.zeros(np.shape(z) + (5,))
        out[..., X, X] = p.sigma_x
        out[..., Y, Y] = p.sigma_y
        out[..., F, X] = p.u * f * A
        out[..., F, Y] = p.u * f * B
        out[..., F, F] = (1 - p.u) * f * sv
        out[..., V, V] = p.sigma_v * sv
        out[..., LAM, LAM] = p.sigma_lambda * np.sqrt(np.maximum(z[..., LAM], 0.0))
        return out

    def hedge_loadings(self, t, z):
        """Linear maps from a price gradient to the optimal hedge.

        Returns ``(bond, equity_vol)`` with shape ``(..., 5)`` each such that
        ``theta1 = g . bond`` and ``theta2 * sqrt(v) = g . equity_vol``. The
        second form stays finite as ``v -> 0``.
        """
        p, Q = self.p, self.corr
        A, B, _ = bond_coefficients(t, p)
        rho_x, rho_y, rho_v = _corr_weights(A, B, Q)
        den = A * rho_x + B * rho_y
        if np.any(np.abs(den) < DEN_TOL):
            raise DegenerateHedgeBasis(f"A*rho_x + B*rho_y vanishes at t={t}")
        s = Q[2, 0] * A + Q[2, 1] * B
        sv = np.sqrt(np.maximum(z[..., V], 0.0))
        f = z[..., F]
        zero = np.zeros_like(f)
        ones = np.ones_like(f)
        bond = np.stack(
            [
                ones * (p.sigma_x * rho_x / den),
                ones * (p.sigma_y * rho_y / den),
                p.u * f,
                p.sigma_v * sv * rho_v / den,
                zero,
            ],
            axis=-1,
        )
        equity_vol = np.stack(
            [
                ones * (p.sigma_x * (Q[2, 0] - s * rho_x / den)),
                ones * (p.sigma_y * (Q[2, 1] - s * rho_y / den)),
                (1 - p.u) * f * sv,
                p.sigma_v * sv * (Q[2, 3] - s * rho_v / den),
                zero,
            ],
            axis=-1,
        )
        return bond, equity_vol

    def sigma_tilde(self, t, z):
        A, B, _ = bond_coefficients(t, self.p)
        bond, equity_vol = self.hedge_loadings(t, z)
        out = np.zeros(np.shape(z) + (5,))
        out[..., :, X] = bond * np.expand_dims(A, -1)
        out[..., :, Y] = bond * np.expand_dims(B, -1)
        out[..., :, F] = equity_vol
        return out

    def sigma_star(self, t, z):
        return self.sigma(t, z) - self.sigma_tilde(t, z)

    def drift_star(self, t, z):
        _, _, zeta = bond_coefficients(t, self.p)
        bond, equity_vol = self.hedge_loadings(t, z)
        return (
            self.drift(t, z)
            - bond * np.expand_dims(zeta, -1)
            - equity_vol * self.p.gamma
        )

    def residual_cov(self, t, z):
        """``sigma* Q sigma*^T`` so that the unhedgeable variance is ``g M g^T``."""
        ss = self.sigma_star(t, z)
        return ss @ self.corr @ np.swapaxes(ss, -1, -2)

    def death_benefit(self, t, f):
        return np.maximum(self.p.d_star - f, 0.0)

    def survival_benefit(self, f):
        return np.maximum(self.p.s_star - f, 0.0)


# --- scalar operations on a single State -----------------------------------


def drift_mu(t, s: State, p: ModelParams) -> np.ndarray:
    return FactorModel(p).drift(t, s.z)


def diffusion_sigma(t, s: State, p: ModelParams) -> np.ndarray:
    return FactorModel(p).sigma(t, s.z)


def risk_adjusted_drift(t, s: State, p: ModelParams) -> np.ndarray:
    return FactorModel(p).drift_star(t, s.z)


def residual_sigma(t, s: State, p: ModelParams) -> np.ndarray:
    return FactorModel(p).sigma_star(t, s.z)
