"""Reference valuations used to check the trained networks.

* Best-estimate liability by plain Monte Carlo of the discounted cash flows.
* Black-Scholes put.
* The maturity-guarantee (GMMB) example: a Black-Scholes fund with a pure-death
  portfolio whose intensity is tilted by the risk margin. The expected number
  of survivors comes from the forward master equation of the death chain.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import InvariantViolation, NegativeRate
from .model import F, LAM, ModelParams, State
from .scenario import GridSpec, Measure, stream_paths

RK4_MAX_DT = 1e-3


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float
    n_sims: int

    @classmethod
    def from_samples(cls, x) -> "McEstimate":
        x = np.asarray(x, dtype=float)
        if x.size < 2:
            raise InvariantViolation("n_sims", "need at least two samples")
        return cls(float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size)), int(x.size))

    def within(self, value: float, n_se: float = 3.0) -> bool:
        return abs(self.mean - value) <= n_se * self.std_error


# --- best-estimate liability -------------------------------------------------


def _dynamics(model):
    return model.dynamics() if isinstance(model, ModelParams) else model


def discounted_cashflows(bundle, dyn) -> np.ndarray:
    """Per-path present value of benefits net of fees (left-endpoint sums)."""
    z, k, dt = bundle.z, bundle.k.astype(float), bundle.grid.dt
    N = bundle.grid.n_steps
    times = bundle.grid.times
    r = np.stack([dyn.rate(times[n], z[:, n]) for n in range(N)], axis=1)
    # discount factor at the left end of each step
    disc = np.exp(-np.concatenate([np.zeros((len(z), 1)), np.cumsum(r, axis=1)], axis=1) * dt)
    total = np.zeros(len(z))
    for n in range(N):
        ben = dyn.death_benefit(times[n], z[:, n, F])
        flow = ben * k[:, n] * z[:, n, LAM] - dyn.c * k[:, n] * z[:, n, F]
        total += disc[:, n] * flow * dt
    return total + disc[:, N] * k[:, N] * dyn.survival_benefit(z[:, N, F])


def bel_monte_carlo(model, s0: State, n_sims: int, grid: GridSpec, seed: int = 0,
                    block: int = 20_000) -> McEstimate:
    """Best-estimate liability: expected discounted cash flows under the risk-adjusted drift."""
    dyn = _dynamics(model)
    samples = [discounted_cashflows(b, dyn)
               for b in stream_paths(dyn, grid, s0, n_sims, Measure.RISK_ADJUSTED, seed, block)]
    return McEstimate.from_samples(np.concatenate(samples))


# --- closed forms -------------------------------------------------------------


def bs_put(F0, K, r, div, sigma, T) -> float:
    """European put on a fund paying continuous yield ``div``."""
    if T <= 0:
        raise InvariantViolation("T", "must be positive")
    fwd = F0 * math.exp((r - div) * T)
    disc = math.exp(-r * T)
    if sigma <= 0:
        return disc * max(K - fwd, 0.0)
    sd = sigma * math.sqrt(T)
    d1 = (math.log(fwd / K) + 0.5 * sd * sd) / sd
    d2 = d1 - sd
    return float(disc * (K * ndtr(-d2) - fwd * ndtr(-d1)))


def bs_call(F0, K, r, div, sigma, T) -> float:
    # parity
    return bs_put(F0, K, r, div, sigma, T) + F0 * math.exp(-div * T) - K * math.exp(-r * T)


# --- maturity-guarantee example -----------------------------------------------


@dataclass(frozen=True)
class GmmbParams:
    r: float = 0.02
    sigma_f: float = 0.1
    lam_const: float = 0.015
    s_star: float = 1.02
    F0: float = 1.0
    T: float = 1.0
    n: int = 100
    alpha: float = 0.1

    def __post_init__(self):
        if self.n < 0 or self.lam_const < 0 or self.sigma_f < 0 or self.alpha < 0 or not self.T > 0:
            raise InvariantViolation("gmmb", "n, lam_const, sigma_f, alpha >= 0 and T > 0 required")
        rates = self.death_rates()
        if np.any(rates < -1e-15):
            k = int(np.argmin(rates))
            raise NegativeRate(f"tilted death rate {rates[k]:.3g} < 0 at k={k}")

    def death_rates(self) -> np.ndarray:
        """Total tilted death rate ``k*lam - alpha*sqrt(k*lam)`` in state ``k = 0..n``."""
        kl = np.arange(self.n + 1) * self.lam_const
        return kl - self.alpha * np.sqrt(kl)

    def replace(self, **kw) -> "GmmbParams":
        from dataclasses import replace

        return replace(self, **kw)

    @property
    def state(self) -> State:
        return State(0.0, 0.0, self.F0, self.sigma_f**2, self.lam_const, self.n)

    def dynamics(self) -> "GmmbModel":
        return GmmbModel(self)


class GmmbModel:
    """Dynamics object for the guarantee example, same interface as :class:`FactorModel`.

    The fund is geometric Brownian motion with drift ``r`` and volatility
    ``sigma_f`` and is itself traded, so all market risk is hedgeable. Rates
    factors stay at zero, variance is frozen at ``sigma_f**2`` and mortality
    is constant. No fee and no death benefit.
    """

    positive = (3, 4)

    def __init__(self, g: GmmbParams):
        self.g = g
        self.corr = np.eye(5)
        self.T = g.T
        self.c = 0.0
        self.alpha = g.alpha

    def rate(self, t, z):
        return np.full(np.shape(z)[:-1], self.g.r)

    def drift(self, t, z):
        out = np.zeros(np.shape(z))
        out[..., F] = self.g.r * z[..., F]
        return out

    drift_star = drift

    def sigma(self, t, z):
        out = np.zeros(np.shape(z) + (5,))
        out[..., F, F] = self.g.sigma_f * z[..., F]
        return out

    def residual_cov(self, t, z):
        return np.zeros(np.shape(z) + (5,))

    def death_benefit(self, t, f):
        return np.zeros(np.shape(f))

    def survival_benefit(self, f):
        return np.maximum(self.g.s_star - f, 0.0)


def death_distribution_tilted(g: GmmbParams, T: float | None = None) -> np.ndarray:
    """Law of the in-force count at ``T`` under the tilted intensity (RK4 on the master equation)."""
    T = g.T if T is None else T
    mu = g.death_rates()
    if np.any(mu < -1e-15):
        raise NegativeRate("tilted death rate below zero")
    mu = np.maximum(mu, 0.0)
    p = np.zeros(g.n + 1)
    p[g.n] = 1.0
    if T <= 0:
        return p

    def rhs(q):
        out = -mu * q
        out[:-1] += mu[1:] * q[1:]
        return out

    steps = max(1, math.ceil(T / RK4_MAX_DT - 1e-9))
    h = T / steps
    for _ in range(steps):
        k1 = rhs(p)
        k2 = rhs(p + 0.5 * h * k1)
        k3 = rhs(p + 0.5 * h * k2)
        k4 = rhs(p + h * k3)
        p = p + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return p


def death_expectation_tilted(g: GmmbParams, T: float | None = None) -> float:
    """``E[J(T)]`` for the tilted pure-death chain started at ``n``."""
    p = death_distribution_tilted(g, T)
    return float(np.arange(g.n + 1) @ p)


def simulate_tilted_deaths(g: GmmbParams, n_sims: int, rng: np.random.Generator, T: float | None = None):
    """Exact (Gillespie) draws of ``J(T)`` for the tilted death chain."""
    T = g.T if T is None else T
    mu = np.maximum(g.death_rates(), 0.0)
    k = np.full(n_sims, g.n, dtype=np.int64)
    clock = np.zeros(n_sims)
    alive = mu[k] > 0
    while np.any(alive):
        idx = np.flatnonzero(alive)
        clock[idx] += rng.exponential(1.0 / mu[k[idx]])
        jumped = idx[clock[idx] <= T]
        k[jumped] -= 1
        alive = np.zeros(n_sims, dtype=bool)
        alive[jumped] = mu[k[jumped]] > 0
    return k


class Method(str, enum.Enum):
    SEMI_ANALYTIC = "semi_analytic"
    MONTE_CARLO = "monte_carlo"


def gmmb_price(g: GmmbParams, method=Method.SEMI_ANALYTIC, n_sims: int = 200_000, seed: int = 0):
    """Price of the maturity guarantee.

    Semi-analytic: expected survivors under the tilted intensity times the
    Black-Scholes put (the two are independent). Monte Carlo: joint simulation
    of the lognormal fund and the tilted death chain; returns a
    :class:`McEstimate`.
    """
    method = Method(method)
    if method is Method.SEMI_ANALYTIC:
        return death_expectation_tilted(g) * bs_put(g.F0, g.s_star, g.r, 0.0, g.sigma_f, g.T)
    ss = np.random.SeedSequence([int(seed), 7])
    rng_f, rng_j = (np.random.default_rng(s) for s in ss.spawn(2))
    xi = rng_f.standard_normal(n_sims)
    fT = g.F0 * np.exp((g.r - 0.5 * g.sigma_f**2) * g.T + g.sigma_f * math.sqrt(g.T) * xi)
    jT = simulate_tilted_deaths(g, n_sims, rng_j)
    return McEstimate.from_samples(math.exp(-g.r * g.T) * jT * np.maximum(g.s_star - fT, 0.0))
