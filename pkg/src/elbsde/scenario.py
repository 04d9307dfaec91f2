"""Euler simulation of the risk factors and of the death-counting process."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvariantViolation, NotPSD
from .model import LAM, ModelParams, State

FEATURES = ("x", "y", "F", "v", "lambda", "J")


class Measure(str, enum.Enum):
    REAL_WORLD = "real_world"
    RISK_ADJUSTED = "risk_adjusted"


@dataclass(frozen=True)
class GridSpec:
    n_steps: int
    dt: float

    def __post_init__(self):
        if self.n_steps < 1 or not self.dt > 0:
            raise InvariantViolation("grid", "n_steps >= 1 and dt > 0 required")

    @classmethod
    def from_horizon(cls, T: float, dt: float) -> "GridSpec":
        n = int(round(T / dt))
        if n < 1 or abs(n * dt - T) > 1e-12:
            raise InvariantViolation("dt", f"T={T} is not a multiple of dt={dt}")
        return cls(n, T / n)

    @property
    def T(self) -> float:
        return self.n_steps * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt


@dataclass(frozen=True)
class InitRegion:
    """Closed intervals for ``(x, y, F, v, lambda, J)`` at time 0."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != 6 or len(hi) != 6:
            raise InvariantViolation("region", "six features expected")
        for name, a, b in zip(FEATURES, lo, hi):
            if a > b:
                raise InvariantViolation(f"region.{name}", "lower bound above upper bound")
        if math.ceil(lo[5]) > math.floor(hi[5]) or lo[5] < 0:
            raise InvariantViolation("region.J", "interval must contain a non-negative integer")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def point(cls, s: State) -> "InitRegion":
        base = (s.x, s.y, s.f, s.v, s.lam, s.k)
        return cls(base, base)

    @classmethod
    def around(cls, s: State, spread: float = 0.25, rate_width: float = 0.01) -> "InitRegion":
        """``F, v, lambda, J`` scaled by ``1 -/+ spread``; rates on ``[x0, x0 + rate_width]``."""
        lo = (s.x, s.y, s.f * (1 - spread), s.v * (1 - spread), s.lam * (1 - spread), round(s.k * (1 - spread)))
        hi = (s.x + rate_width, s.y + rate_width, s.f * (1 + spread), s.v * (1 + spread),
              s.lam * (1 + spread), round(s.k * (1 + spread)))
        return cls(lo, hi)

    @property
    def k_range(self) -> tuple[int, int]:
        return math.ceil(self.lo[5]), math.floor(self.hi[5])

    def contains(self, s: State, tol: float = 1e-12) -> bool:
        vals = (s.x, s.y, s.f, s.v, s.lam, s.k)
        return all(a - tol <= v <= b + tol for v, a, b in zip(vals, self.lo, self.hi))


@dataclass
class PathBundle:
    """Simulated trajectories on a uniform grid.

    ``z`` has shape ``(P, N+1, 5)``, ``k`` ``(P, N+1)``, ``dW`` (correlated
    Brownian increments) ``(P, N, 5)`` and ``dN`` ``(P, N)``.
    """

    grid: GridSpec
    z: np.ndarray
    k: np.ndarray
    dW: np.ndarray
    dN: np.ndarray
    seed: int
    measure: Measure

    @property
    def n_paths(self) -> int:
        return self.z.shape[0]

    def states(self, path: int) -> list[State]:
        return [State.from_array(self.z[path, n], self.k[path, n]) for n in range(self.grid.n_steps + 1)]

    def take(self, idx) -> "PathBundle":
        return PathBundle(self.grid, self.z[idx], self.k[idx], self.dW[idx], self.dN[idx], self.seed, self.measure)


def correlation_factorization(Q, tol: float = 1e-10) -> np.ndarray:
    """Lower-triangular ``L`` with ``L L^T = Q``; tolerates semi-definite ``Q``."""
    Q = np.asarray(Q, dtype=float)
    n = Q.shape[0]
    L = np.zeros_like(Q)
    for j in range(n):
        pivot = Q[j, j] - L[j, :j] @ L[j, :j]
        if pivot < -tol:
            raise NotPSD(f"negative pivot {pivot:g} at column {j}")
        L[j, j] = math.sqrt(max(pivot, 0.0))
        for i in range(j + 1, n):
            num = Q[i, j] - L[i, :j] @ L[j, :j]
            if L[j, j] > 0.0:
                L[i, j] = num / L[j, j]
            elif abs(num) > tol:
                raise NotPSD(f"inconsistent zero pivot at column {j}")
    return L


def sample_initial_array(region: InitRegion, batch: int, rng: np.random.Generator):
    """Uniform draws in ``region``; returns ``(z0, k0)`` arrays."""
    lo = np.array(region.lo[:5])
    hi = np.array(region.hi[:5])
    z0 = lo + (hi - lo) * rng.random((batch, 5))
    k_lo, k_hi = region.k_range
    k0 = rng.integers(k_lo, k_hi + 1, size=batch)
    return z0, k0.astype(np.int64)


def sample_initial_states(region: InitRegion, batch: int, rng: np.random.Generator) -> list[State]:
    z0, k0 = sample_initial_array(region, batch, rng)
    return [State.from_array(z, k) for z, k in zip(z0, k0)]


class _Streams:
    """One Philox stream per (step, kind).

    Path ``i`` consumes the ``i``-th draws of each stream, so its numbers do
    not depend on how many paths are simulated or how they are chunked.
    """

    def __init__(self, seed: int, n_steps: int):
        self.normal = [self._gen(seed, n, 0) for n in range(n_steps)]
        self.death = [self._gen(seed, n, 1) for n in range(n_steps)]

    @staticmethod
    def _gen(seed, step, kind):
        return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), step, kind])))


def _as_dynamics(model):
    return model.dynamics() if isinstance(model, ModelParams) else model


def _init_arrays(init):
    if isinstance(init, tuple) and len(init) == 2:
        z0, k0 = init
        return np.array(z0, dtype=float), np.array(k0, dtype=np.int64)
    if isinstance(init, np.ndarray):
        return np.array(init[:, :5], dtype=float), init[:, 5].astype(np.int64)
    init = list(init)
    return np.array([s.z for s in init]), np.array([s.k for s in init], dtype=np.int64)


def _simulate_block(dyn, grid, z0, k0, measure, streams, chol):
    P, N, dt = len(z0), grid.n_steps, grid.dt
    pos = list(dyn.positive)
    z = np.empty((P, N + 1, 5))
    k = np.empty((P, N + 1), dtype=np.int64)
    dW = np.empty((P, N, 5))
    dN = np.empty((P, N), dtype=np.int64)
    raw = z0.copy()
    z[:, 0] = raw
    z[:, 0, pos] = np.maximum(raw[:, pos], 0.0)
    k[:, 0] = k0
    sqdt = math.sqrt(dt)
    drift = dyn.drift_star if measure == Measure.RISK_ADJUSTED else dyn.drift
    for n in range(N):
        t = n * dt
        cur = z[:, n]
        xi = streams.normal[n].standard_normal((P, 5))
        dW[:, n] = sqdt * xi @ chol.T
        sig = dyn.sigma(t, cur)
        raw = raw + drift(t, cur) * dt + np.einsum("pij,pj->pi", sig, dW[:, n])
        z[:, n + 1] = raw
        z[:, n + 1, pos] = np.maximum(raw[:, pos], 0.0)
        prob = -np.expm1(-cur[:, LAM] * dt)
        dN[:, n] = streams.death[n].binomial(k[:, n], prob)
        k[:, n + 1] = k[:, n] - dN[:, n]
    return z, k, dW, dN


def simulate_paths(model, grid: GridSpec, init, measure=Measure.RISK_ADJUSTED, seed: int = 0) -> PathBundle:
    """Simulate one path per initial state.

    ``model`` is a :class:`ModelParams` or any dynamics object exposing
    ``drift``, ``drift_star``, ``sigma``, ``corr`` and ``positive``.
    ``init`` is a list of :class:`State`, an array ``(P, 6)`` or a tuple
    ``(z0, k0)``.
    """
    measure = Measure(measure)
    dyn = _as_dynamics(model)
    z0, k0 = _init_arrays(init)
    chol = correlation_factorization(dyn.corr)
    z, k, dW, dN = _simulate_block(dyn, grid, z0, k0, measure, _Streams(seed, grid.n_steps), chol)
    return PathBundle(grid, z, k, dW, dN, seed, measure)


def stream_paths(model, grid: GridSpec, s0: State, n_paths: int, measure=Measure.RISK_ADJUSTED,
                 seed: int = 0, block: int = 20_000):
    """Yield bundles of at most ``block`` paths, all started from ``s0``.

    Concatenating the blocks gives the same paths as a single call to
    :func:`simulate_paths` with ``n_paths`` copies of ``s0``.
    """
    measure = Measure(measure)
    dyn = _as_dynamics(model)
    chol = correlation_factorization(dyn.corr)
    streams = _Streams(seed, grid.n_steps)
    done = 0
    while done < n_paths:
        m = min(block, n_paths - done)
        z0 = np.tile(s0.z, (m, 1))
        k0 = np.full(m, s0.k, dtype=np.int64)
        z, k, dW, dN = _simulate_block(dyn, grid, z0, k0, measure, streams, chol)
        yield PathBundle(grid, z, k, dW, dN, seed, measure)
        done += m


def write_csv(bundle: PathBundle, path, max_paths: int | None = None):
    """Dump trajectories as ``path, step, t, x, y, F, v, lambda, J`` rows."""
    times = bundle.grid.times
    n_paths = bundle.n_paths if max_paths is None else min(max_paths, bundle.n_paths)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "step", "t", "x", "y", "F", "v", "lambda", "J"])
        for i in range(n_paths):
            for n, t in enumerate(times):
                zz = bundle.z[i, n]
                w.writerow([i, n, f"{t:.17g}", *(f"{v:.17g}" for v in zz), int(bundle.k[i, n])])
