"""Network-independent per-step arrays feeding the price rollout.

The forward paths do not depend on the networks, so everything except the
network outputs can be computed once per path pool.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from ..model import F, LAM
from ..scenario import PathBundle
from .networks import NetworkSet

SQRT_EPS = 1e-12


@dataclass
class RolloutInputs:
    """Step-major arrays; ``N`` steps, ``P`` paths.

    x1      (P, 6)        normalised ``N1`` inputs
    x2, x3  (N, P, 7)     normalised ``N2`` / ``N3`` inputs (``x3`` uses ``k-1``)
    has_k   (N, P)        1.0 where at least one policy is in force
    sdw     (N, P, 5)     ``sigma(t_n, Z_n) dW_n``
    M       (N, P, 5, 5)  ``sigma* Q sigma*^T`` at ``t_n``
    r       (N, P)        short rate
    klam    (N, P)        ``k * lambda`` (death compensator rate)
    dn      (N, P)        deaths during the step
    ben     (N, P)        death benefit per death
    fee     (N, P)        ``c * k * F`` fee income rate
    target  (P,)          ``J(T) * S(F(T))``
    """

    x1: np.ndarray
    x2: np.ndarray
    x3: np.ndarray
    has_k: np.ndarray
    sdw: np.ndarray
    M: np.ndarray
    r: np.ndarray
    klam: np.ndarray
    dn: np.ndarray
    ben: np.ndarray
    fee: np.ndarray
    target: np.ndarray
    dt: float
    alpha: float

    @property
    def n_paths(self) -> int:
        return self.x1.shape[0]

    @property
    def n_steps(self) -> int:
        return self.x2.shape[0]

    def take(self, idx) -> "RolloutInputs":
        out = {}
        for f in fields(self):
            val = getattr(self, f.name)
            if f.name in ("x1", "target"):
                val = np.ascontiguousarray(val[idx])
            elif isinstance(val, np.ndarray):
                val = np.ascontiguousarray(val[:, idx])
            out[f.name] = val
        return RolloutInputs(**out)

    def best_estimate(self) -> np.ndarray:
        """Per-path discounted cash flows with no risk margin (left-point sums)."""
        disc = np.exp(-np.cumsum(self.r, axis=0) * self.dt)
        disc_left = np.vstack([np.ones((1, self.n_paths)), disc[:-1]])
        flows = (disc_left * (self.ben * self.klam - self.fee)).sum(axis=0) * self.dt
        return flows + disc[-1] * self.target


def assemble_inputs(bundle: PathBundle, dyn, nets: NetworkSet, alpha: float | None = None,
                    chunk: int = 10) -> RolloutInputs:
    grid = bundle.grid
    N, P, dt = grid.n_steps, bundle.n_paths, grid.dt
    alpha = dyn.alpha if alpha is None else alpha
    z_all = np.swapaxes(bundle.z, 0, 1)  # (N+1, P, 5)
    k_all = np.swapaxes(bundle.k, 0, 1).astype(float)
    out = dict(
        x2=np.empty((N, P, 7)), x3=np.empty((N, P, 7)), sdw=np.empty((N, P, 5)),
        M=np.empty((N, P, 5, 5)), r=np.empty((N, P)), ben=np.empty((N, P)),
    )
    dW = np.swapaxes(bundle.dW, 0, 1)
    for s in range(0, N, chunk):
        e = min(s + chunk, N)
        t = grid.times[s:e, None]
        z = z_all[s:e]
        k = k_all[s:e]
        out["x2"][s:e] = nets.features(t, z, k)
        out["x3"][s:e] = nets.lower_features(t, z, k)
        out["sdw"][s:e] = np.einsum("npij,npj->npi", dyn.sigma(t, z), dW[s:e])
        out["M"][s:e] = dyn.residual_cov(t, z)
        out["r"][s:e] = dyn.rate(t, z)
        out["ben"][s:e] = dyn.death_benefit(t, z[..., F])
    k = k_all[:N]
    zN = z_all[N]
    return RolloutInputs(
        x1=nets.n1_features(z_all[0], k_all[0]),
        has_k=(k >= 1).astype(float),
        klam=k * z_all[:N, :, LAM],
        dn=np.swapaxes(bundle.dN, 0, 1).astype(float),
        fee=dyn.c * k * z_all[:N, :, F],
        target=k_all[N] * dyn.survival_benefit(zN[:, F]),
        dt=dt,
        alpha=float(alpha),
        **out,
    )
