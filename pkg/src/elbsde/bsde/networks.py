"""The three approximators and their shared input normalisation.

Feature order for every network is ``(t, x, y, F, v, lambda, k)``; ``N1``
drops ``t``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..deepnet import MLP, Normalizer, read_checkpoint, write_checkpoint
from ..errors import MissingCheckpoint
from ..model import State
from ..scenario import InitRegion

HIDDEN = (20, 20)
DEGENERATE_SPREAD = 0.25
DEGENERATE_ZERO_HALF_WIDTH = 0.005


def default_normalizer(region: InitRegion, T: float, n_max: int | None = None) -> Normalizer:
    """Ranges from ``region``; zero-width intervals are widened around their value.

    Time maps over ``[0, T]`` and the in-force count over ``[0, n_max]``.
    """
    lo = np.array(region.lo[:5])
    hi = np.array(region.hi[:5])
    flat = hi <= lo
    half = np.where(lo != 0.0, DEGENERATE_SPREAD * np.abs(lo), DEGENERATE_ZERO_HALF_WIDTH)
    lo = np.where(flat, lo - half, lo)
    hi = np.where(flat, hi + half, hi)
    if n_max is None:
        n_max = region.k_range[1]
    n_max = max(int(n_max), 1)
    return Normalizer(np.r_[0.0, lo, 0.0], np.r_[T, hi, float(n_max)])


@dataclass
class NetworkSet:
    n1: MLP  # (z, k) -> price at time 0
    n2: MLP  # (t, z, k) -> price gradient in z
    n3: MLP  # (t, z, k - 1) -> price with one fewer policy
    normalizer: Normalizer
    region: InitRegion | None = None

    def __post_init__(self):
        if self.n1.dims[0] != 6 or self.n1.dims[-1] != 1:
            raise ValueError("n1 must map 6 -> 1")
        if self.n2.dims[0] != 7 or self.n2.dims[-1] != 5:
            raise ValueError("n2 must map 7 -> 5")
        if self.n3.dims[0] != 7 or self.n3.dims[-1] != 1:
            raise ValueError("n3 must map 7 -> 1")

    @classmethod
    def initialized(cls, normalizer: Normalizer, rng: np.random.Generator, price_scale: float = 0.0,
                    region: InitRegion | None = None, hidden=HIDDEN) -> "NetworkSet":
        return cls(
            MLP.initialized((6, *hidden, 1), rng, out_bias=price_scale),
            MLP.initialized((7, *hidden, 5), rng),
            MLP.initialized((7, *hidden, 1), rng),
            normalizer,
            region,
        )

    def params(self) -> list[np.ndarray]:
        return self.n1.parameters() + self.n2.parameters() + self.n3.parameters()

    def copy(self) -> "NetworkSet":
        return NetworkSet(self.n1.copy(), self.n2.copy(), self.n3.copy(), self.normalizer, self.region)

    # -- feature maps ------------------------------------------------------

    def features(self, t, z, k) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        t = np.broadcast_to(np.asarray(t, dtype=float), z.shape[:-1])
        k = np.broadcast_to(np.asarray(k, dtype=float), z.shape[:-1])
        raw = np.concatenate([t[..., None], z, k[..., None]], axis=-1)
        return self.normalizer(raw)

    def n1_features(self, z, k) -> np.ndarray:
        return self.features(0.0, z, k)[..., 1:]

    def lower_features(self, t, z, k) -> np.ndarray:
        return self.features(t, z, np.maximum(np.asarray(k) - 1, 0))

    # -- evaluation --------------------------------------------------------

    def price(self, z, k) -> np.ndarray:
        return self.n1.forward(self.n1_features(z, k))[..., 0]

    def gradient(self, t, z, k) -> np.ndarray:
        return self.n2.forward(self.features(t, z, k))

    def lower_price(self, t, z, k) -> np.ndarray:
        k = np.asarray(k)
        return self.n3.forward(self.lower_features(t, z, k))[..., 0] * (k >= 1)

    # -- persistence -------------------------------------------------------

    def save(self, path, meta: dict | None = None):
        meta = dict(meta or {})
        if self.region is not None:
            meta["region_lo"] = ",".join(f"{v:.17g}" for v in self.region.lo)
            meta["region_hi"] = ",".join(f"{v:.17g}" for v in self.region.hi)
        write_checkpoint(path, {"n1": self.n1, "n2": self.n2, "n3": self.n3}, self.normalizer, meta)

    @classmethod
    def load(cls, path) -> "NetworkSet":
        try:
            nets, normalizer, meta = read_checkpoint(path)
        except FileNotFoundError:
            raise MissingCheckpoint(f"no checkpoint at {path}") from None
        region = None
        if "region_lo" in meta:
            region = InitRegion(
                tuple(float(v) for v in meta["region_lo"].split(",")),
                tuple(float(v) for v in meta["region_hi"].split(",")),
            )
        return cls(nets["n1"], nets["n2"], nets["n3"], normalizer, region)


def price_at_zero(nets: NetworkSet, s0: State, warn: bool = True) -> float:
    """Trained time-0 portfolio price at ``s0``.

    Emits a ``RuntimeWarning`` when ``s0`` lies outside the training region.
    """
    if warn and nets.region is not None and not nets.region.contains(s0):
        warnings.warn(f"{s0} lies outside the training region", RuntimeWarning, stacklevel=2)
    return float(nets.price(s0.z, s0.k))
