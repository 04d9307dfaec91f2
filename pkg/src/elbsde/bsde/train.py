"""Joint training of the three networks on a pool of risk-adjusted paths."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from ..deepnet import AdamState, adam_step
from ..errors import InvariantViolation, NonFiniteGradient
from ..model import ModelParams, State
from ..scenario import GridSpec, InitRegion, Measure, sample_initial_array, simulate_paths
from . import kernels
from .inputs import RolloutInputs, assemble_inputs
from .networks import NetworkSet, default_normalizer

log = logging.getLogger(__name__)

BASE_STATE = State(0.0, 0.0, 1.0, 0.1, 0.015, 100)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 200
    pool_size: int = 10_000
    grid: GridSpec = GridSpec(100, 0.01)
    region: InitRegion = InitRegion.around(BASE_STATE)
    seed: int = 0
    fresh_paths: bool = False  # resample the pool every epoch instead of reusing it
    base_state: State = BASE_STATE
    lr: float = 1e-3

    def __post_init__(self):
        if self.epochs < 0:
            raise InvariantViolation("epochs", "must be non-negative")
        if not 1 <= self.batch_size <= self.pool_size:
            raise InvariantViolation("batch_size", "need 1 <= batch_size <= pool_size")
        if not self.lr > 0:
            raise InvariantViolation("lr", "must be positive")


@dataclass
class TrainReport:
    mse: list = field(default_factory=list)
    base_price: list = field(default_factory=list)
    checkpoint: str | None = None

    @property
    def epochs(self) -> int:
        return len(self.mse)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "mse", "base_price"])
            for i, (m, p) in enumerate(zip(self.mse, self.base_price), start=1):
                w.writerow([i, f"{m:.17g}", f"{p:.17g}"])

    def __eq__(self, other):
        return isinstance(other, TrainReport) and self.mse == other.mse and self.base_price == other.base_price


def _dynamics(model):
    return model.dynamics() if isinstance(model, ModelParams) else model


def _rng(seed: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), purpose]))


def build_pool(cfg: TrainConfig, dyn, nets: NetworkSet, epoch: int = 0) -> RolloutInputs:
    """Simulate ``pool_size`` risk-adjusted paths from the region and precompute rollout inputs."""
    init = sample_initial_array(cfg.region, cfg.pool_size, _rng(cfg.seed, 1000 + epoch))
    bundle = simulate_paths(dyn, cfg.grid, init, Measure.RISK_ADJUSTED, seed=cfg.seed * 100_003 + epoch)
    return assemble_inputs(bundle, dyn, nets)


def train(cfg: TrainConfig, model, progress=None) -> tuple[NetworkSet, TrainReport]:
    """Minimise the terminal mean squared mismatch over ``N1``, ``N2``, ``N3`` jointly.

    ``model`` is a :class:`ModelParams` or a dynamics object. ``progress``, if
    given, is called as ``progress(epoch, mse, base_price)`` after every epoch.
    """
    dyn = _dynamics(model)
    if abs(cfg.grid.T - dyn.T) > 1e-12:
        raise InvariantViolation("grid", f"grid horizon {cfg.grid.T} differs from contract horizon {dyn.T}")
    normalizer = default_normalizer(cfg.region, dyn.T)
    nets = NetworkSet.initialized(normalizer, _rng(cfg.seed, 1), 0.0, cfg.region)
    report = TrainReport()
    if cfg.epochs == 0:
        return nets, report

    pool = build_pool(cfg, dyn, nets)
    # start N1 at the pool-average best estimate so early rollouts are on scale
    nets.n1.biases[-1][...] = float(np.mean(pool.best_estimate()))
    params = nets.params()
    adam = AdamState.for_params(params, lr=cfg.lr)
    shuffle = _rng(cfg.seed, 2)
    n_batches = cfg.pool_size // cfg.batch_size
    base_z, base_k = cfg.base_state.z, cfg.base_state.k

    for epoch in range(cfg.epochs):
        if cfg.fresh_paths and epoch > 0:
            pool = build_pool(cfg, dyn, nets, epoch)
        perm = shuffle.permutation(cfg.pool_size)
        losses = []
        for j in range(n_batches):
            batch = pool.take(perm[j * cfg.batch_size:(j + 1) * cfg.batch_size])
            loss, grads, _ = kernels.loss_and_grad(params, batch)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                raise NonFiniteGradient(f"non-finite loss or gradient in epoch {epoch}", epoch=epoch)
            adam_step(adam, params, grads)
            losses.append(loss)
        report.mse.append(float(np.mean(losses)))
        report.base_price.append(float(nets.price(base_z, base_k)))
        log.info("epoch %d mse %.6g price %.6f", epoch + 1, report.mse[-1], report.base_price[-1])
        if progress is not None:
            progress(epoch, report.mse[-1], report.base_price[-1])
    return nets, report
