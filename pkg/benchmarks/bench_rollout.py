"""Compare the compiled and pure-Python rollout kernels on one training batch.

Run with ``python3 benchmarks/bench_rollout.py [--batch 200] [--repeat 20]``.
"""

import argparse
import time

import numpy as np

from elbsde.bsde import kernels
from elbsde.bsde.networks import NetworkSet, default_normalizer
from elbsde.bsde.train import TrainConfig, _rng, build_pool
from elbsde.model import ModelParams


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--batch", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()

    model = ModelParams()
    cfg = TrainConfig(pool_size=args.batch, batch_size=args.batch)
    dyn = model.dynamics()
    nets = NetworkSet.initialized(default_normalizer(cfg.region, dyn.T), _rng(0, 1), 0.0, cfg.region)
    batch = build_pool(cfg, dyn, nets)
    params = nets.params()

    backends = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])
    results = {}
    for backend in backends:
        kernels.loss_and_grad(params, batch, backend=backend)  # warm up
        times = []
        for _ in range(args.repeat):
            t0 = time.perf_counter()
            out = kernels.loss_and_grad(params, batch, backend=backend)
            times.append(time.perf_counter() - t0)
        results[backend] = out
        print(f"{backend:>7}: median {1e3 * np.median(times):8.2f} ms  min {1e3 * min(times):8.2f} ms"
              f"  (batch {args.batch}, {batch.n_steps} steps)")
    if len(results) == 2:
        (lp, gp, _), (lc, gc, _) = results["python"], results["cython"]
        diff = max(float(np.max(np.abs(a - b))) for a, b in zip(gp, gc))
        print(f"loss diff {abs(lp - lc):.3g}, max grad diff {diff:.3g}")
    else:
        print("compiled kernel not available; only the Python fallback was timed")


if __name__ == "__main__":
    main()
