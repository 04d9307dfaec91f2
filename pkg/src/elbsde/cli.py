"""Command-line entry point: ``elbsde <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 missing artifact.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

import numpy as np

from . import oracle
from .bsde.networks import NetworkSet, price_at_zero
from .bsde.train import train
from .config import FEATURE_NAMES, RunConfig, load_config
from .errors import (
    DegenerateHedgeBasis,
    InvariantViolation,
    MissingCheckpoint,
    NegativeRate,
    NonFiniteGradient,
    NotPSD,
    ParseError,
    UnknownCommand,
    VanishingVariance,
)
from .model import State
from .scenario import InitRegion, Measure, simulate_paths, write_csv

log = logging.getLogger("elbsde")

COMMANDS = ("train", "price", "surface", "sensitivity", "validate-bel", "validate-gmmb", "simulate")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_MISSING = 0, 2, 3, 4
_STATE_ATTR = dict(zip(FEATURE_NAMES, ("x", "y", "f", "v", "lam", "k")))


def _f(v) -> str:
    return f"{float(v):.17g}"


def _write_rows(path, header, rows):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_f(v) if isinstance(v, (float, np.floating)) else v for v in row])


def _out(cfg: RunConfig, name: str) -> str:
    os.makedirs(cfg.out_dir, exist_ok=True)
    return os.path.join(cfg.out_dir, name)


def _train_and_save(cfg: RunConfig, model, region: InitRegion, base: State, checkpoint: str | None,
                    report_name: str, T: float | None = None, tag: str = "factor"):
    tcfg = cfg.train_config(region=region, base_state=base, T=T)
    nets, report = train(tcfg, model, progress=lambda e, m, p: log.info("epoch %d  mse %.6g  price %.6f", e + 1, m, p))
    report.write_csv(_out(cfg, report_name))
    if checkpoint:
        os.makedirs(os.path.dirname(os.path.abspath(checkpoint)), exist_ok=True)
        nets.save(checkpoint, {"model": tag, "alpha": _f(model.alpha), "seed": tcfg.seed, "epochs": tcfg.epochs})
        report.checkpoint = checkpoint
    return nets, report


def _load(path) -> NetworkSet:
    if not path or not os.path.exists(path):
        raise MissingCheckpoint(f"no checkpoint at {path!r}; run 'train' first or pass --checkpoint")
    return NetworkSet.load(path)


# --- commands ------------------------------------------------------------------


def cmd_train(cfg: RunConfig, args) -> int:
    nets, report = _train_and_save(cfg, cfg.params, cfg.region(), cfg.state, cfg.checkpoint, "train_report.csv")
    price = price_at_zero(nets, cfg.state, warn=False)
    print(f"price {_f(price)}")
    print(f"checkpoint {cfg.checkpoint}")
    return EXIT_OK


def cmd_price(cfg: RunConfig, args) -> int:
    nets = _load(cfg.checkpoint)
    price = price_at_zero(nets, cfg.state)
    print(f"price {_f(price)}")
    _write_rows(_out(cfg, "price.csv"), ["x", "y", "F", "v", "lambda", "J", "price"],
                [[*map(float, cfg.state.z), cfg.state.k, float(price)]])
    return EXIT_OK


def _axis(cfg: RunConfig, nets: NetworkSet, which: int) -> tuple[str, np.ndarray]:
    o = cfg.options
    name = o[f"grid_feature{which}"]
    idx = FEATURE_NAMES.index(name)
    region = nets.region or cfg.region()
    lo = o[f"grid_lo{which}"] if o[f"grid_lo{which}"] is not None else region.lo[idx]
    hi = o[f"grid_hi{which}"] if o[f"grid_hi{which}"] is not None else region.hi[idx]
    pts = np.linspace(lo, hi, o["grid_points"])
    if name == "J":
        pts = np.unique(np.round(pts)).astype(int)
    return name, pts


def surface_grid(nets: NetworkSet, base: State, f1: str, v1, f2: str, v2) -> np.ndarray:
    """``N1`` over the product grid ``v1 x v2``, other inputs held at ``base``."""
    out = np.empty((len(v1), len(v2)))
    for i, a in enumerate(v1):
        for j, b in enumerate(v2):
            s = State(**{**vars(base), _STATE_ATTR[f1]: a})
            s = State(**{**vars(s), _STATE_ATTR[f2]: b})
            s.k = int(s.k)
            out[i, j] = nets.price(s.z, s.k)
    return out


def cmd_surface(cfg: RunConfig, args) -> int:
    nets = _load(cfg.checkpoint)
    f1, v1 = _axis(cfg, nets, 1)
    f2, v2 = _axis(cfg, nets, 2)
    if f1 == f2:
        raise InvariantViolation("grid_feature2", "must differ from grid_feature1")
    prices = surface_grid(nets, cfg.state, f1, v1, f2, v2)
    rows = [[a if f1 == "J" else float(a), b if f2 == "J" else float(b), float(prices[i, j])]
            for i, a in enumerate(v1) for j, b in enumerate(v2)]
    path = _out(cfg, "surface.csv")
    _write_rows(path, [f1, f2, "price"], rows)
    print(f"surface {path} ({len(rows)} points)")
    return EXIT_OK


def _corr_index(key: str) -> tuple[int, int]:
    return int(key[4]) - 1, int(key[5]) - 1


def cmd_sensitivity(cfg: RunConfig, args) -> int:
    """Retrain under correlation bumps and over the alpha sweep; report % price changes."""
    region = cfg.region()
    base_nets, _ = _train_and_save(cfg, cfg.params, region, cfg.state, None, "sens_base_report.csv")
    base_price = price_at_zero(base_nets, cfg.state, warn=False)
    rows = []
    bump = cfg.options["bump"]
    what = getattr(args, "what", "all")
    if what in ("all", "corr"):
        for key in cfg.options["bump_targets"].split(","):
            key = key.strip()
            i, j = _corr_index(key)
            for sign in (1.0, -1.0):
                value = float(cfg.params.corr[i, j] + sign * bump)
                try:
                    params = cfg.params.with_corr(i, j, value)
                except InvariantViolation as exc:
                    log.warning("skipping %s=%g: %s", key, value, exc)
                    continue
                nets, _ = _train_and_save(cfg, params, region, cfg.state, None,
                                          f"sens_{key}_{'up' if sign > 0 else 'down'}_report.csv")
                price = price_at_zero(nets, cfg.state, warn=False)
                rows.append([key, value, price, base_price, 100.0 * (price / base_price - 1.0)])
                print(f"{key} {value:+.3f}  price {price:.6f}  change {rows[-1][-1]:+.4f}%")
    if what in ("all", "alpha"):
        for a in (float(s) for s in cfg.options["alpha_sweep"].split(",")):
            if a == cfg.params.alpha:
                price = base_price
            else:
                nets, _ = _train_and_save(cfg, cfg.params.replace(alpha=a), region, cfg.state, None,
                                          f"sens_alpha_{a:g}_report.csv")
                price = price_at_zero(nets, cfg.state, warn=False)
            rows.append(["alpha", a, price, base_price, 100.0 * (price / base_price - 1.0)])
            print(f"alpha {a:.3f}  price {price:.6f}")
    path = _out(cfg, "sensitivity.csv")
    _write_rows(path, ["parameter", "value", "price", "base_price", "pct_change"], rows)
    print(f"sensitivity {path}")
    return EXIT_OK


def _report(name, oracle_value, oracle_se, neural):
    rel = abs(neural - oracle_value) / abs(oracle_value) if oracle_value != 0 else float("inf")
    print(f"oracle {_f(oracle_value)}  (s.e. {_f(oracle_se)})")
    print(f"neural {_f(neural)}")
    print(f"relative_error {_f(rel)}")
    return rel


def cmd_validate_bel(cfg: RunConfig, args) -> int:
    """Neural price at alpha = 0 against the best-estimate Monte Carlo."""
    params = cfg.params.replace(alpha=0.0)
    if args.checkpoint:
        nets = _load(args.checkpoint)
    else:
        nets, _ = _train_and_save(cfg, params, InitRegion.point(cfg.state), cfg.state, None, "bel_report.csv")
    est = oracle.bel_monte_carlo(params, cfg.state, cfg.options["bel_sims"], cfg.grid(), cfg.seed)
    neural = price_at_zero(nets, cfg.state)
    rel = _report("bel", est.mean, est.std_error, neural)
    _write_rows(_out(cfg, "validate_bel.csv"), ["oracle", "oracle_se", "n_sims", "neural", "rel_error"],
                [[est.mean, est.std_error, est.n_sims, neural, rel]])
    return EXIT_OK


def cmd_validate_gmmb(cfg: RunConfig, args) -> int:
    """Neural price of the maturity guarantee against the semi-analytic and MC oracles."""
    g = cfg.gmmb
    semi = oracle.gmmb_price(g, oracle.Method.SEMI_ANALYTIC)
    mc = oracle.gmmb_price(g, oracle.Method.MONTE_CARLO, cfg.options["gmmb_sims"], cfg.seed)
    s0 = g.state
    if args.checkpoint:
        nets = _load(args.checkpoint)
    else:
        nets, _ = _train_and_save(cfg, g.dynamics(), InitRegion.point(s0), s0, None, "gmmb_report.csv",
                                  T=g.T, tag="gmmb")
    neural = price_at_zero(nets, s0)
    rel = _report("gmmb", semi, 0.0, neural)
    print(f"monte_carlo {_f(mc.mean)}  (s.e. {_f(mc.std_error)})")
    _write_rows(_out(cfg, "validate_gmmb.csv"),
                ["semi_analytic", "monte_carlo", "monte_carlo_se", "neural", "rel_error"],
                [[semi, mc.mean, mc.std_error, neural, rel]])
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, args) -> int:
    n = cfg.options["simulate_paths"]
    bundle = simulate_paths(cfg.params, cfg.grid(), [cfg.state] * n, Measure(cfg.options["measure"]), cfg.seed)
    path = _out(cfg, "paths.csv")
    write_csv(bundle, path)
    print(f"paths {path} ({n} paths, {cfg.grid().n_steps} steps)")
    return EXIT_OK


_HANDLERS = {
    "train": cmd_train,
    "price": cmd_price,
    "surface": cmd_surface,
    "sensitivity": cmd_sensitivity,
    "validate-bel": cmd_validate_bel,
    "validate-gmmb": cmd_validate_gmmb,
    "simulate": cmd_simulate,
}


def dispatch(cmd: str, cfg: RunConfig, args=None) -> int:
    if cmd not in _HANDLERS:
        raise UnknownCommand(f"unknown command {cmd!r}; expected one of {', '.join(COMMANDS)}")
    return _HANDLERS[cmd](cfg, args or argparse.Namespace(checkpoint=None, what="all"))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--checkpoint", help="checkpoint path to write (train) or read")
    common.add_argument("-v", "--verbose", action="store_true", help="log every epoch")

    parser = argparse.ArgumentParser(prog="elbsde", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.add_parser("train", parents=[common], help="train the three networks and save a checkpoint")
    sub.add_parser("price", parents=[common], help="time-0 price at the configured state")
    p = sub.add_parser("surface", parents=[common], help="price over a grid of two features")
    p.add_argument("--grid-feature1", choices=FEATURE_NAMES)
    p.add_argument("--grid-feature2", choices=FEATURE_NAMES)
    p.add_argument("--grid-points", type=int)
    p = sub.add_parser("sensitivity", parents=[common], help="retrain under correlation bumps and alphas")
    p.add_argument("--bump", type=float, help="correlation bump size (default 0.1)")
    p.add_argument("--what", choices=("all", "corr", "alpha"), default="all")
    sub.add_parser("validate-bel", parents=[common], help="alpha = 0 price against best-estimate MC")
    sub.add_parser("validate-gmmb", parents=[common], help="maturity-guarantee price against its oracles")
    sub.add_parser("simulate", parents=[common], help="dump simulated paths to CSV")
    return parser


def _apply_overrides(cfg: RunConfig, args, cmd) -> RunConfig:
    kw = {}
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.out is not None:
        kw["out_dir"] = args.out
    if args.checkpoint is not None:
        kw["checkpoint"] = args.checkpoint
    elif args.out is not None and cmd in ("train", "price", "surface"):
        kw["checkpoint"] = os.path.join(args.out, "model.ckpt")
    for flag, key in (("grid_feature1", "grid_feature1"), ("grid_feature2", "grid_feature2"),
                      ("grid_points", "grid_points"), ("bump", "bump")):
        if getattr(args, flag, None) is not None:
            kw[key] = getattr(args, flag)
    return cfg.with_options(**kw) if kw else cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help(sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _apply_overrides(load_config(args.config), args, args.command)
        return dispatch(args.command, cfg, args)
    except (ParseError, InvariantViolation, NegativeRate, UnknownCommand, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingCheckpoint as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (NonFiniteGradient, DegenerateHedgeBasis, VanishingVariance, NotPSD, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
