"""Plain-text checkpoints that round-trip float64 parameters exactly.

Layout::

    ELBSDE-CKPT v1
    meta <key> <value>            (any number)
    normalizer <d>
    <d lower bounds>
    <d upper bounds>
    network <name> <n_dims> <dims...>
    <W rows, one line each, then the bias line, per layer>
    end
"""

from __future__ import annotations

import numpy as np

from ..errors import ParseError
from .mlp import MLP, Normalizer

HEADER = "ELBSDE-CKPT v1"


def _fmt(values) -> str:
    return " ".join(f"{v:.17g}" for v in np.ravel(values))


def write_checkpoint(path, networks: dict, normalizer: Normalizer | None = None, meta: dict | None = None):
    lines = [HEADER]
    for key, value in (meta or {}).items():
        lines.append(f"meta {key} {value}")
    if normalizer is not None:
        lines.append(f"normalizer {normalizer.lo.size}")
        lines.append(_fmt(normalizer.lo))
        lines.append(_fmt(normalizer.hi))
    for name, net in networks.items():
        lines.append(f"network {name} {len(net.dims)} " + " ".join(str(d) for d in net.dims))
        for W, b in zip(net.weights, net.biases):
            lines.extend(_fmt(row) for row in W)
            lines.append(_fmt(b))
    lines.append("end")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_checkpoint(path):
    """Return ``(networks, normalizer, meta)``."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != HEADER:
        raise ParseError(f"missing header {HEADER!r}", 1)
    pos = 1
    networks, meta, normalizer = {}, {}, None

    def floats(i, n):
        try:
            vals = [float(tok) for tok in lines[i].split()]
        except (ValueError, IndexError) as exc:
            raise ParseError(str(exc), i + 1) from None
        if len(vals) != n:
            raise ParseError(f"expected {n} values, got {len(vals)}", i + 1)
        return np.array(vals)

    while pos < len(lines):
        toks = lines[pos].split()
        if not toks:
            pos += 1
            continue
        kind = toks[0]
        if kind == "end":
            return networks, normalizer, meta
        if kind == "meta":
            meta[toks[1]] = " ".join(toks[2:])
            pos += 1
        elif kind == "normalizer":
            d = int(toks[1])
            normalizer = Normalizer(floats(pos + 1, d), floats(pos + 2, d))
            pos += 3
        elif kind == "network":
            name, n_dims = toks[1], int(toks[2])
            dims = [int(t) for t in toks[3:3 + n_dims]]
            pos += 1
            weights, biases = [], []
            for i, o in zip(dims[:-1], dims[1:]):
                weights.append(np.stack([floats(pos + r, i) for r in range(o)]))
                pos += o
                biases.append(floats(pos, o))
                pos += 1
            networks[name] = MLP(dims, weights, biases)
        else:
            raise ParseError(f"unknown record {kind!r}", pos + 1)
    raise ParseError("missing 'end' record", len(lines))
