"""Pure-numpy fused rollout: loss and hand-derived reverse pass.

Mirrors the compiled kernel operation for operation; used when the
extension is unavailable or ``ELBSDE_BACKEND=python``.
"""

import numpy as np

SQRT_EPS = 1e-12


def _forward(x, W1, b1, W2, b2, W3, b3):
    a1 = x @ W1.T + b1
    h1 = np.where(a1 > 0, a1, np.expm1(np.minimum(a1, 0.0)))
    a2 = h1 @ W2.T + b2
    h2 = np.where(a2 > 0, a2, np.expm1(np.minimum(a2, 0.0)))
    return h2 @ W3.T + b3, (h1, h2)


def _backward(dout, x, cache, W, G):
    """Accumulate parameter gradients of one net into ``G`` (same layout as ``W``)."""
    h1, h2 = cache
    W1, _, W2, _, W3, _ = W
    G[4] += dout.T @ h2
    G[5] += dout.sum(axis=0)
    d2 = (dout @ W3) * np.where(h2 > 0, 1.0, h2 + 1.0)
    G[2] += d2.T @ h1
    G[3] += d2.sum(axis=0)
    d1 = (d2 @ W2) * np.where(h1 > 0, 1.0, h1 + 1.0)
    G[0] += d1.T @ x
    G[1] += d1.sum(axis=0)


def loss_and_grad(params, b, need_grad=True):
    """Mean squared terminal mismatch and its gradient w.r.t. ``params``.

    ``params`` is the 18-array list ``N1 + N2 + N3`` (``W1, b1, W2, b2, W3, b3``
    each); ``b`` a :class:`RolloutInputs`. Returns ``(loss, grads, phi_T)``.
    """
    P1, P2, P3 = params[0:6], params[6:12], params[12:18]
    dt, alpha = b.dt, b.alpha
    N, B = b.n_steps, b.n_paths
    # network inputs do not depend on phi: evaluate every step at once
    out1, cache1 = _forward(b.x1, *P1)
    g_all, c2 = _forward(b.x2.reshape(N * B, -1), *P2)
    o3_all, c3 = _forward(b.x3.reshape(N * B, -1), *P3)
    g_all = g_all.reshape(N, B, 5)
    psi_all = o3_all.reshape(N, B) * b.has_k
    Mg_all = np.einsum("nbij,nbj->nbi", b.M, g_all)
    quad_all = np.einsum("nbi,nbi->nb", g_all, Mg_all)
    gsdw_all = np.einsum("nbi,nbi->nb", g_all, b.sdw)
    comp_all = b.dn - b.klam * dt
    jd_all = np.empty((N, B))
    root_all = np.empty((N, B))
    phi = out1[:, 0]
    for n in range(N):
        psi = psi_all[n]
        jd = psi + b.ben[n] - phi
        root = np.sqrt(quad_all[n] + jd * jd * b.klam[n] + SQRT_EPS)
        comp = comp_all[n]
        phi = (
            phi
            - alpha * root * dt
            - b.ben[n] * b.klam[n] * dt
            + (b.fee[n] + phi * b.r[n]) * dt
            + gsdw_all[n]
            + (psi - phi) * comp
        )
        jd_all[n] = jd
        root_all[n] = root
    resid = b.target - phi
    loss = float(np.mean(resid * resid))
    if not need_grad:
        return loss, None, phi
    grads = [np.zeros_like(p) for p in params]
    dg = np.empty((N, B, 5))
    dpsi = np.empty((N, B))
    a = -2.0 * resid / B
    # scalar adjoint recursion first, then one batched pass through each net
    for n in range(N - 1, -1, -1):
        dvar = -a * dt * alpha * 0.5 / root_all[n]
        jk = dvar * 2.0 * jd_all[n] * b.klam[n]
        dg[n] = a[:, None] * b.sdw[n] + 2.0 * dvar[:, None] * Mg_all[n]
        dpsi[n] = (a * comp_all[n] + jk) * b.has_k[n]
        a = a * (1.0 + b.r[n] * dt - comp_all[n]) - jk
    _backward(dg.reshape(N * B, 5), b.x2.reshape(N * B, -1), c2, P2, grads[6:12])
    _backward(dpsi.reshape(N * B, 1), b.x3.reshape(N * B, -1), c3, P3, grads[12:18])
    _backward(a[:, None], b.x1, cache1, P1, grads[0:6])
    return loss, grads, phi
