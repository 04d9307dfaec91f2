# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled fused rollout: loss and reverse pass without Python overhead.

Same arithmetic as ``_kernel_py``; dense products go through BLAS ``dgemm``.
"""

import numpy as np

from libc.math cimport exp, expm1, sqrt
from scipy.linalg.cython_blas cimport dgemm

cdef double SQRT_EPS = 1e-12


cdef struct Net:
    int din
    int h1
    int h2
    int dout
    double* W1
    double* b1
    double* W2
    double* b2
    double* W3
    double* b3


cdef inline void mm(bint ta, bint tb, int m, int n, int k, double alpha,
                    double* A, double* B, double beta, double* C) noexcept nogil:
    # row-major C (m x n) = alpha * op(A) @ op(B) + beta * C
    cdef char ca = b'T' if ta else b'N'
    cdef char cb = b'T' if tb else b'N'
    cdef int lda = m if ta else k
    cdef int ldb = k if tb else n
    dgemm(&cb, &ca, &n, &m, &k, &alpha, B, &ldb, A, &lda, &beta, C, &n)


cdef inline void bias_elu(double* h, double* b, int rows, int cols) noexcept nogil:
    cdef int i, j
    cdef double a
    for i in range(rows):
        for j in range(cols):
            a = h[i * cols + j] + b[j]
            h[i * cols + j] = a if a > 0 else exp(a) - 1.0


cdef inline void add_bias(double* h, double* b, int rows, int cols) noexcept nogil:
    cdef int i, j
    for i in range(rows):
        for j in range(cols):
            h[i * cols + j] += b[j]


cdef inline void colsum_into(double* g, double* d, int rows, int cols) noexcept nogil:
    cdef int i, j
    for i in range(rows):
        for j in range(cols):
            g[j] += d[i * cols + j]


cdef inline void elu_grad(double* d, double* h, int n) noexcept nogil:
    cdef int i
    for i in range(n):
        if h[i] <= 0:
            d[i] *= h[i] + 1.0


cdef void net_fwd(Net* w, int B, double* x, double* h1, double* h2, double* out) noexcept nogil:
    mm(0, 1, B, w.h1, w.din, 1.0, x, w.W1, 0.0, h1)
    bias_elu(h1, w.b1, B, w.h1)
    mm(0, 1, B, w.h2, w.h1, 1.0, h1, w.W2, 0.0, h2)
    bias_elu(h2, w.b2, B, w.h2)
    mm(0, 1, B, w.dout, w.h2, 1.0, h2, w.W3, 0.0, out)
    add_bias(out, w.b3, B, w.dout)


cdef void net_bwd(Net* w, Net* g, int B, double* x, double* h1, double* h2, double* dout,
                  double* d2, double* d1) noexcept nogil:
    mm(1, 0, w.dout, w.h2, B, 1.0, dout, h2, 1.0, g.W3)
    colsum_into(g.b3, dout, B, w.dout)
    mm(0, 0, B, w.h2, w.dout, 1.0, dout, w.W3, 0.0, d2)
    elu_grad(d2, h2, B * w.h2)
    mm(1, 0, w.h2, w.h1, B, 1.0, d2, h1, 1.0, g.W2)
    colsum_into(g.b2, d2, B, w.h2)
    mm(0, 0, B, w.h1, w.h2, 1.0, d2, w.W2, 0.0, d1)
    elu_grad(d1, h1, B * w.h1)
    mm(1, 0, w.h1, w.din, B, 1.0, d1, x, 1.0, g.W1)
    colsum_into(g.b1, d1, B, w.h1)


cdef Net make_net(list arrs):
    cdef Net n
    cdef double[:, ::1] W1 = arrs[0]
    cdef double[::1] b1 = arrs[1]
    cdef double[:, ::1] W2 = arrs[2]
    cdef double[::1] b2 = arrs[3]
    cdef double[:, ::1] W3 = arrs[4]
    cdef double[::1] b3 = arrs[5]
    n.din = W1.shape[1]
    n.h1 = W1.shape[0]
    n.h2 = W2.shape[0]
    n.dout = W3.shape[0]
    n.W1 = &W1[0, 0]
    n.b1 = &b1[0]
    n.W2 = &W2[0, 0]
    n.b2 = &b2[0]
    n.W3 = &W3[0, 0]
    n.b3 = &b3[0]
    return n


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def loss_and_grad(params, b, need_grad=True):
    """See ``_kernel_py.loss_and_grad``; identical contract."""
    cdef list P = [_c(p) for p in params]
    cdef list G = [np.zeros_like(p) for p in P]
    cdef Net n1 = make_net(P[0:6])
    cdef Net n2 = make_net(P[6:12])
    cdef Net n3 = make_net(P[12:18])
    cdef Net g1 = make_net(G[0:6])
    cdef Net g2 = make_net(G[6:12])
    cdef Net g3 = make_net(G[12:18])
    if n2.dout != 5 or n1.dout != 1 or n3.dout != 1:
        raise ValueError("unexpected network output sizes")

    cdef double[:, ::1] x1 = _c(b.x1)
    cdef double[:, :, ::1] x2 = _c(b.x2)
    cdef double[:, :, ::1] x3 = _c(b.x3)
    cdef double[:, ::1] has_k = _c(b.has_k)
    cdef double[:, :, ::1] sdw = _c(b.sdw)
    cdef double[:, :, :, ::1] M = _c(b.M)
    cdef double[:, ::1] r = _c(b.r)
    cdef double[:, ::1] klam = _c(b.klam)
    cdef double[:, ::1] dn = _c(b.dn)
    cdef double[:, ::1] ben = _c(b.ben)
    cdef double[:, ::1] fee = _c(b.fee)
    cdef double[::1] target = _c(b.target)
    cdef double dt = b.dt
    cdef double alpha = b.alpha
    cdef int N = x2.shape[0]
    cdef int B = x2.shape[1]
    cdef int H = max(n2.h1, n2.h2, n3.h1, n3.h2, n1.h1, n1.h2)

    cdef int NB = N * B
    cdef double[:, ::1] h1_1 = np.empty((B, n1.h1))
    cdef double[:, ::1] h2_1 = np.empty((B, n1.h2))
    cdef double[:, ::1] o1 = np.empty((B, 1))
    cdef double[:, :, ::1] h1_2 = np.empty((N, B, n2.h1))
    cdef double[:, :, ::1] h2_2 = np.empty((N, B, n2.h2))
    cdef double[:, :, ::1] o2 = np.empty((N, B, 5))
    cdef double[:, :, ::1] h1_3 = np.empty((N, B, n3.h1))
    cdef double[:, :, ::1] h2_3 = np.empty((N, B, n3.h2))
    cdef double[:, :, ::1] o3 = np.empty((N, B, 1))
    cdef double[:, :, ::1] Mg = np.empty((N, B, 5))
    cdef double[:, ::1] jd = np.empty((N, B))
    cdef double[:, ::1] root = np.empty((N, B))
    cdef double[:, ::1] comp = np.empty((N, B))
    cdef double[::1] phi = np.empty(B)
    cdef double[::1] a = np.empty(B)
    cdef double[:, :, ::1] dg = np.empty((N, B, 5))
    cdef double[:, :, ::1] dpsi = np.empty((N, B, 1))
    cdef double[:, ::1] work2 = np.empty((max(NB, B), H))
    cdef double[:, ::1] work1 = np.empty((max(NB, B), H))
    cdef double[:, ::1] da = np.empty((B, 1))

    cdef int n, i, j, l
    cdef double psi, quad, var, s, gsdw, loss = 0.0, resid, dvar, cmp

    with nogil:
        # network inputs do not depend on phi: evaluate every step at once
        net_fwd(&n1, B, &x1[0, 0], &h1_1[0, 0], &h2_1[0, 0], &o1[0, 0])
        net_fwd(&n2, NB, &x2[0, 0, 0], &h1_2[0, 0, 0], &h2_2[0, 0, 0], &o2[0, 0, 0])
        net_fwd(&n3, NB, &x3[0, 0, 0], &h1_3[0, 0, 0], &h2_3[0, 0, 0], &o3[0, 0, 0])
        for i in range(B):
            phi[i] = o1[i, 0]
        for n in range(N):
            for i in range(B):
                psi = o3[n, i, 0] * has_k[n, i]
                quad = 0.0
                gsdw = 0.0
                for j in range(5):
                    s = 0.0
                    for l in range(5):
                        s = s + M[n, i, j, l] * o2[n, i, l]
                    Mg[n, i, j] = s
                    quad = quad + o2[n, i, j] * s
                    gsdw = gsdw + o2[n, i, j] * sdw[n, i, j]
                jd[n, i] = psi + ben[n, i] - phi[i]
                var = quad + jd[n, i] * jd[n, i] * klam[n, i]
                root[n, i] = sqrt(var + SQRT_EPS)
                cmp = dn[n, i] - klam[n, i] * dt
                comp[n, i] = cmp
                phi[i] = (phi[i] - alpha * root[n, i] * dt - ben[n, i] * klam[n, i] * dt
                          + (fee[n, i] + phi[i] * r[n, i]) * dt + gsdw + (psi - phi[i]) * cmp)
        for i in range(B):
            resid = target[i] - phi[i]
            loss = loss + resid * resid
            a[i] = -2.0 * resid / B
        loss = loss / B

    if not need_grad:
        return loss, None, np.asarray(phi).copy()

    with nogil:
        # scalar adjoint recursion first, then one batched pass through each net
        for n in range(N - 1, -1, -1):
            for i in range(B):
                dvar = -a[i] * dt * alpha * 0.5 / root[n, i]
                for j in range(5):
                    dg[n, i, j] = a[i] * sdw[n, i, j] + 2.0 * dvar * Mg[n, i, j]
                dpsi[n, i, 0] = (a[i] * comp[n, i] + dvar * 2.0 * jd[n, i] * klam[n, i]) * has_k[n, i]
                a[i] = a[i] * (1.0 + r[n, i] * dt - comp[n, i]) - dvar * 2.0 * jd[n, i] * klam[n, i]
        net_bwd(&n2, &g2, NB, &x2[0, 0, 0], &h1_2[0, 0, 0], &h2_2[0, 0, 0], &dg[0, 0, 0],
                &work2[0, 0], &work1[0, 0])
        net_bwd(&n3, &g3, NB, &x3[0, 0, 0], &h1_3[0, 0, 0], &h2_3[0, 0, 0], &dpsi[0, 0, 0],
                &work2[0, 0], &work1[0, 0])
        for i in range(B):
            da[i, 0] = a[i]
        net_bwd(&n1, &g1, B, &x1[0, 0], &h1_1[0, 0], &h2_1[0, 0], &da[0, 0], &work2[0, 0], &work1[0, 0])

    return loss, G, np.asarray(phi).copy()
