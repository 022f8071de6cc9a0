"""Compiled time loops for the leapfrog solver and its discrete adjoint.

Both loops keep a two-cell zero halo around every wavefield so the
Laplacian needs no bounds checks; the halo also makes the discrete
operator symmetric, which the adjoint relies on.
"""

import numba
import numpy as np

# 4th-order second-derivative weights (-1/12, 4/3, -5/2, 4/3, -1/12)
_C1 = 4.0 / 3.0
_C2 = -1.0 / 12.0
_C0_4 = -5.0  # centre weight summed over both axes
_H = 2  # halo width


@numba.njit(cache=True)
def _laplacian_padded(u, out, order, inv_dx2):
    """``out = L u`` on the interior of the halo-padded array ``u``."""
    nx, ny = out.shape
    if order == 2:
        for i in range(nx):
            ii = i + _H
            for j in range(ny):
                jj = j + _H
                out[i, j] = (u[ii + 1, jj] + u[ii - 1, jj] + u[ii, jj + 1] + u[ii, jj - 1] - 4.0 * u[ii, jj]) * inv_dx2
    else:
        for i in range(nx):
            ii = i + _H
            for j in range(ny):
                jj = j + _H
                out[i, j] = (
                    _C0_4 * u[ii, jj]
                    + _C1 * (u[ii + 1, jj] + u[ii - 1, jj] + u[ii, jj + 1] + u[ii, jj - 1])
                    + _C2 * (u[ii + 2, jj] + u[ii - 2, jj] + u[ii, jj + 2] + u[ii, jj - 2])
                ) * inv_dx2


@numba.njit(cache=True)
def forward_loop(m, a, b, order, inv_dx2, src_ix, src_iy, src_w, wav,
                 rec_ix, rec_iy, rec_w, traces, q_store, u_store):
    """Run ``u^{k+1} = a (2 u^k + m q^k) - b u^{k-1}`` with ``q^k = L u^k + f^k``.

    ``traces[s, r, k]`` receives the bilinear sample of ``u^k``. When
    ``q_store`` is non-empty it is filled with ``q^k`` (shape
    ``(ns, nt-1, nx, ny)``); ``u_store`` likewise with ``u^k`` (``(ns, nt, nx, ny)``).
    Returns ``-1`` on success, otherwise the first step index whose new
    wavefield is non-finite.
    """
    nx, ny = m.shape
    ns = src_ix.shape[0]
    nt = wav.shape[1]
    nr = rec_ix.shape[0]
    store_q = q_store.shape[0] > 0
    store_u = u_store.shape[0] > 0
    for s in range(ns):
        up = np.zeros((nx + 2 * _H, ny + 2 * _H))
        u = np.zeros((nx + 2 * _H, ny + 2 * _H))
        un = np.zeros((nx + 2 * _H, ny + 2 * _H))
        q = np.empty((nx, ny))
        for k in range(nt - 1):
            _laplacian_padded(u, q, order, inv_dx2)
            for p in range(src_ix.shape[1]):
                q[src_ix[s, p], src_iy[s, p]] += src_w[s, p] * wav[s, k]
            acc = 0.0
            for i in range(nx):
                ii = i + _H
                for j in range(ny):
                    jj = j + _H
                    v = a[i, j] * (2.0 * u[ii, jj] + m[i, j] * q[i, j]) - b[i, j] * up[ii, jj]
                    un[ii, jj] = v
                    acc += v * 0.0  # NaN iff some v is inf or NaN
            if acc != acc:
                return k
            if store_q:
                q_store[s, k] = q
            tmp = up
            up = u
            u = un
            un = tmp
            for r in range(nr):
                val = 0.0
                for p in range(rec_ix.shape[1]):
                    val += rec_w[r, p] * u[rec_ix[r, p] + _H, rec_iy[r, p] + _H]
                traces[s, r, k + 1] = val
            if store_u:
                u_store[s, k + 1] = u[_H:nx + _H, _H:ny + _H]
    return -1


@numba.njit(cache=True)
def adjoint_loop(m, a, b, order, inv_dx2, rec_ix, rec_iy, rec_w, resid, q_store, grad):
    """Back-propagate trace residuals through the leapfrog recurrence.

    ``resid[s, r, k]`` is dJ/d(trace sample). On return ``grad[s]`` holds
    ``sum_k mu^{k+1} * q^k`` for shot ``s``; the caller applies the
    remaining chain factors ``a * dm/dc``.
    """
    nx, ny = m.shape
    ns = resid.shape[0]
    nt = resid.shape[2]
    nr = rec_ix.shape[0]
    am = a * m
    for s in range(ns):
        mu1 = np.zeros((nx, ny))  # mu^{j+1}
        mu2 = np.zeros((nx, ny))  # mu^{j+2}
        mu = np.empty((nx, ny))
        tmp = np.zeros((nx + 2 * _H, ny + 2 * _H))
        lap = np.empty((nx, ny))
        g = grad[s]
        for j in range(nt - 1, 0, -1):
            for i in range(nx):
                for jj in range(ny):
                    tmp[i + _H, jj + _H] = am[i, jj] * mu1[i, jj]
            _laplacian_padded(tmp, lap, order, inv_dx2)
            for i in range(nx):
                for jj in range(ny):
                    mu[i, jj] = 2.0 * a[i, jj] * mu1[i, jj] + lap[i, jj] - b[i, jj] * mu2[i, jj]
            for r in range(nr):
                rv = resid[s, r, j]
                if rv != 0.0:
                    for p in range(rec_ix.shape[1]):
                        mu[rec_ix[r, p], rec_iy[r, p]] += rec_w[r, p] * rv
            qk = q_store[s, j - 1]
            for i in range(nx):
                for jj in range(ny):
                    g[i, jj] += mu[i, jj] * qk[i, jj]
            t = mu2
            mu2 = mu1
            mu1 = mu
            mu = t
