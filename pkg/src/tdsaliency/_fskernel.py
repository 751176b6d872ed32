"""Compiled feature-sign search for min ||f - Dz||^2 + lam*||z||_1.

The kernel works on a precomputed Gram matrix ``G = D'D`` and the
correlations ``c = D'f``.  ``idx`` selects the atoms taking part, so a
sub-dictionary is solved without copying its Gram block.  The Cholesky
factor of the active Gram block is extended by one row per activation and
rebuilt only when coefficients leave the active set.
"""

import numpy as np
from numba import njit

ACTIVATE_RTOL = 1e-12
STATIONARY_TOL = 1e-10


@njit(cache=True, nogil=True)
def _factor_append(G, idx, A, na, Lw):
    jn = idx[A[na]]
    for i in range(na):
        s = G[idx[A[i]], jn]
        for p in range(i):
            s -= Lw[i, p] * Lw[na, p]
        Lw[na, i] = s / Lw[i, i]
    s = G[jn, jn]
    for p in range(na):
        s -= Lw[na, p] * Lw[na, p]
    if s <= 1e-10 * max(G[jn, jn], 1e-300):
        return False
    Lw[na, na] = np.sqrt(s)
    return True


@njit(cache=True, nogil=True)
def _chol_solve(Lw, b, n, y, out):
    for i in range(n):
        s = b[i]
        for p in range(i):
            s -= Lw[i, p] * y[p]
        y[i] = s / Lw[i, i]
    for i in range(n - 1, -1, -1):
        s = y[i]
        for p in range(i + 1, n):
            s -= Lw[p, i] * out[p]
        out[i] = s / Lw[i, i]


@njit(cache=True, nogil=True)
def _quad(Lw, v, n):
    q = 0.0
    for j in range(n):
        s = 0.0
        for i in range(j, n):
            s += Lw[i, j] * v[i]
        q += s * s
    return q


@njit(cache=True, nogil=True)
def _objective(Lw, ca, v, n, lam):
    o = _quad(Lw, v, n)
    for a in range(n):
        o += -2.0 * ca[a] * v[a] + lam * abs(v[a])
    return o


@njit(cache=True, nogil=True)
def _factor_rebuild(G, idx, A, na, Lw):
    for a in range(na):
        _factor_append(G, idx, A, a, Lw)


@njit(cache=True, nogil=True)
def _pivot(G, idx, c, A, na, Lw, xa, ca, th, x, free, g, rhs, y, v, bi):
    """Bring in an atom that is a combination of the active ones.

    With d_new = D_A v, moving z_new by t*s and z_A by -t*s*v keeps Dz and
    the gradient fixed while the l1 term falls (the atom violates the
    optimality bound), until the first active coefficient reaches zero;
    that atom leaves and the new one takes its slot.
    """
    if na == 0:
        return False
    jn = idx[bi]
    for a in range(na):
        rhs[a] = G[idx[A[a]], jn]
    _chol_solve(Lw, rhs, na, y, v)
    s = -1.0 if g[bi] > 0 else 1.0
    tmin = np.inf
    amin = -1
    for a in range(na):
        sv = s * v[a]
        if sv * xa[a] > 0.0:
            t = xa[a] / sv
            if t < tmin:
                tmin = t
                amin = a
    if amin < 0:
        return False
    for a in range(na):
        xa[a] -= tmin * s * v[a]
    free[A[amin]] = True
    x[A[amin]] = 0.0
    A[amin] = bi
    xa[amin] = tmin * s
    ca[amin] = c[bi]
    for a in range(na):
        x[A[a]] = xa[a]
        th[a] = 1.0 if xa[a] > 0 else -1.0
    _factor_rebuild(G, idx, A, na, Lw)
    return True


@njit(cache=True, nogil=True)
def feature_sign_kernel(G, idx, c, lam, max_iter):
    L = c.shape[0]
    x = np.zeros(L)
    g = -2.0 * c
    free = np.ones(L, dtype=np.bool_)
    cap = min(L, 64) + 1
    A = np.empty(L, dtype=np.int64)
    Lw = np.empty((cap, cap))
    th = np.empty(cap)
    xa = np.empty(cap)
    ca = np.empty(cap)
    xn = np.empty(cap)
    rhs = np.empty(cap)
    y = np.empty(cap)
    best = np.empty(cap)
    v = np.empty(cap)
    na = 0
    for _ in range(max_iter):
        # activate the zero coefficient with the steepest violation
        bi = -1
        bv = lam * (1.0 + ACTIVATE_RTOL)
        for i in range(L):
            if free[i]:
                ag = abs(g[i])
                if ag > bv:
                    bv = ag
                    bi = i
        if bi < 0:
            break
        if na + 1 > cap:
            cap2 = 2 * cap
            Lw2 = np.empty((cap2, cap2))
            Lw2[:na, :na] = Lw[:na, :na]
            Lw = Lw2
            th2 = np.empty(cap2)
            th2[:na] = th[:na]
            th = th2
            xa2 = np.empty(cap2)
            xa2[:na] = xa[:na]
            xa = xa2
            ca2 = np.empty(cap2)
            ca2[:na] = ca[:na]
            ca = ca2
            xn = np.empty(cap2)
            rhs = np.empty(cap2)
            y = np.empty(cap2)
            best = np.empty(cap2)
            v = np.empty(cap2)
            cap = cap2
        A[na] = bi
        free[bi] = False
        if _factor_append(G, idx, A, na, Lw):
            th[na] = -1.0 if g[bi] > 0 else 1.0
            xa[na] = 0.0
            ca[na] = c[bi]
            na += 1
        elif not _pivot(G, idx, c, A, na, Lw, xa, ca, th, x, free, g, rhs, y, v, bi):
            # zero or numerically degenerate atom: never activate
            _factor_rebuild(G, idx, A, na, Lw)
            continue
        for _inner in range(max_iter):
            for a in range(na):
                rhs[a] = ca[a] - 0.5 * lam * th[a]
            _chol_solve(Lw, rhs, na, y, xn)
            flips = False
            for a in range(na):
                best[a] = xn[a]
                if xn[a] * th[a] <= 0.0:
                    flips = True
            if flips:
                # discrete line search over the zero crossings
                bo = _objective(Lw, ca, xn, na, lam)
                for f in range(na):
                    if xn[f] * th[f] <= 0.0 and xa[f] != 0.0:
                        t = xa[f] / (xa[f] - xn[f])
                        for a in range(na):
                            v[a] = xa[a] + t * (xn[a] - xa[a])
                        v[f] = 0.0
                        o = _objective(Lw, ca, v, na, lam)
                        if o < bo:
                            bo = o
                            for a in range(na):
                                best[a] = v[a]
            for a in range(na):
                d = best[a] - xa[a]
                if d != 0.0:
                    ja = idx[A[a]]
                    for i in range(L):
                        g[i] += 2.0 * d * G[ja, idx[i]]
                x[A[a]] = best[a]
            m = 0
            removed = False
            for a in range(na):
                if best[a] != 0.0:
                    A[m] = A[a]
                    xa[m] = best[a]
                    ca[m] = ca[a]
                    th[m] = 1.0 if best[a] > 0 else -1.0
                    m += 1
                else:
                    free[A[a]] = True
                    removed = True
            na = m
            if removed:
                _factor_rebuild(G, idx, A, na, Lw)
            done = True
            for a in range(na):
                if abs(g[A[a]] + lam * th[a]) > STATIONARY_TOL:
                    done = False
                    break
            if done:
                break
    return x
