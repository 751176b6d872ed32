"""Independent reference implementations used only by the tests.

None of these share code with the package: they are slow, direct
restatements of the quantities being checked.
"""

import itertools
import math

import numpy as np


def lasso_cd(f, D, lam, tol=1e-10, max_sweeps=100000):
    """Cyclic coordinate descent on ||f - Dz||^2 + lam ||z||_1."""
    D = np.asarray(D, dtype=np.float64)
    r = D.shape[1]
    z = np.zeros(r)
    res = f - D @ z
    sq = (D ** 2).sum(axis=0)
    for _ in range(max_sweeps):
        biggest = 0.0
        for i in range(r):
            if sq[i] == 0:
                continue
            rho = D[:, i] @ res + sq[i] * z[i]
            new = np.sign(rho) * max(abs(rho) - lam / 2, 0.0) / sq[i]
            delta = new - z[i]
            if delta:
                res -= delta * D[:, i]
                z[i] = new
                biggest = max(biggest, abs(delta))
        if biggest < tol:
            break
    return z


def lasso_objective(f, D, z, lam):
    r = f - D @ z
    return float(r @ r + lam * np.abs(z).sum())


def soft_threshold_scalar(c, lam):
    """Minimiser of (c - z)^2 + lam |z|, the lasso on one unit atom."""
    return np.sign(c) * max(abs(c) - lam / 2, 0.0)


def energy_loop(Y, a, rows, cols, gamma=1.0):
    """Double loop over nodes and over all pairs of neighbours; the terms
    are summed with correct rounding."""
    terms = []
    for j in range(rows * cols):
        terms.append(-Y[j] * a[j])
    for j in range(rows * cols):
        for k in range(j + 1, rows * cols):
            (rj, cj), (rk, ck) = divmod(j, cols), divmod(k, cols)
            if abs(rj - rk) + abs(cj - ck) == 1 and Y[j] != Y[k]:
                terms.append(gamma)
    return math.fsum(terms)


def enumerate_marginals(a, rows, cols, gamma=1.0):
    t = rows * cols
    states = np.array(list(itertools.product((-1, 1), repeat=t)))
    E = np.array([energy_loop(s, a, rows, cols, gamma) for s in states])
    p = np.exp(-(E - E.min()))
    p /= p.sum()
    return (p[:, None] * (states == 1)).sum(axis=0)


def enumerate_loss_augmented(a, y_gt, rows, cols, gamma=1.0):
    """Minimum of E(Y) - Hamming(Y, y_gt) over all labellings."""
    t = rows * cols
    best = np.inf
    for s in itertools.product((-1, 1), repeat=t):
        s = np.array(s)
        best = min(best, energy_loop(s, a, rows, cols, gamma) - np.sum(s != y_gt))
    return best


def confusion_pr(s, gt):
    """Per-threshold loop over every element."""
    P, R = [], []
    for m in range(1, 101):
        tau = m / 100
        tp = fp = fn = 0
        for v, g in zip(s, gt):
            pred = v >= tau
            if pred and g > 0:
                tp += 1
            elif pred:
                fp += 1
            elif g > 0:
                fn += 1
        P.append(1.0 if tp + fp == 0 else tp / (tp + fp))
        R.append(tp / (tp + fn))
    return np.array(P), np.array(R)


def orientation_histogram(patch):
    """Unnormalised 8-bin gradient histogram of a whole patch with the
    same central differences as the descriptor."""
    gy, gx = np.gradient(patch.astype(np.float64))
    h = np.zeros(8)
    for y in range(patch.shape[0]):
        for x in range(patch.shape[1]):
            m = np.hypot(gx[y, x], gy[y, x])
            if m == 0:
                continue
            ang = np.arctan2(gy[y, x], gx[y, x])
            h[int(np.rint(ang / (np.pi / 4))) % 8] += m
    return h


def top_nu_mean(values, nu):
    if len(values) == 0:
        return 0.0
    s = sorted(values, reverse=True)
    m = min(nu, len(s))
    return sum(s[:m]) / m


def central_difference(fun, x, eps):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        xp = x.copy()
        xm = x.copy()
        xp[i] += eps
        xm[i] -= eps
        g[i] = (fun(xp) - fun(xm)) / (2 * eps)
    return g


def pyramid_rects(width, height, levels=3):
    """Level-by-level list of (x0, x1, y0, y1) block rectangles."""
    rects = []
    for lvl in range(levels):
        n = 2 ** lvl
        for by in range(n):
            for bx in range(n):
                rects.append((bx * width / n, (bx + 1) * width / n,
                              by * height / n, (by + 1) * height / n))
    return rects


def pyramid_membership(origins, patch_size, width, height, levels=3):
    """(t, n_blocks) patch-to-block membership by direct geometry on each
    patch centre; blocks own their upper/right edges, the first row and
    column also own coordinate 0."""
    rects = pyramid_rects(width, height, levels)
    out = np.zeros((len(origins), len(rects)), bool)
    for j, (y, x) in enumerate(origins):
        cy, cx = y + patch_size / 2, x + patch_size / 2
        for lvl in range(levels):
            lo = (4 ** lvl - 1) // 3
            cands = [k for k in range(lo, lo + 4 ** lvl)
                     if (rects[k][0] < cx <= rects[k][1] or (rects[k][0] == 0 and cx == 0))
                     and (rects[k][2] < cy <= rects[k][3] or (rects[k][2] == 0 and cy == 0))]
            out[j, cands[0]] = True
    return out
