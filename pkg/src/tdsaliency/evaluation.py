"""Saliency and segmentation metrics, and the coding-speed benchmark."""

import time
from typing import NamedTuple

import numpy as np

from ._fskernel import feature_sign_kernel
from .errors import DimensionError, UndefinedRecallError

N_THRESHOLDS = 100


class PrCurve(NamedTuple):
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    predicted: np.ndarray     # TP + FP per threshold


def pr_curve(saliency, gt):
    """Precision/recall of ``saliency >= m/100`` for m = 1..100.

    Precision is 1 where nothing is predicted positive.
    """
    s = np.asarray(saliency, dtype=np.float64).reshape(-1)
    pos = np.asarray(gt).reshape(-1) > 0
    if s.shape != pos.shape:
        raise DimensionError("saliency and ground truth differ in length")
    n_pos = int(pos.sum())
    if n_pos == 0:
        raise UndefinedRecallError("ground truth has no positives")
    tau = np.arange(1, N_THRESHOLDS + 1) / N_THRESHOLDS
    # count of values >= tau via sorted search
    sp = np.sort(s[pos])
    sa = np.sort(s)
    tp = sp.size - np.searchsorted(sp, tau, side="left")
    pp = sa.size - np.searchsorted(sa, tau, side="left")
    precision = np.divide(tp, pp, out=np.ones(tau.size), where=pp > 0)
    return PrCurve(tau, precision, tp / n_pos, pp)


def precision_at_eer(curve):
    """Precision where precision equals recall.

    Only thresholds that predict something take part (above the largest
    score precision is 1 by convention and carries no information).  The
    first sign change of precision - recall is linearly interpolated; with
    no crossing, the sample with the smallest |precision - recall| wins.
    """
    keep = curve.predicted > 0
    if not keep.any():
        keep = np.ones_like(keep)
    P, R = curve.precision[keep], curve.recall[keep]
    d = P - R
    zero = np.flatnonzero(d == 0)
    change = np.flatnonzero(np.sign(d[:-1]) * np.sign(d[1:]) < 0)
    first_zero = zero[0] if zero.size else np.inf
    first_change = change[0] if change.size else np.inf
    if first_zero <= first_change and zero.size:
        return float(P[zero[0]])
    if change.size:
        m = change[0]
        u = d[m] / (d[m] - d[m + 1])
        return float(P[m] + u * (P[m + 1] - P[m]))
    return float(P[np.argmin(np.abs(d))])


def iou(pred, gt):
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise DimensionError("masks differ in shape")
    tp = np.count_nonzero(pred & gt)
    fp = np.count_nonzero(pred & ~gt)
    fn = np.count_nonzero(~pred & gt)
    return 1.0 if tp + fp + fn == 0 else tp / (tp + fp + fn)


def pixel_accuracy(pred, gt, n_labels=None):
    """Per-label fraction of ground-truth pixels predicted correctly, and
    the mean over labels present in ``gt`` (label 0 is background)."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise DimensionError("label maps differ in shape")
    if n_labels is None:
        n_labels = int(max(pred.max(initial=0), gt.max(initial=0))) + 1
    total = np.bincount(gt.ravel(), minlength=n_labels).astype(np.float64)
    hit = np.bincount(gt[pred == gt].ravel(), minlength=n_labels).astype(np.float64)
    acc = np.divide(hit, total, out=np.full(n_labels, np.nan), where=total > 0)
    return acc, float(np.nanmean(acc)) if np.any(total > 0) else float("nan")


# --------------------------------------------------------------- benchmark

def sift_like(rng, k, n):
    """Unit-norm, sparse, non-negative vectors clipped like descriptors."""
    v = np.abs(rng.normal(size=(k, n))) * (rng.random((k, n)) < 0.3)
    v[0, np.linalg.norm(v, axis=0) == 0] = 1.0
    v /= np.linalg.norm(v, axis=0)
    v = np.minimum(v, 0.2)
    return v / np.linalg.norm(v, axis=0)


class BenchReport(NamedTuple):
    global_us: float          # median per-feature time, direct solve
    category_aware_us: float  # median per-feature time, max over categories + sub solve
    ratio: float
    T_f: float                # mean sparsity of the direct code
    c_n: float                # mean per-category sparsity
    s_sub: float              # mean size of the sub-dictionary
    objective_gap: float      # mean objective(two-step) - objective(direct)


def coding_benchmark(N=3, r=64, k=128, trials=1000, seed=0, lam=0.15, repeats=3):
    """Time direct lasso coding on the (N+1)r-atom concatenation against the
    two-step category-aware path with per-category solves run in parallel
    (timed as their maximum).  Each feature is timed ``repeats`` times and
    the fastest run kept."""
    rng = np.random.default_rng(seed)
    Ds = [sift_like(rng, k, r) for _ in range(N + 1)]
    D = np.hstack(Ds)
    G = D.T @ D
    Gs = [d.T @ d for d in Ds]
    full = np.arange(D.shape[1])
    part = np.arange(r)
    mi_full, mi_part = 10 * full.size + 100, 10 * r + 100
    feature_sign_kernel(G, full, D.T @ D[:, 0], lam, mi_full)     # compile
    clock = time.perf_counter
    tg, tc, Tf, cn, ss, gap = [], [], [], [], [], []
    for f in sift_like(rng, k, trials).T:
        best_g = best_c = np.inf
        for _ in range(repeats):
            t0 = clock()
            z = feature_sign_kernel(G, full, D.T @ f, lam, mi_full)
            best_g = min(best_g, clock() - t0)

            per = []
            codes = []
            corr = []
            for d, g in zip(Ds, Gs):
                t0 = clock()
                c = d.T @ f
                codes.append(feature_sign_kernel(g, part, c, lam, mi_part))
                per.append(clock() - t0)
                corr.append(c)
            t0 = clock()
            # the per-category correlations already hold D_sub' f
            S = np.flatnonzero(np.concatenate(codes))
            zs = (feature_sign_kernel(G, S, np.concatenate(corr)[S], lam, 10 * S.size + 100)
                  if S.size else np.zeros(0))
            best_c = min(best_c, max(per) + clock() - t0)
        tg.append(best_g)
        tc.append(best_c)
        Tf.append(np.count_nonzero(z))
        cn.append(np.mean([np.count_nonzero(c) for c in codes]))
        ss.append(S.size)
        za = np.zeros(D.shape[1])
        za[S] = zs
        obj = lambda x: float(np.sum((f - D @ x) ** 2) + lam * np.abs(x).sum())
        gap.append(obj(za) - obj(z))
    g_us, c_us = np.median(tg) * 1e6, np.median(tc) * 1e6
    return BenchReport(g_us, c_us, g_us / c_us, float(np.mean(Tf)), float(np.mean(cn)),
                       float(np.mean(ss)), float(np.mean(gap)))
