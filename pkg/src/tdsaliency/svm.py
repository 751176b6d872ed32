"""Linear binary SVM trained by dual coordinate descent.

Primal: ||v||^2 + b^2 + C * sum_i max(0, 1 - l_i (v.x_i + b)); the bias is
the weight of a constant feature 1 appended to every example.  Dividing by
two gives the usual 1/2||w||^2 form with box constraint U = C/2 on the dual.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import DegenerateDataError, DimensionError

MAX_EPOCHS = 1000
REL_TOL = 1e-8
PG_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class SvmModel:
    v: np.ndarray
    b: float
    cost: float

    def __post_init__(self):
        v = np.array(self.v, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(v)) or not np.isfinite(self.b):
            raise ValueError("SVM weights must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "b", float(self.b))


@njit(cache=True, nogil=True)
def _dual_cd(X, l, U, max_epochs, rel_tol, pg_tol):
    n, d = X.shape
    alpha = np.zeros(n)
    w = np.zeros(d)
    qd = np.empty(n)
    for i in range(n):
        qd[i] = X[i] @ X[i]
    prev = 0.0
    epochs = 0
    for epochs in range(1, max_epochs + 1):
        worst = 0.0
        for i in range(n):
            if qd[i] == 0.0:
                continue
            g = l[i] * (w @ X[i]) - 1.0
            if alpha[i] == 0.0:
                pg = min(g, 0.0)
            elif alpha[i] == U:
                pg = max(g, 0.0)
            else:
                pg = g
            worst = max(worst, abs(pg))
            if pg != 0.0:
                old = alpha[i]
                alpha[i] = min(max(old - g / qd[i], 0.0), U)
                step = (alpha[i] - old) * l[i]
                for p in range(d):
                    w[p] += step * X[i, p]
        dual = 0.5 * (w @ w) - alpha.sum()
        if abs(dual - prev) <= rel_tol * max(abs(dual), 1e-300) and worst < pg_tol:
            break
        prev = dual
    return alpha, w, epochs


def _augment(X):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return np.hstack([X, np.ones((X.shape[0], 1))])


def dual_coordinate_descent(X, labels, C):
    """Dual variables alpha (box [0, C/2]) and the augmented weight."""
    Xa = np.ascontiguousarray(_augment(X))
    l = np.asarray(labels, dtype=np.float64)
    alpha, w, _ = _dual_cd(Xa, l, C / 2.0, MAX_EPOCHS, REL_TOL, PG_TOL)
    return alpha, w


def svm_train(X, labels, C=1.0):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    labels = np.asarray(labels).reshape(-1)
    if labels.shape[0] != X.shape[0]:
        raise DimensionError("one label per example required")
    if not np.all(np.isin(labels, (-1, 1))):
        raise ValueError("labels must be +1 or -1")
    if np.all(labels == labels[0]):
        raise DegenerateDataError("SVM training needs both labels")
    if C <= 0:
        raise ValueError("C must be positive")
    _, w = dual_coordinate_descent(X, labels, C)
    return SvmModel(w[:-1], w[-1], C)


def confidence(model, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.v.size:
        raise DimensionError(f"feature of length {x.shape[-1]}, model has {model.v.size}")
    return x @ model.v + model.b


def objective(model, X, labels):
    margins = np.asarray(labels) * confidence(model, X)
    return float(model.v @ model.v + model.b ** 2
                 + model.cost * np.maximum(0.0, 1.0 - margins).sum())


def one_vs_rest_train(X, labels, C=10.0):
    """One binary model per column of the (n, N) +-1 label matrix."""
    labels = np.asarray(labels)
    if labels.ndim == 1:
        labels = labels[:, None]
    return [svm_train(X, labels[:, n], C) for n in range(labels.shape[1])]
