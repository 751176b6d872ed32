"""Grid CRF over patch labels conditioned on sparse codes.

Energy of a labelling Y in {-1,+1}^t on a 4-connected patch grid:

    E(Y) = -sum_j y_j * (w . [z_j; 1]) + gamma * sum_{(j,k)} [y_j != y_k]

Messages are kept as log-ratios log m(+1) - log m(-1), so a two-state
message is one float and a node belief is 2*a_j plus its incoming messages.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DimensionError
from .sparsecode import CategoryDictionary, SparseCode

DAMPING = 0.5
MAX_SWEEPS = 50
MSG_TOL = 1e-5
ENUM_MAX_NODES = 16
SINGULAR_COND = 1e12


@dataclass(frozen=True, eq=False)
class CrfModel:
    category: str
    w: np.ndarray
    gamma: float = 1.0

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64).reshape(-1)
        if w.size < 1 or not np.all(np.isfinite(w)):
            raise ValueError("w must be a finite non-empty vector")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @property
    def n_atoms(self):
        return self.w.size - 1


class Marginals(NamedTuple):
    saliency: np.ndarray
    converged: bool
    sweeps: int


def _shape(grid):
    if hasattr(grid, "rows"):
        return grid.rows, grid.cols
    rows, cols = grid
    return int(rows), int(cols)


def dense_codes(Z, r):
    """(t, r) array from a list of SparseCode or a dense array."""
    if isinstance(Z, np.ndarray):
        if Z.ndim != 2 or Z.shape[1] != r:
            raise DimensionError(f"codes of shape {Z.shape}, model has {r} atoms")
        return Z
    out = np.zeros((len(Z), r))
    for j, z in enumerate(Z):
        if z.dict_size != r:
            raise DimensionError(f"code over {z.dict_size} atoms, model has {r}")
        out[j, z.support] = z.coeffs
    return out


def node_potentials(Z, model):
    """a_j = w . [z_j; 1] for every patch."""
    r = model.n_atoms
    return dense_codes(Z, r) @ model.w[:r] + model.w[r]


def _check(Y, a, grid):
    rows, cols = _shape(grid)
    if a.shape[0] != rows * cols:
        raise DimensionError(f"{a.shape[0]} codes on a {rows}x{cols} grid")
    if Y is not None:
        Y = np.asarray(Y)
        if Y.shape != (rows * cols,):
            raise DimensionError(f"{Y.shape} labels on a {rows}x{cols} grid")
    return rows, cols


def cut_edges(Y, rows, cols):
    Y = np.asarray(Y).reshape(rows, cols)
    return int(np.count_nonzero(Y[:, 1:] != Y[:, :-1]) + np.count_nonzero(Y[1:] != Y[:-1]))


def energy(Y, Z, model, grid):
    a = node_potentials(Z, model)
    rows, cols = _check(Y, a, grid)
    Y = np.asarray(Y, dtype=np.float64)
    # correctly rounded, so the value does not depend on summation order
    return math.fsum([*(-Y * a), model.gamma * cut_edges(Y, rows, cols)])


def hamming(Y, Y_gt):
    return int(np.count_nonzero(np.asarray(Y) != np.asarray(Y_gt)))


def _sum_msg(h, gamma):
    return np.logaddexp(h, -gamma) - np.logaddexp(h - gamma, 0.0)


def _max_msg(h, gamma):
    return np.maximum(h, -gamma) - np.maximum(h - gamma, 0.0)


def _loopy_bp(unary, rows, cols, gamma, update, on_sweep=None):
    """Synchronous BP in log-ratio form; ``unary`` is the (rows, cols) node
    log-ratio.  Cyclic grids are damped; chains are solved undamped."""
    L = np.zeros((rows, cols))   # message arriving from the left neighbour
    R = np.zeros((rows, cols))
    U = np.zeros((rows, cols))
    D = np.zeros((rows, cols))
    cyclic = rows > 1 and cols > 1
    damp = DAMPING if cyclic else 0.0
    # on a chain undamped messages are final after one pass per node
    tol = MSG_TOL if cyclic else 0.0
    limit = MAX_SWEEPS if cyclic else max(MAX_SWEEPS, rows * cols + 1)
    converged = False
    sweeps = 0
    for sweeps in range(1, limit + 1):
        B = unary + L + R + U + D
        nL = np.zeros_like(L)
        nR = np.zeros_like(R)
        nU = np.zeros_like(U)
        nD = np.zeros_like(D)
        nL[:, 1:] = update(B[:, :-1] - R[:, :-1], gamma)
        nR[:, :-1] = update(B[:, 1:] - L[:, 1:], gamma)
        nU[1:] = update(B[:-1] - D[:-1], gamma)
        nD[:-1] = update(B[1:] - U[1:], gamma)
        if damp:
            nL = damp * L + (1 - damp) * nL
            nR = damp * R + (1 - damp) * nR
            nU = damp * U + (1 - damp) * nU
            nD = damp * D + (1 - damp) * nD
        change = max(np.abs(nL - L).max(), np.abs(nR - R).max(),
                     np.abs(nU - U).max(), np.abs(nD - D).max())
        L, R, U, D = nL, nR, nU, nD
        if on_sweep is not None:
            on_sweep(unary + L + R + U + D)
        if change <= tol:
            converged = True
            break
    return unary + L + R + U + D, converged, sweeps


def infer_marginals(Z, model, grid):
    """Sum-product loopy BP; saliency s_j = P(y_j = +1)."""
    a = node_potentials(Z, model)
    rows, cols = _check(None, a, grid)
    belief, converged, sweeps = _loopy_bp(2.0 * a.reshape(rows, cols), rows, cols,
                                          model.gamma, _sum_msg)
    s = 0.5 * (1.0 + np.tanh(0.5 * belief.reshape(-1)))
    return Marginals(s, converged, sweeps)


def _all_labellings(t):
    bits = (np.arange(2 ** t)[:, None] >> np.arange(t)[None, :]) & 1
    return (2 * bits - 1).astype(np.int8)


def _augmented_energies(S, a, Y_gt, rows, cols, gamma):
    grid = S.reshape(-1, rows, cols)
    cuts = ((grid[:, :, 1:] != grid[:, :, :-1]).sum(axis=(1, 2))
            + (grid[:, 1:] != grid[:, :-1]).sum(axis=(1, 2)))
    return -(S @ a) + gamma * cuts - (S != Y_gt).sum(axis=1)


def _icm(Y, unary, rows, cols, gamma):
    """Greedy single-site descent on the min-sum objective (unary log-ratio
    means preference for +1); stops when no flip lowers it."""
    Y = Y.reshape(rows, cols).copy()
    u = unary.reshape(rows, cols)
    for _ in range(rows * cols):
        changed = False
        for i in range(rows):
            for j in range(cols):
                nb = 0.0
                if i > 0:
                    nb += Y[i - 1, j]
                if i < rows - 1:
                    nb += Y[i + 1, j]
                if j > 0:
                    nb += Y[i, j - 1]
                if j < cols - 1:
                    nb += Y[i, j + 1]
                # gain in (score of +1) - (score of -1); pairwise cost is gamma per cut
                pref = u[i, j] + gamma * nb
                best = 1 if pref > 0 else -1
                if best != Y[i, j] and pref != 0:
                    Y[i, j] = best
                    changed = True
        if not changed:
            break
    return Y.reshape(-1)


def loss_augmented_map(Z, model, Y_gt, grid):
    """Most violated labelling: argmin_Y E(Y) - Hamming(Y, Y_gt)."""
    a = node_potentials(Z, model)
    rows, cols = _check(Y_gt, a, grid)
    Y_gt = np.asarray(Y_gt).astype(np.int8)
    t = rows * cols
    if t <= ENUM_MAX_NODES:
        S = _all_labellings(t)
        e = _augmented_energies(S, a, Y_gt, rows, cols, model.gamma)
        return S[int(np.argmin(e))].copy()

    # margin folded into the unary log-ratio: flipping away from y_gt gains 1
    unary = (2.0 * a - Y_gt).reshape(rows, cols)
    gamma = model.gamma
    best = {"Y": Y_gt.copy(), "e": _augmented_energies(Y_gt[None], a, Y_gt, rows, cols, gamma)[0]}

    def keep_best(belief):
        Y = np.where(belief.reshape(-1) > 0, 1, -1).astype(np.int8)
        e = _augmented_energies(Y[None], a, Y_gt, rows, cols, gamma)[0]
        if e < best["e"]:
            best["Y"], best["e"] = Y, e

    belief, _, _ = _loopy_bp(unary, rows, cols, gamma, _max_msg, keep_best)
    Y = _icm(best["Y"], unary, rows, cols, gamma).astype(np.int8)
    e = _augmented_energies(Y[None], a, Y_gt, rows, cols, gamma)[0]
    return Y if e <= best["e"] else best["Y"]


def structured_loss(Y_hat, Y_gt, Z, model, grid):
    """beta = E(Y_hat) - E(Y_gt) and hinge h = Hamming(Y_hat, Y_gt) - beta."""
    beta = energy(Y_hat, Z, model, grid) - energy(Y_gt, Z, model, grid)
    return beta, hamming(Y_hat, Y_gt) - beta


def grad_w(Y_hat, Y_gt, Z):
    """d beta / d w = sum_j (y_gt_j - y_hat_j) [z_j; 1]."""
    Y_hat = np.asarray(Y_hat, dtype=np.float64)
    Y_gt = np.asarray(Y_gt, dtype=np.float64)
    if isinstance(Z, np.ndarray):
        Zd = Z
    else:
        Zd = dense_codes(Z, Z[0].dict_size) if len(Z) else np.zeros((0, 0))
    if Zd.shape[0] != Y_hat.size or Y_gt.shape != Y_hat.shape:
        raise DimensionError("label and code counts differ")
    d = Y_gt - Y_hat
    return np.append(d @ Zd, d.sum())


def grad_D(Y_hat, Y_gt, Z, model, D, features):
    """d beta / d D through the lasso solution of every patch.

    Each z_j is differentiated with its active set and signs held fixed:
    z_A = (D_A'D_A)^-1 (D_A'f - lam/2 sign).  With b = (D_A'D_A)^-1 u and
    u = d beta / d z_A = (y_gt_j - y_hat_j) w_A, the patch contributes
    (f - D_A z_A) b' - D_A b z_A' to the active columns.

    Returns the (k, r) gradient and the indices of patches skipped
    because their active Gram block is singular.
    """
    atoms = D.atoms if isinstance(D, CategoryDictionary) else np.asarray(D, dtype=np.float64)
    k, r = atoms.shape
    if model.n_atoms != r:
        raise DimensionError("model and dictionary disagree on atom count")
    F = np.atleast_2d(np.asarray(features, dtype=np.float64))
    Zd = dense_codes(Z, r)
    d = np.asarray(Y_gt, dtype=np.float64) - np.asarray(Y_hat, dtype=np.float64)
    if F.shape != (Zd.shape[0], k) or d.shape != (Zd.shape[0],):
        raise DimensionError("features, codes and labels disagree")
    grad = np.zeros((k, r))
    skipped = []
    wz = model.w[:r]
    for j in np.flatnonzero(d):
        A = np.flatnonzero(Zd[j])
        if A.size == 0:
            continue
        DA = atoms[:, A]
        GA = DA.T @ DA
        if np.linalg.cond(GA) > SINGULAR_COND:
            skipped.append(int(j))
            continue
        zA = Zd[j, A]
        b = np.linalg.solve(GA, d[j] * wz[A])
        grad[:, A] += np.outer(F[j] - DA @ zA, b) - np.outer(DA @ b, zA)
    return grad, skipped


def apply_update(model, D, gw, gD, rho0=1e-3):
    """Ascent step on beta (descent on the hinge), then unit-norm atoms.

    An atom whose updated column vanishes keeps its previous direction.
    """
    if rho0 <= 0:
        raise ValueError("rho0 must be positive")
    w = model.w + rho0 * np.asarray(gw, dtype=np.float64)
    atoms = D.atoms + rho0 * np.asarray(gD, dtype=np.float64)
    norms = np.linalg.norm(atoms, axis=0)
    dead = norms == 0
    atoms[:, dead] = D.atoms[:, dead]
    norms[dead] = 1.0
    atoms = atoms / norms
    return (CrfModel(model.category, w, model.gamma),
            CategoryDictionary(D.category, atoms))
