"""Sparse coding: k-means dictionaries, feature-sign lasso and the
category-aware two-step code on a concatenated dictionary.

Dictionaries are (k, r) arrays whose columns are unit-norm atoms.  The
lasso objective everywhere is the squared-loss form

    ||f - D z||_2^2 + lam * ||z||_1
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ._fskernel import feature_sign_kernel
from .errors import CapacityError, DimensionError

NORM_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class CategoryDictionary:
    category: str
    atoms: np.ndarray

    def __post_init__(self):
        atoms = np.ascontiguousarray(self.atoms, dtype=np.float64)
        if atoms.ndim != 2 or atoms.shape[1] == 0:
            raise DimensionError("dictionary atoms must be a non-empty (k, r) array")
        norms = np.linalg.norm(atoms, axis=0)
        if np.any(np.abs(norms - 1.0) > NORM_TOL):
            raise ValueError(f"dictionary {self.category!r} has non-unit atoms")
        atoms.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)

    @property
    def dim(self):
        return self.atoms.shape[0]

    @property
    def size(self):
        return self.atoms.shape[1]

    @cached_property
    def gram(self):
        g = self.atoms.T @ self.atoms
        g.setflags(write=False)
        return g


@dataclass(frozen=True, eq=False)
class GlobalDictionary:
    """Ordered concatenation [D_1, ..., D_N, D_bg].

    ``owner[m]`` is the position (in concatenation order) of the
    dictionary that atom ``m`` came from; the last position is the
    background dictionary.
    """

    names: tuple
    atoms: np.ndarray
    offsets: tuple
    owner: np.ndarray = field(repr=False)

    @classmethod
    def concat(cls, dictionaries):
        dictionaries = list(dictionaries)
        if not dictionaries:
            raise ValueError("need at least one dictionary")
        k = dictionaries[0].dim
        if any(d.dim != k for d in dictionaries):
            raise DimensionError("dictionaries disagree on feature dimension")
        sizes = [d.size for d in dictionaries]
        offsets = tuple(int(o) for o in np.concatenate([[0], np.cumsum(sizes)]))
        atoms = np.ascontiguousarray(np.hstack([d.atoms for d in dictionaries]))
        atoms.setflags(write=False)
        owner = np.repeat(np.arange(len(sizes)), sizes)
        return cls(tuple(d.category for d in dictionaries), atoms, offsets, owner)

    @property
    def dim(self):
        return self.atoms.shape[0]

    @property
    def size(self):
        return self.atoms.shape[1]

    def block(self, n):
        return slice(self.offsets[n], self.offsets[n + 1])

    @cached_property
    def gram(self):
        g = self.atoms.T @ self.atoms
        g.setflags(write=False)
        return g


@dataclass(frozen=True, eq=False)
class SparseCode:
    support: np.ndarray
    coeffs: np.ndarray
    dict_size: int

    def __post_init__(self):
        support = np.asarray(self.support, dtype=np.int64).reshape(-1)
        coeffs = np.asarray(self.coeffs, dtype=np.float64).reshape(-1)
        if support.shape != coeffs.shape:
            raise DimensionError("support and coeffs differ in length")
        if support.size:
            if np.any(np.diff(support) <= 0):
                raise ValueError("support must be strictly increasing")
            if support[0] < 0 or support[-1] >= self.dict_size:
                raise ValueError("support index outside the dictionary")
            if np.any(coeffs == 0):
                raise ValueError("zero coefficients must not be stored")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def from_dense(cls, z):
        z = np.asarray(z, dtype=np.float64)
        s = np.flatnonzero(z)
        return cls(s, z[s], z.shape[0])

    @classmethod
    def empty(cls, dict_size):
        return cls(np.zeros(0, np.int64), np.zeros(0), dict_size)

    @property
    def sparsity(self):
        return int(self.support.size)

    def dense(self):
        z = np.zeros(self.dict_size)
        z[self.support] = self.coeffs
        return z


def _atoms_and_gram(D, gram=None):
    if hasattr(D, "atoms"):
        return D.atoms, D.gram
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 2 or D.shape[1] == 0:
        raise DimensionError("dictionary must be a non-empty (k, r) array")
    return D, (D.T @ D if gram is None else gram)


def _max_iter(L):
    return 10 * L + 100


def lasso_objective(f, D, z, lam):
    D = getattr(D, "atoms", D)
    z = z.dense() if isinstance(z, SparseCode) else np.asarray(z)
    r = f - D @ z
    return float(r @ r + lam * np.abs(z).sum())


def feature_sign(f, D, lam, gram=None):
    """Lasso code of ``f`` on dictionary ``D`` by feature-sign search.

    ``D`` is a (k, r) array or a dictionary object carrying a cached Gram
    matrix; ``gram`` may supply ``D'D`` for a bare array.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    atoms, G = _atoms_and_gram(D, gram)
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 1 or f.shape[0] != atoms.shape[0]:
        raise DimensionError(f"feature of shape {f.shape} vs atoms of dim {atoms.shape[0]}")
    L = atoms.shape[1]
    z = feature_sign_kernel(G, np.arange(L), atoms.T @ f, float(lam), _max_iter(L))
    return SparseCode.from_dense(z)


def encode(F, D, lam):
    """Dense (t, r) lasso codes for every row of ``F``."""
    if lam <= 0:
        raise ValueError("lam must be positive")
    atoms, G = _atoms_and_gram(D)
    F = np.atleast_2d(np.asarray(F, dtype=np.float64))
    if F.shape[1] != atoms.shape[0]:
        raise DimensionError("feature dimension does not match dictionary")
    L = atoms.shape[1]
    idx = np.arange(L)
    out = np.zeros((F.shape[0], L))
    mi = _max_iter(L)
    for j in range(F.shape[0]):
        if F[j].any():
            out[j] = feature_sign_kernel(G, idx, atoms.T @ F[j], float(lam), mi)
    return out


def code_all_categories(f, dictionaries, lam):
    """Independent lasso codes of ``f`` on each dictionary, in order."""
    k = {d.dim for d in dictionaries}
    if len(k) != 1:
        raise DimensionError("dictionaries disagree on feature dimension")
    return [feature_sign(f, d, lam) for d in dictionaries]


def concat_codes(codes, global_dict):
    """Place per-dictionary codes at their global atom indices (z_con)."""
    if len(codes) != len(global_dict.names):
        raise DimensionError(
            f"{len(codes)} codes for {len(global_dict.names)} dictionaries")
    supports, coeffs = [], []
    for n, code in enumerate(codes):
        blk = global_dict.block(n)
        if code.dict_size != blk.stop - blk.start:
            raise DimensionError(f"code {n} has dict_size {code.dict_size}, "
                                 f"dictionary has {blk.stop - blk.start} atoms")
        supports.append(code.support + blk.start)
        coeffs.append(code.coeffs)
    return SparseCode(np.concatenate(supports), np.concatenate(coeffs), global_dict.size)


def build_sub_dictionary(z_con, global_dict):
    """Atoms of the global dictionary on supp(z_con), and the sub->global map."""
    if z_con.dict_size != global_dict.size:
        raise DimensionError("z_con is not over the global dictionary")
    mapping = z_con.support.copy()
    return global_dict.atoms[:, mapping], mapping


def category_aware_code(f, global_dict, codes, lam):
    """Two-step category-aware code: re-solve the lasso on the atoms that
    the per-category codes selected, then scatter back to global indices."""
    z_con = concat_codes(codes, global_dict)
    if z_con.sparsity == 0:
        return SparseCode.empty(global_dict.size)
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (global_dict.dim,):
        raise DimensionError("feature dimension does not match dictionary")
    sub, mapping = build_sub_dictionary(z_con, global_dict)
    z_sub = feature_sign_kernel(global_dict.gram, mapping, sub.T @ f, float(lam),
                                _max_iter(mapping.size))
    keep = z_sub != 0
    return SparseCode(mapping[keep], z_sub[keep], global_dict.size)


def category_aware_encode(F, global_dict, blocks, lam):
    """Dense (t, r_D) category-aware codes from dense per-dictionary codes.

    ``blocks`` holds one (t, r_n) code array per dictionary of
    ``global_dict``, in concatenation order.
    """
    F = np.atleast_2d(np.asarray(F, dtype=np.float64))
    z_con = np.hstack(blocks)
    if z_con.shape != (F.shape[0], global_dict.size):
        raise DimensionError("code blocks do not match the global dictionary")
    G = global_dict.gram
    out = np.zeros_like(z_con)
    for j in range(F.shape[0]):
        S = np.flatnonzero(z_con[j])
        if S.size == 0:
            continue
        c = global_dict.atoms[:, S].T @ F[j]
        out[j, S] = feature_sign_kernel(G, S, c, float(lam), _max_iter(S.size))
    return out


def category_aware_objective(f, global_dict, z, lam1, lam2, lam3, n_objects=None):
    """Joint objective of global and per-category reconstruction.

    Used only to check the two-step code; the per-category sum runs over
    the first ``n_objects`` dictionaries (all but background by default).
    """
    zd = z.dense() if isinstance(z, SparseCode) else np.asarray(z, dtype=np.float64)
    D = global_dict.atoms
    r = f - D @ zd
    total = r @ r + lam1 * np.abs(zd).sum()
    if n_objects is None:
        n_objects = len(global_dict.names) - 1
    for n in range(n_objects):
        zn = np.zeros_like(zd)
        blk = global_dict.block(n)
        zn[blk] = zd[blk]
        rn = f - D @ zn
        total += lam2 * (rn @ rn + lam3 * np.abs(zn).sum())
    return float(total)


def kmeans_init(descriptors, r, seed=0, iters=30, category=""):
    """Unit-norm k-means centroids (k-means++ seeding, Lloyd iterations).

    All-zero descriptors carry no direction and are ignored.  Empty
    clusters are reseeded with the point farthest from its centroid.
    """
    X = np.asarray(descriptors, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError("descriptors must be a 2-D array")
    X = X[np.linalg.norm(X, axis=1) > 0]
    n = X.shape[0]
    if n < r:
        raise CapacityError(f"{n} nonzero descriptors for {r} clusters")
    rng = np.random.default_rng(seed)
    sq = np.einsum("ij,ij->i", X, X)

    centers = np.empty((r, X.shape[1]))
    first = int(rng.integers(n))
    centers[0] = X[first]
    d2 = np.maximum(sq - 2 * X @ X[first] + sq[first], 0.0)
    for i in range(1, r):
        total = d2.sum()
        if total > 0:
            pick = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            pick = min(pick, n - 1)
        else:
            pick = int(rng.integers(n))
        centers[i] = X[pick]
        d2 = np.minimum(d2, np.maximum(sq - 2 * X @ X[pick] + sq[pick], 0.0))

    assign = None
    for _ in range(iters):
        dist = sq[:, None] - 2 * X @ centers.T + np.einsum("ij,ij->i", centers, centers)[None]
        new = np.argmin(dist, axis=1)
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        counts = np.bincount(assign, minlength=r)
        sums = np.zeros_like(centers)
        np.add.at(sums, assign, X)
        nonempty = counts > 0
        centers[nonempty] = sums[nonempty] / counts[nonempty, None]
        if not nonempty.all():
            resid = dist[np.arange(n), assign].copy()
            for c in np.flatnonzero(~nonempty):
                far = int(np.argmax(resid))
                centers[c] = X[far]
                resid[far] = -np.inf

    norms = np.linalg.norm(centers, axis=1)
    return CategoryDictionary(category, (centers / norms[:, None]).T)
