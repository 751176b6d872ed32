"""End-to-end training and inference of the joint saliency/classification
model: initial CRF+dictionary training, classifier-guided updates, the
saliency-weighted image classifier, refinement and segmentation."""

import logging
from dataclasses import dataclass, replace
from functools import cached_property
from typing import NamedTuple

import numpy as np

from . import crf as crfmod
from .config import TrainingConfig
from .errors import DegenerateDataError, DimensionError, ManifestError
from .imgfeat import build_patch_grid, extract_descriptors, label_patches
from .pyramid import assign_blocks, block_saliency, concat_normalize, max_pool, saliency_weighted_pool
from .sparsecode import (CategoryDictionary, GlobalDictionary, category_aware_encode,
                         encode, kmeans_init)
from .svm import SvmModel, confidence, one_vs_rest_train, svm_train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DatasetProfile:
    categories: tuple
    multi_label: bool
    max_objects: int

    def __post_init__(self):
        if self.max_objects < 1:
            raise ValueError("max_objects must be >= 1")
        if not self.multi_label and self.max_objects != 1:
            raise ValueError("a single-label profile has max_objects = 1")

    @classmethod
    def from_labels(cls, categories, label_sets):
        most = max((len(s) for s in label_sets), default=1)
        most = max(most, 1)
        return cls(tuple(categories), most > 1, most)


@dataclass(eq=False)
class Sample:
    """One image reduced to what the models consume."""

    name: str
    grid: object
    descriptors: np.ndarray
    labels: frozenset
    patch_labels: np.ndarray            # (N, t) of +-1
    pixel_labels: np.ndarray = None     # (H, W): 0 background, n+1 category n

    def image_label(self, n):
        return 1 if n in self.labels else -1


def make_sample(name, image, mask, labels, n_categories, config=TrainingConfig()):
    """Descriptors and ground truth of one image.

    ``labels`` holds category indices; positives need a mask.
    """
    image = np.asarray(image)
    h, w = image.shape
    grid = build_patch_grid(w, h, config.patch_size, config.stride)
    labels = frozenset(int(n) for n in labels)
    if any(not 0 <= n < n_categories for n in labels):
        raise ManifestError(f"{name}: label outside the category table")
    if labels and mask is None:
        raise ManifestError(f"{name}: positive image without a mask")
    patch_labels = -np.ones((n_categories, grid.count), dtype=np.int8)
    pixel_labels = np.zeros((h, w), dtype=np.int16)
    if mask is not None:
        mask = np.asarray(mask) != 0
        if mask.shape != (h, w):
            raise DimensionError(f"{name}: mask {mask.shape} vs image {(h, w)}")
        if labels:
            pl = label_patches(grid, mask, config.label_frac)
            for n in labels:
                patch_labels[n] = pl
            pixel_labels[mask] = min(labels) + 1
    return Sample(name, grid, extract_descriptors(image, grid), labels, patch_labels,
                  pixel_labels)


@dataclass(frozen=True)
class SaliencyMap:
    values: np.ndarray
    grid: object
    category: str
    weight: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (self.grid.count,):
            raise DimensionError("saliency map does not match its grid")
        if np.any(v < 0) or np.any(v > 1):
            raise ValueError("saliency values must lie in [0, 1]")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True, eq=False)
class JointModel:
    categories: tuple
    dictionaries: tuple
    crfs: tuple
    background: CategoryDictionary
    config: TrainingConfig
    profile: DatasetProfile
    classifiers: tuple = None

    def __post_init__(self):
        N = len(self.categories)
        if len(self.dictionaries) != N or len(self.crfs) != N:
            raise DimensionError("one dictionary and one CRF per category required")
        for d, c in zip(self.dictionaries, self.crfs):
            if c.n_atoms != d.size:
                raise DimensionError(f"CRF {c.category!r} does not match its dictionary")
        if self.classifiers is not None and len(self.classifiers) != N:
            raise DimensionError("one classifier per category required")

    @cached_property
    def global_dict(self):
        return GlobalDictionary.concat([*self.dictionaries, self.background])

    def with_category(self, n, crf, dictionary):
        crfs = list(self.crfs)
        dicts = list(self.dictionaries)
        crfs[n], dicts[n] = crf, dictionary
        return replace(self, crfs=tuple(crfs), dictionaries=tuple(dicts))

    def quantized(self):
        """Copy with every parameter rounded through float32, the storage
        precision of the model file."""
        q = lambda a: np.asarray(a, dtype=np.float32).astype(np.float64)
        dicts = tuple(CategoryDictionary(d.category, q(d.atoms)) for d in self.dictionaries)
        crfs = tuple(crfmod.CrfModel(c.category, q(c.w), float(np.float32(c.gamma)))
                     for c in self.crfs)
        clf = None
        if self.classifiers is not None:
            clf = tuple(SvmModel(q(m.v), float(np.float32(m.b)), float(np.float32(m.cost)))
                        for m in self.classifiers)
        return replace(self, dictionaries=dicts, crfs=crfs,
                       background=CategoryDictionary(self.background.category,
                                                     q(self.background.atoms)),
                       classifiers=clf)


# ---------------------------------------------------------------- splits

def split_dataset(label_sets, n_categories, seed=0, pos_frac=70 / 150, neg_frac=30 / 110):
    """Indices of Train1 and Train2.

    Images are grouped by their lowest category (background images form
    their own group); each group is shuffled with ``seed`` and the leading
    ``round(frac * size)`` go to Train1.
    """
    groups = [[] for _ in range(n_categories + 1)]
    for i, labels in enumerate(label_sets):
        groups[min(labels) if labels else n_categories].append(i)
    for n in range(n_categories):
        if not any(n in s for s in label_sets):
            raise DegenerateDataError(f"category {n} has no positive images")
    rng = np.random.default_rng(seed)
    train1, train2 = [], []
    for g, idx in enumerate(groups):
        idx = np.array(idx, dtype=np.int64)
        rng.shuffle(idx)
        frac = neg_frac if g == n_categories else pos_frac
        m = int(np.floor(frac * idx.size + 0.5))
        train1.extend(idx[:m].tolist())
        train2.extend(idx[m:].tolist())
    return sorted(train1), sorted(train2)


# ---------------------------------------------------------- saliency model

def category_codes(model, n, sample):
    return encode(sample.descriptors, model.dictionaries[n], model.config.lam)


def structured_hinge(model, samples, n):
    """Mean loss-augmented hinge of category n over ``samples``."""
    hs = []
    for s in samples:
        Z = category_codes(model, n, s)
        ygt = s.patch_labels[n]
        yhat = crfmod.loss_augmented_map(Z, model.crfs[n], ygt, s.grid)
        hs.append(crfmod.structured_loss(yhat, ygt, Z, model.crfs[n], s.grid)[1])
    return float(np.mean(hs))


def update_category(model, n, sample):
    """One max-margin step of (w_n, D_n) on one image."""
    cfg = model.config
    D = model.dictionaries[n]
    crf = model.crfs[n]
    Z = encode(sample.descriptors, D, cfg.lam)
    ygt = sample.patch_labels[n]
    yhat = crfmod.loss_augmented_map(Z, crf, ygt, sample.grid)
    if np.array_equal(yhat, ygt):
        return model
    gw = crfmod.grad_w(yhat, ygt, Z)
    gD, skipped = crfmod.grad_D(yhat, ygt, Z, crf, D, sample.descriptors)
    if skipped:
        log.debug("%s: %d patches with singular active sets skipped", sample.name, len(skipped))
    crf, D = crfmod.apply_update(crf, D, gw, gD, cfg.rho0)
    return model.with_category(n, crf, D)


def train_initial(train1, categories, config=TrainingConfig(), profile=None):
    """k-means dictionaries, SVM-initialised CRF weights, then
    ``config.initial_iters`` epochs of per-image updates over Train1."""
    N = len(categories)
    if profile is None:
        profile = DatasetProfile.from_labels(categories, [s.labels for s in train1])
    F = np.vstack([s.descriptors for s in train1])
    P = np.hstack([s.patch_labels for s in train1])
    dicts, crfs = [], []
    for n, name in enumerate(categories):
        pos = F[P[n] == 1]
        D = kmeans_init(pos, config.r, config.seed + n, config.kmeans_iters, name)
        svm = svm_train(encode(F, D, config.lam), P[n], config.svm_c_patch)
        dicts.append(D)
        crfs.append(crfmod.CrfModel(name, np.append(svm.v, svm.b)))
    bg = kmeans_init(F[(P == -1).all(axis=0)], config.r_bg, config.seed + N,
                     config.kmeans_iters, "background")
    model = JointModel(tuple(categories), tuple(dicts), tuple(crfs), bg, config, profile)
    for epoch in range(config.initial_iters):
        for n in range(N):
            for s in train1:
                model = update_category(model, n, s)
        log.info("initial epoch %d done", epoch + 1)
    return model


# ------------------------------------------------------------- image level

class Analysis(NamedTuple):
    codes: list            # per-dictionary dense codes, background last
    saliency: list         # per-category patch saliency
    z: np.ndarray          # category-aware codes over the global dictionary
    layout: object


def analyze(model, sample, with_saliency=True):
    cfg = model.config
    codes = [encode(sample.descriptors, d, cfg.lam)
             for d in (*model.dictionaries, model.background)]
    sal = []
    if with_saliency:
        sal = [crfmod.infer_marginals(codes[n], model.crfs[n], sample.grid).saliency
               for n in range(len(model.categories))]
    z = category_aware_encode(sample.descriptors, model.global_dict, codes, cfg.lam)
    return Analysis(codes, sal, z, assign_blocks(sample.grid))


def unweighted_vector(model, sample, analysis=None):
    a = analysis or analyze(model, sample, with_saliency=False)
    return concat_normalize(max_pool(a.z, a.layout))


def weighted_vector(model, sample, analysis=None):
    a = analysis or analyze(model, sample)
    pooled = max_pool(a.z, a.layout)
    bs = block_saliency(a.saliency, a.layout, model.config.nu)
    return concat_normalize(saliency_weighted_pool(pooled, bs))


def image_label_matrix(samples, n_categories):
    return np.array([[s.image_label(n) for n in range(n_categories)] for s in samples])


def _misclassified(model, conf, samples):
    """(sample index, category) pairs routed to the saliency update."""
    N = len(model.categories)
    L = image_label_matrix(samples, N)
    out = {(i, n) for i, n in zip(*np.nonzero(conf * L <= 0))}
    if model.profile.multi_label:
        for n in range(N):
            pos = np.flatnonzero(L[:, n] == 1)
            if pos.size:
                cut = np.quantile(conf[pos, n], 0.25)
                out.update((int(i), n) for i in pos[conf[pos, n] <= cut])
    return sorted((int(i), int(n)) for i, n in out)


def classifier_guided_update(model, t2a, t2b, config=None):
    """Feedback rounds: an unweighted classifier trained on one half picks
    the images of the other half whose saliency models get updated; the
    halves swap every round."""
    config = config or model.config
    N = len(model.categories)
    halves = (list(t2a), list(t2b))
    for rnd in range(config.feedback_rounds):
        train, val = halves[rnd % 2], halves[1 - rnd % 2]
        if not train or not val:
            break
        X = np.array([unweighted_vector(model, s) for s in train])
        L = image_label_matrix(train, N)
        clfs = []
        for n in range(N):
            try:
                clfs.append(svm_train(X, L[:, n], config.svm_c_image))
            except DegenerateDataError:
                clfs.append(None)
        Xv = np.array([unweighted_vector(model, s) for s in val])
        conf = np.column_stack([confidence(c, Xv) if c is not None else np.zeros(len(val))
                                for c in clfs])
        picks = [(i, n) for i, n in _misclassified(model, conf, val) if clfs[n] is not None]
        for i, n in picks:
            model = update_category(model, n, val[i])
        log.info("feedback round %d: %d updates", rnd + 1, len(picks))
    return model


def train_weighted_classifier(model, samples, config=None):
    """Saliency-weighted one-vs-rest classifiers on every training image."""
    config = config or model.config
    X = np.array([weighted_vector(model, s) for s in samples])
    if not X.any():
        raise DegenerateDataError("all saliency-weighted image vectors are zero")
    L = image_label_matrix(samples, len(model.categories))
    return tuple(one_vs_rest_train(X, L, config.svm_c_image))


def train(samples, categories, config=TrainingConfig()):
    """Full training; returns the float32-quantised joint model."""
    profile = DatasetProfile.from_labels(categories, [s.labels for s in samples])
    i1, i2 = split_dataset([s.labels for s in samples], len(categories), config.seed,
                           config.train1_pos_frac, config.train1_neg_frac)
    t1 = [samples[i] for i in i1]
    t2 = [samples[i] for i in i2]
    model = train_initial(t1, categories, config, profile)
    model = classifier_guided_update(model, t1, t2, config)
    model = replace(model, classifiers=train_weighted_classifier(model, t1 + t2, config))
    return model.quantized()


# -------------------------------------------------------------- inference

def infer_saliency(model, sample, category):
    n = model.categories.index(category) if isinstance(category, str) else int(category)
    Z = category_codes(model, n, sample)
    s = crfmod.infer_marginals(Z, model.crfs[n], sample.grid).saliency
    return SaliencyMap(s, sample.grid, model.categories[n])


def compute_W(conf, profile):
    """Per-category refinement weight from classifier confidences."""
    conf = np.asarray(conf, dtype=np.float64)
    N = conf.size
    W = np.zeros(N)
    order = np.argsort(-conf, kind="stable")     # ties: lower index ranks first
    if not profile.multi_label:
        W[order[0]] = 1.0
        return W
    W[order[:2]] = 1.0
    mid = order[2:profile.max_objects]
    if mid.size:
        c = conf[mid]
        span = c.max() - c.min()
        W[mid] = 1.0 if span == 0 else np.clip((c - c.min()) / span, 0.0, 1.0)
    return W


def refine(smap, W):
    if not 0 <= W <= 1:
        raise ValueError("W must lie in [0, 1]")
    return SaliencyMap(smap.values * W, smap.grid, smap.category, float(W))


class Result(NamedTuple):
    confidences: np.ndarray
    decisions: np.ndarray
    W: np.ndarray
    maps: list             # unrefined SaliencyMap per category
    refined: list


def classify_image(model, sample):
    """Decisions and confidences of the saliency-weighted classifiers."""
    return run_image(model, sample)[:2]


def run_image(model, sample):
    if model.classifiers is None:
        raise ValueError("model has no image classifiers")
    a = analyze(model, sample)
    x = weighted_vector(model, sample, a)
    conf = np.array([confidence(c, x) for c in model.classifiers])
    if model.profile.multi_label:
        decisions = conf > 0
    else:
        decisions = np.zeros(conf.size, dtype=bool)
        decisions[int(np.argmax(conf))] = True
    W = compute_W(conf, model.profile)
    maps = [SaliencyMap(np.clip(s, 0.0, 1.0), sample.grid, name)
            for s, name in zip(a.saliency, model.categories)]
    refined = [refine(m, w) for m, w in zip(maps, W)]
    return Result(conf, decisions, W, maps, refined)


# ------------------------------------------------------------ pixel level

def patch_to_pixel(values, grid):
    """Pixel map: mean over covering patches; uncovered pixels copy the
    patch whose centre is nearest (ties to the lower index)."""
    v = np.asarray(getattr(values, "values", values), dtype=np.float64).reshape(grid.rows, grid.cols)
    H, W, P, s = grid.height, grid.width, grid.patch_size, grid.stride
    acc = np.zeros((H + 1, W + 1))
    cnt = np.zeros((H + 1, W + 1))
    ys = np.arange(grid.rows) * s
    xs = np.arange(grid.cols) * s
    for i, y in enumerate(ys):
        for j, x in enumerate(xs):
            for arr, val in ((acc, v[i, j]), (cnt, 1.0)):
                arr[y, x] += val
                arr[y, x + P] -= val
                arr[y + P, x] -= val
                arr[y + P, x + P] += val
    acc = acc.cumsum(0).cumsum(1)[:H, :W]
    cnt = np.rint(cnt.cumsum(0).cumsum(1)[:H, :W])
    out = np.divide(acc, cnt, out=np.zeros((H, W)), where=cnt > 0)
    if np.any(cnt == 0):
        # doubled coordinates keep centres integral
        ny = _nearest(2 * np.arange(H) + 1, 2 * ys + P)
        nx = _nearest(2 * np.arange(W) + 1, 2 * xs + P)
        near = v[ny[:, None], nx[None, :]]
        out = np.where(cnt > 0, out, near)
    return out


def _nearest(p, centres):
    d = np.abs(p[:, None] - centres[None, :])
    return np.argmin(d, axis=1)


def segment(pixel_maps, threshold=0.5):
    """0 for background, n+1 where category n has the highest saliency
    at or above ``threshold`` (ties to the lower index)."""
    M = np.asarray(pixel_maps, dtype=np.float64)
    best = np.argmax(M, axis=0)
    top = np.take_along_axis(M, best[None], axis=0)[0]
    return np.where(top >= threshold, best + 1, 0).astype(np.int16)
