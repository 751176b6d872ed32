import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import tdsaliency.pipeline as pl
from oracles import enumerate_marginals
from tdsaliency import crf as crfmod
from tdsaliency import synth
from tdsaliency.config import TrainingConfig
from tdsaliency.errors import DegenerateDataError
from tdsaliency.evaluation import pr_curve, precision_at_eer
from tdsaliency.imgfeat import build_patch_grid
from tdsaliency.sparsecode import encode, kmeans_init
from tdsaliency.svm import confidence, one_vs_rest_train, svm_train

SMALL = TrainingConfig().with_overrides(r=8, r_bg=8, initial_iters=2, kmeans_iters=10)
SINGLE = pl.DatasetProfile(("a", "b", "c"), False, 1)


def multi(k):
    return pl.DatasetProfile(tuple("abcdefg"), True, k)


@pytest.fixture(scope="module")
def small_samples():
    train, _ = synth.make_corpus(seed=3, n_train=5, n_test=1, n_background=4, size=128)
    return [pl.make_sample(it.name, it.image, it.mask if it.labels else None, it.labels,
                           2, SMALL) for it in train]


@pytest.fixture(scope="module")
def small_model(small_samples):
    return pl.train_initial(small_samples, synth.CATEGORIES, SMALL)


# ------------------------------------------------------------------ W, refine

def test_W_single_label_argmax():
    assert pl.compute_W([0.9, 0.2, -0.1], SINGLE).tolist() == [1, 0, 0]
    assert pl.compute_W([-3.0, -1.0, -2.0], SINGLE).tolist() == [0, 1, 0]


def test_W_multi_label_ranks():
    conf = np.array([0.01, 5.0, 0.3, -1.0, 0.2, -2.0, 0.1])
    W = pl.compute_W(conf, multi(5))
    assert W[1] == 1 and W[2] == 1                   # ranks 1 and 2
    assert W[5] == 0 and W[0] == 0                   # ranked 7th and 6th
    assert W[4] == 1 and W[3] == 0 and 0 < W[6] < 1  # rescaled over ranks 3..5
    assert pl.compute_W([1e-9, 2e-9], multi(2)).tolist() == [1, 1]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=7), st.integers(1, 7))
def test_W_domain(conf, k):
    W = pl.compute_W(conf, SINGLE if k == 1 else multi(k))
    assert np.all((W >= 0) & (W <= 1))
    if k == 1:
        assert np.count_nonzero(W == 1) == 1 and W.sum() == 1
    else:
        assert np.count_nonzero(W) <= k


def test_refine():
    g = build_patch_grid(80, 64)
    m = pl.SaliencyMap([0.6, 0.2], g, "a")
    assert np.array_equal(pl.refine(m, 1.0).values, m.values)
    assert not pl.refine(m, 0.0).values.any()
    assert pl.refine(m, 0.5).values[0] == pytest.approx(0.3)
    with pytest.raises(ValueError):
        pl.refine(m, 1.5)


# --------------------------------------------------------------- pixel maps

def test_patch_to_pixel_uniform_and_single():
    g = build_patch_grid(130, 100, 64, 16)
    out = pl.patch_to_pixel(np.full(g.count, 0.37), g)
    assert out.shape == (100, 130) and np.allclose(out, 0.37)
    one = build_patch_grid(64, 64)
    assert np.all(pl.patch_to_pixel([0.8], one) == 0.8)


def test_patch_to_pixel_overlap_mean():
    g = build_patch_grid(80, 64, 64, 16)           # two patches side by side
    out = pl.patch_to_pixel([0.2, 0.6], g)
    assert np.allclose(out[:, :16], 0.2)
    assert np.allclose(out[:, 16:64], 0.4)
    assert np.allclose(out[:, 64:], 0.6)


def test_patch_to_pixel_uncovered_border():
    g = build_patch_grid(70, 64, 64, 16)           # 6 columns no patch reaches
    out = pl.patch_to_pixel([0.9], g)
    assert np.all(out == 0.9)


def test_segment():
    z = np.zeros((2, 3, 3))
    assert not pl.segment(z).any()
    m = z.copy()
    m[1] = 0.9
    assert np.all(pl.segment(m) == 2)
    px = np.array([0.4, 0.45]).reshape(2, 1, 1)
    assert pl.segment(px)[0, 0] == 0
    tie = np.full((2, 1, 1), 0.7)
    assert pl.segment(tie)[0, 0] == 1


# ------------------------------------------------------------------ splits

def test_split_half():
    labels = [frozenset({0})] * 10
    a, b = pl.split_dataset(labels, 1, 0, 0.5, 0.5)
    assert len(a) == 5 and len(b) == 5


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(2, 30))
def test_split_deterministic_partition(seed, n):
    rng = np.random.default_rng(seed)
    labels = [frozenset(rng.choice(3, size=rng.integers(0, 3), replace=False).tolist())
              for _ in range(n)]
    labels[0], labels[1] = frozenset({0, 2}), frozenset({1})
    a, b = pl.split_dataset(labels, 3, seed)
    assert (a, b) == pl.split_dataset(labels, 3, seed)
    assert not set(a) & set(b) and sorted(a + b) == list(range(n))


def test_split_missing_category():
    with pytest.raises(DegenerateDataError):
        pl.split_dataset([frozenset({0}), frozenset()], 2)


# ------------------------------------------------------- initial training

def test_zero_iterations_is_initialisation(small_samples):
    cfg = SMALL.with_overrides(initial_iters=0)
    model = pl.train_initial(small_samples, synth.CATEGORIES, cfg)
    F = np.vstack([s.descriptors for s in small_samples])
    P = np.hstack([s.patch_labels for s in small_samples])
    for n in range(2):
        D = kmeans_init(F[P[n] == 1], cfg.r, cfg.seed + n, cfg.kmeans_iters)
        svm = svm_train(encode(F, D, cfg.lam), P[n], cfg.svm_c_patch)
        assert np.array_equal(model.dictionaries[n].atoms, D.atoms)
        assert np.array_equal(model.crfs[n].w, np.append(svm.v, svm.b))
        assert model.crfs[n].gamma == 1.0


def test_training_deterministic(small_samples, small_model):
    again = pl.train_initial(small_samples, synth.CATEGORIES, SMALL)
    for a, b in zip(small_model.dictionaries + (small_model.background,),
                    again.dictionaries + (again.background,)):
        assert np.array_equal(a.atoms, b.atoms)
    for a, b in zip(small_model.crfs, again.crfs):
        assert np.array_equal(a.w, b.w)


@pytest.mark.slow
def test_hinge_decreases_over_epochs(corpus_samples):
    train, _ = corpus_samples
    cfg = TrainingConfig()
    i1, _ = pl.split_dataset([s.labels for s in train], 2, cfg.seed,
                             cfg.train1_pos_frac, cfg.train1_neg_frac)
    t1 = [train[i] for i in i1]
    m0 = pl.train_initial(t1, synth.CATEGORIES, cfg.with_overrides(initial_iters=0))
    m10 = pl.train_initial(t1, synth.CATEGORIES, cfg)
    for n in range(2):
        assert pl.structured_hinge(m10, t1, n) < pl.structured_hinge(m0, t1, n)


# -------------------------------------------------------------- feedback

def test_misclassified_routing():
    model = pl.JointModel.__new__(pl.JointModel)
    object.__setattr__(model, "categories", ("a", "b"))
    object.__setattr__(model, "profile", pl.DatasetProfile(("a", "b"), False, 1))
    samples = [pl.Sample(str(i), None, None, frozenset(l), None)
               for i, l in enumerate([{0}, {1}, set()])]
    conf = np.array([[1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])
    assert pl._misclassified(model, conf, samples) == []
    conf[1, 0] = 0.5                                  # image 1 wrongly claims category a
    assert pl._misclassified(model, conf, samples) == [(1, 0)]


def _same(a, b):
    return (all(np.array_equal(x.atoms, y.atoms) for x, y in zip(a.dictionaries, b.dictionaries))
            and all(np.array_equal(x.w, y.w) for x, y in zip(a.crfs, b.crfs)))


def test_feedback_perfect_classifier_noop(small_samples, small_model, monkeypatch):
    monkeypatch.setattr(pl, "_misclassified", lambda *a: [])
    out = pl.classifier_guided_update(small_model, small_samples[::2], small_samples[1::2])
    assert _same(out, small_model)


def _hard(model, val, n):
    """A validation image whose category-n hinge is positive."""
    return next(k for k, s in enumerate(val) if pl.structured_hinge(model, [s], n) > 0)


def test_feedback_single_misclassification(small_samples, small_model, monkeypatch):
    val = small_samples[1::2]
    i = _hard(small_model, val, 1)
    monkeypatch.setattr(pl, "_misclassified", lambda m, c, s: [(i, 1)])
    cfg = small_model.config.with_overrides(feedback_rounds=1)
    out = pl.classifier_guided_update(small_model, small_samples[::2], val, cfg)
    assert np.array_equal(out.crfs[0].w, small_model.crfs[0].w)
    assert np.array_equal(out.dictionaries[0].atoms, small_model.dictionaries[0].atoms)
    assert not np.array_equal(out.crfs[1].w, small_model.crfs[1].w)


def test_feedback_hard_positive_hinge_decreases(small_samples, small_model, monkeypatch):
    val = small_samples[1::2]
    i = next(k for k, s in enumerate(val)
             if 0 in s.labels and pl.structured_hinge(small_model, [s], 0) > 0)
    monkeypatch.setattr(pl, "_misclassified", lambda m, c, s: [(i, 0)])
    cfg = small_model.config.with_overrides(feedback_rounds=1, rho0=1e-2)
    before = pl.structured_hinge(small_model, [val[i]], 0)
    assert before > 0
    out = pl.classifier_guided_update(small_model, small_samples[::2], val, cfg)
    assert pl.structured_hinge(out, [val[i]], 0) < before


# ------------------------------------------------------ image classifier

def test_weighted_classifier_zero_maps(small_samples, small_model, monkeypatch):
    monkeypatch.setattr(pl, "block_saliency", lambda maps, layout, nu: np.zeros(layout.n_blocks))
    with pytest.raises(DegenerateDataError):
        pl.train_weighted_classifier(small_model, small_samples)


def test_weighted_classifier_unit_weights(small_samples, small_model, monkeypatch):
    monkeypatch.setattr(pl, "block_saliency", lambda maps, layout, nu: np.ones(layout.n_blocks))
    got = pl.train_weighted_classifier(small_model, small_samples)
    X = np.array([pl.unweighted_vector(small_model, s) for s in small_samples])
    want = one_vs_rest_train(X, pl.image_label_matrix(small_samples, 2), SMALL.svm_c_image)
    for a, b in zip(got, want):
        assert np.allclose(a.v, b.v, atol=1e-12) and a.b == pytest.approx(b.b, abs=1e-12)


@pytest.mark.slow
def test_weighted_accuracy_not_below_unweighted(corpus_samples, trained_model):
    train, _ = corpus_samples
    L = pl.image_label_matrix(train, 2)
    Xu = np.array([pl.unweighted_vector(trained_model, s) for s in train])
    Xw = np.array([pl.weighted_vector(trained_model, s) for s in train])
    cu = one_vs_rest_train(Xu, L, trained_model.config.svm_c_image)
    acc = lambda clf, X: np.mean([np.sign(confidence(c, X)) == L[:, n]
                                  for n, c in enumerate(clf)])
    assert acc(trained_model.classifiers, Xw) >= acc(cu, Xu)


# -------------------------------------------------------------- inference

def test_infer_saliency_single_patch(small_model, rng):
    img = rng.integers(0, 256, (64, 64)).astype(np.uint8)
    s = pl.make_sample("one", img, None, (), 2, SMALL)
    smap = pl.infer_saliency(small_model, s, "blobs")
    Z = encode(s.descriptors, small_model.dictionaries[1], SMALL.lam)
    a = crfmod.node_potentials(Z, small_model.crfs[1])
    assert smap.values[0] == pytest.approx(enumerate_marginals(a, 1, 1)[0], abs=1e-12)
    assert smap.values[0] == pytest.approx(1 / (1 + np.exp(-2 * a[0])), abs=1e-12)
    assert np.array_equal(pl.infer_saliency(small_model, s, 1).values, smap.values)


@pytest.mark.slow
def test_run_image_invariants(corpus_samples, trained_model):
    _, test = corpus_samples
    for s in test[::5]:
        r = pl.run_image(trained_model, s)
        assert np.count_nonzero(r.W == 1) == 1 and np.all((r.W >= 0) & (r.W <= 1))
        assert int(np.argmax(r.confidences)) == int(np.argmax(r.W))
        assert np.flatnonzero(r.decisions).tolist() == [int(np.argmax(r.confidences))]
        for m, rm in zip(r.maps, r.refined):
            assert np.all(rm.values <= m.values) and np.all((m.values >= 0) & (m.values <= 1))
        again = pl.run_image(trained_model, s)
        assert np.array_equal(again.confidences, r.confidences)
        c, d = pl.classify_image(trained_model, s)
        assert np.array_equal(c, r.confidences) and np.array_equal(d, r.decisions)


@pytest.mark.slow
def test_oracle_refinement_not_worse(corpus_samples, trained_model):
    _, test = corpus_samples
    for n in range(2):
        raw, orc, gt = [], [], []
        for s in test:
            m = pl.infer_saliency(trained_model, s, n).values
            raw.append(m)
            orc.append(m * (n in s.labels))
            gt.append(s.patch_labels[n])
        gt = np.concatenate(gt)
        e_raw = precision_at_eer(pr_curve(np.concatenate(raw), gt))
        e_orc = precision_at_eer(pr_curve(np.concatenate(orc), gt))
        assert e_orc >= e_raw
