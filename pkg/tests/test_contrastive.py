import numpy as np
import pytest

from nlab.contrastive import (AugmentRecipe, EmbeddingBatch, augment,
                              augment_batch, classification_recipe,
                              contrastive_recipe, jitter_batch, make_views,
                              nt_xent, sup_con, view_rng, weighted_sup_con)
from nlab.errors import InvalidArgument
from nlab.gradcheck import gradient_check


def identity_recipe():
    return AugmentRecipe(crop_padding=0, flip_prob=0.0)


def random_batch(rng, b=4, dim=6):
    return EmbeddingBatch.from_views(rng.normal(size=(b, dim)),
                                     rng.normal(size=(b, dim)))


# ---------------------------------------------------------------- recipes

def test_recipe_validation():
    with pytest.raises(InvalidArgument):
        AugmentRecipe(crop_padding=-1)
    with pytest.raises(InvalidArgument):
        AugmentRecipe(flip_prob=1.5)
    with pytest.raises(InvalidArgument):
        AugmentRecipe(grayscale_prob=-0.1)
    with pytest.raises(InvalidArgument):
        AugmentRecipe(blur_sigma=-1.0)
    with pytest.raises(InvalidArgument):
        AugmentRecipe(rotation_degrees=-5.0)


def test_standard_recipes_shape():
    c = contrastive_recipe()
    assert c.crop_padding == 4 and c.flip_prob == 0.5
    assert c.jitter_strength > 0 and c.blur_sigma > 0 and c.grayscale_prob > 0
    assert c.rotation_degrees == 0.0
    s = classification_recipe()
    assert s.crop_padding == 4 and s.flip_prob == 0.5
    assert s.rotation_degrees == 20.0
    assert s.jitter_strength == 0 and s.blur_sigma == 0 and s.grayscale_prob == 0


# ---------------------------------------------------------------- augment

def test_augment_identity_when_everything_off():
    img = np.random.default_rng(0).random((3, 8, 8))
    out = augment(img, identity_recipe(), view_rng(0, 0, 0))
    assert np.array_equal(out, img)


def test_augment_grayscale_equalizes_channels():
    recipe = AugmentRecipe(crop_padding=0, flip_prob=0.0, grayscale_prob=1.0)
    img = np.random.default_rng(1).random((3, 6, 6))
    out = augment(img, recipe, view_rng(0, 0, 0))
    assert np.array_equal(out[0], out[1])
    assert np.array_equal(out[1], out[2])
    np.testing.assert_allclose(out[0], img.mean(axis=0), rtol=1e-12)


def test_augment_flip_certain():
    recipe = AugmentRecipe(crop_padding=0, flip_prob=1.0)
    img = np.random.default_rng(2).random((3, 5, 5))
    out = augment(img, recipe, view_rng(0, 0, 0))
    assert np.array_equal(out, img[..., ::-1])


def test_augment_deterministic_per_stream():
    img = np.random.default_rng(3).random((3, 10, 10))
    recipe = contrastive_recipe()
    a = augment(img, recipe, view_rng(7, 2, 5, view=0, stream=1))
    b = augment(img, recipe, view_rng(7, 2, 5, view=0, stream=1))
    assert np.array_equal(a, b)
    other_view = augment(img, recipe, view_rng(7, 2, 5, view=1, stream=1))
    assert not np.array_equal(a, other_view)
    other_stream = augment(img, recipe, view_rng(7, 2, 5, view=0, stream=2))
    assert not np.array_equal(a, other_stream)


def test_augment_batch_matches_single_calls():
    imgs = np.random.default_rng(4).random((6, 3, 9, 9))
    recipe = contrastive_recipe()
    batch = augment_batch(imgs, recipe, seed=11, epoch=3,
                          indices=np.arange(6), view=1, stream=2)
    for i in range(6):
        single = augment(imgs[i], recipe, view_rng(11, 3, i, 1, 2))
        assert np.array_equal(batch[i], single)


def test_augment_batch_respects_dataset_indices():
    """Index-keyed streams: the same sample gets the same view regardless
    of where it lands in the shuffled batch."""
    imgs = np.random.default_rng(5).random((4, 3, 8, 8))
    recipe = contrastive_recipe()
    a = augment_batch(imgs, recipe, 0, 0, indices=np.array([10, 11, 12, 13]))
    b = augment_batch(imgs[::-1], recipe, 0, 0,
                      indices=np.array([13, 12, 11, 10]))
    assert np.array_equal(a, b[::-1])


def test_augment_output_stays_in_unit_range():
    recipe = AugmentRecipe(crop_padding=2, flip_prob=0.5, jitter_strength=1.0,
                           blur_sigma=1.0, grayscale_prob=0.5)
    imgs = np.random.default_rng(6).random((8, 3, 12, 12))
    out = augment_batch(imgs, recipe, 0, 0, np.arange(8))
    assert out.shape == imgs.shape
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_augment_rotation_keeps_constant_images():
    # bilinear resampling of a constant field is the same constant
    recipe = AugmentRecipe(crop_padding=0, flip_prob=0.0, rotation_degrees=20.0)
    img = np.full((3, 7, 7), 0.7)
    out = augment(img, recipe, view_rng(0, 0, 0))
    np.testing.assert_allclose(out, img, atol=1e-12)


def test_augment_rejects_non_image():
    with pytest.raises(InvalidArgument):
        augment(np.zeros((4, 4)), identity_recipe(), view_rng(0, 0, 0))


def test_jitter_batch_zero_strength_copies():
    feats = np.random.default_rng(7).normal(size=(5, 4))
    out = jitter_batch(feats, 0.0, 0, 0, np.arange(5))
    assert np.array_equal(out, feats)
    out[0, 0] += 1.0
    assert out[0, 0] != feats[0, 0]


def test_jitter_batch_deterministic():
    feats = np.random.default_rng(8).normal(size=(5, 4))
    a = jitter_batch(feats, 0.3, 9, 1, np.arange(5), view=0)
    b = jitter_batch(feats, 0.3, 9, 1, np.arange(5), view=0)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, jitter_batch(feats, 0.3, 9, 1,
                                              np.arange(5), view=1))


def test_make_views_dispatches_on_rank():
    rng = np.random.default_rng(9)
    imgs = rng.random((4, 3, 8, 8))
    va, vb = make_views(imgs, contrastive_recipe(), 0, 0, np.arange(4))
    assert va.shape == imgs.shape and not np.array_equal(va, vb)
    feats = rng.normal(size=(4, 6))
    va, vb = make_views(feats, contrastive_recipe(), 0, 0, np.arange(4))
    assert va.shape == feats.shape and not np.array_equal(va, vb)


# ---------------------------------------------------------------- batch type

def test_embedding_batch_validation():
    z = np.random.default_rng(0).normal(size=(4, 3))
    with pytest.raises(InvalidArgument):
        EmbeddingBatch(z[:3], np.array([1, 0, 2]))  # odd count
    with pytest.raises(InvalidArgument):
        EmbeddingBatch(z[:2], np.array([1, 0]))  # too small
    with pytest.raises(InvalidArgument):
        EmbeddingBatch(z, np.array([0, 1, 2, 3]))  # self-pairs
    with pytest.raises(InvalidArgument):
        EmbeddingBatch(z, np.array([1, 2, 3, 0]))  # not an involution
    ok = EmbeddingBatch.from_views(z[:2], z[2:])
    assert ok.half == 2
    assert np.array_equal(ok.pair_index, [2, 3, 0, 1])


# ---------------------------------------------------------------- nt_xent

def test_nt_xent_two_cluster_hand_value():
    za = np.array([[1.0, 0.0], [0.0, 1.0]])
    batch = EmbeddingBatch.from_views(za, za.copy())
    v, _ = nt_xent(batch, tau=1.0)
    np.testing.assert_allclose(v, np.log((np.e + 2) / np.e), rtol=1e-12)
    np.testing.assert_allclose(v, 0.5514, atol=1e-4)


def test_nt_xent_identical_embeddings():
    for b in (2, 3, 5):
        z = np.tile([[0.6, 0.8]], (b, 1))
        batch = EmbeddingBatch.from_views(z, z.copy())
        v, g = nt_xent(batch, tau=0.5)
        np.testing.assert_allclose(v, np.log(2 * b - 1), rtol=1e-12)
        # fully symmetric configuration: no direction improves the loss
        np.testing.assert_allclose(g, np.zeros_like(g), atol=1e-12)


def test_nt_xent_rotation_invariance():
    rng = np.random.default_rng(10)
    batch = random_batch(rng, b=5, dim=4)
    q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    rotated = EmbeddingBatch(batch.embeddings @ q.T, batch.pair_index)
    v0, _ = nt_xent(batch, 0.5)
    v1, _ = nt_xent(rotated, 0.5)
    np.testing.assert_allclose(v0, v1, atol=1e-12)


def test_nt_xent_lower_bound():
    rng = np.random.default_rng(11)
    for tau in (0.2, 0.5, 1.0):
        for _ in range(10):
            b = int(rng.integers(2, 7))
            batch = random_batch(rng, b=b, dim=5)
            v, _ = nt_xent(batch, tau)
            assert v >= np.log(2 * b - 1) - 2.0 / tau - 1e-12


def test_nt_xent_rejects_bad_temperature():
    batch = random_batch(np.random.default_rng(12))
    with pytest.raises(InvalidArgument):
        nt_xent(batch, 0.0)
    with pytest.raises(InvalidArgument):
        nt_xent(batch, -1.0)


# ---------------------------------------------------------------- sup_con

def test_sup_con_distinct_labels_equals_nt_xent():
    rng = np.random.default_rng(13)
    batch = random_batch(rng, b=4)
    v_sup, g_sup = sup_con(batch, np.array([0, 1, 2, 3]), 0.5)
    v_nt, g_nt = nt_xent(batch, 0.5)
    assert v_sup == v_nt
    assert np.array_equal(g_sup, g_nt)


def test_sup_con_identical_embeddings_value():
    """With every similarity equal, the weighted-mean numerator term
    cancels |P(i)| and the loss is log(2B-1) regardless of label layout."""
    z = np.tile([[1.0, 0.0, 0.0]], (4, 1))
    batch = EmbeddingBatch.from_views(z, z.copy())
    for labels in ([0, 0, 0, 0], [0, 0, 1, 1], [0, 1, 2, 3]):
        v, _ = sup_con(batch, np.array(labels), 0.5)
        np.testing.assert_allclose(v, np.log(7), rtol=1e-12)


def test_sup_con_label_relabeling_invariance():
    rng = np.random.default_rng(14)
    batch = random_batch(rng, b=6)
    labels = np.array([0, 1, 1, 2, 0, 2])
    relabeled = np.array([5, 3, 3, 9, 5, 9])  # same partition
    v0, g0 = sup_con(batch, labels, 0.5)
    v1, g1 = sup_con(batch, relabeled, 0.5)
    assert v0 == v1
    assert np.array_equal(g0, g1)


def test_sup_con_requires_one_label_per_source():
    batch = random_batch(np.random.default_rng(15), b=4)
    with pytest.raises(InvalidArgument):
        sup_con(batch, np.zeros(8, dtype=int), 0.5)


# ---------------------------------------------------------------- weighted

def test_weighted_sup_con_unit_weights_equals_sup_con():
    rng = np.random.default_rng(16)
    batch = random_batch(rng, b=5)
    labels = rng.integers(0, 2, 5)
    v_w, g_w = weighted_sup_con(batch, labels, np.ones(5), 0.5)
    v_s, g_s = sup_con(batch, labels, 0.5)
    np.testing.assert_allclose(v_w, v_s, atol=1e-12)
    np.testing.assert_allclose(g_w, g_s, atol=1e-12)


def test_weighted_sup_con_singleton_positives_equals_nt_xent():
    rng = np.random.default_rng(17)
    batch = random_batch(rng, b=4)
    weights = rng.random(4)  # irrelevant: pair entries are forced to 1
    v_w, g_w = weighted_sup_con(batch, np.array([0, 1, 2, 3]), weights, 0.5)
    v_nt, g_nt = nt_xent(batch, 0.5)
    np.testing.assert_allclose(v_w, v_nt, atol=1e-12)
    np.testing.assert_allclose(g_w, g_nt, atol=1e-12)


def test_weighted_sup_con_zeroed_positives_offset_log3():
    """Label groups of two sources give |P(i)| = 3; zero weights silence
    everything except the paired view, leaving the 1/|P(i)| factor."""
    rng = np.random.default_rng(18)
    batch = random_batch(rng, b=4)
    labels = np.array([0, 0, 1, 1])
    v_w, g_w = weighted_sup_con(batch, labels, np.zeros(4), 0.5)
    v_nt, g_nt = nt_xent(batch, 0.5)
    np.testing.assert_allclose(v_w - v_nt, np.log(3.0), atol=1e-12)
    np.testing.assert_allclose(g_w, g_nt, atol=1e-12)


def test_weighted_sup_con_monotone_in_weights():
    rng = np.random.default_rng(19)
    batch = random_batch(rng, b=5)
    labels = np.array([0, 0, 0, 1, 1])
    w = rng.random(5) * 0.8
    base, _ = weighted_sup_con(batch, labels, w, 0.5)
    for i in range(5):
        bumped = w.copy()
        bumped[i] = min(bumped[i] + 0.15, 1.0)
        v, _ = weighted_sup_con(batch, labels, bumped, 0.5)
        assert v <= base + 1e-12


def test_weighted_sup_con_validates_weights():
    batch = random_batch(np.random.default_rng(20), b=4)
    labels = np.zeros(4, dtype=int)
    with pytest.raises(InvalidArgument):
        weighted_sup_con(batch, labels, np.full(4, 1.2), 0.5)
    with pytest.raises(InvalidArgument):
        weighted_sup_con(batch, labels, np.ones(8), 0.5)


# ---------------------------------------------------------------- gradients

def _embedding_grad_check(loss_of, b, dim, seed):
    rng = np.random.default_rng(seed)
    z0 = rng.normal(size=(2 * b, dim))
    pair = np.concatenate([np.arange(b) + b, np.arange(b)])

    def f(theta):
        batch = EmbeddingBatch(theta.reshape(2 * b, dim), pair)
        v, g = loss_of(batch)
        return v, g.ravel()

    err = gradient_check(f, z0.ravel(), np.random.default_rng(seed + 1))
    assert err < 1e-4, f"embedding gradient error {err}"


def test_gradient_nt_xent():
    _embedding_grad_check(lambda b: nt_xent(b, 0.5), b=4, dim=5, seed=30)


def test_gradient_sup_con():
    labels = np.array([0, 1, 0, 2])
    _embedding_grad_check(lambda b: sup_con(b, labels, 0.7), b=4, dim=5,
                          seed=31)


def test_gradient_weighted_sup_con():
    labels = np.array([0, 1, 0, 1, 2])
    weights = np.array([0.9, 0.2, 0.5, 0.7, 0.0])
    _embedding_grad_check(lambda b: weighted_sup_con(b, labels, weights, 0.4),
                          b=5, dim=4, seed=32)
