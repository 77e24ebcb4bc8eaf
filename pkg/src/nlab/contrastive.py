"""Contrastive learning: stochastic views and embedding losses.

Augmentations operate on channel-first images in the [0,1] value range.
Per-sample randomness comes from counter-based streams keyed by
(seed, epoch, sample index, view), so a batch augmented in parallel is
bit-identical to the same samples augmented one by one.

The three losses (pairwise instance discrimination, label-positive, and
weight-scaled label-positive) share one core: similarities are cosine,
embeddings are L2-normalized inside the loss, and the returned gradient
is with respect to the raw input embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .errors import InvalidArgument

NORM_FLOOR = 1e-12


# -- augmentation -------------------------------------------------------------


@dataclass(frozen=True)
class AugmentRecipe:
    """Which view transforms run and how strong they are.

    Image pipeline order: random crop (reflective padding), horizontal
    flip, rotation, per-channel color scale/shift, Gaussian blur (always
    applied when blur_sigma > 0), grayscale. Output is clipped to [0,1].
    jitter_strength doubles as the noise scale for plain feature vectors.
    """

    crop_padding: int = 4
    flip_prob: float = 0.5
    jitter_strength: float = 0.0
    blur_sigma: float = 0.0
    grayscale_prob: float = 0.0
    rotation_degrees: float = 0.0

    def __post_init__(self):
        if self.crop_padding < 0:
            raise InvalidArgument("crop_padding must be >= 0")
        for name in ("flip_prob", "grayscale_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidArgument(f"{name} must lie in [0, 1]")
        for name in ("jitter_strength", "blur_sigma", "rotation_degrees"):
            if getattr(self, name) < 0:
                raise InvalidArgument(f"{name} must be >= 0")


def contrastive_recipe() -> AugmentRecipe:
    """View recipe for representation learning."""
    return AugmentRecipe(crop_padding=4, flip_prob=0.5, jitter_strength=0.4,
                         blur_sigma=0.5, grayscale_prob=0.2)


def classification_recipe() -> AugmentRecipe:
    """Light recipe for supervised training: crop, flip and rotation only."""
    return AugmentRecipe(crop_padding=4, flip_prob=0.5, rotation_degrees=20.0)


def view_rng(seed: int, epoch: int, index: int, view: int = 0,
             stream: int = 0) -> np.random.Generator:
    """Independent stream for one (sample, view) draw of one epoch.

    stream separates consumers (training phases) that share a seed.
    """
    return np.random.default_rng([seed, stream, epoch, index, view])


def _draw_params(recipe: AugmentRecipe, rng: np.random.Generator, channels: int) -> dict:
    """All stochastic choices for one view, drawn in a fixed order."""
    p: dict = {}
    if recipe.crop_padding > 0:
        span = 2 * recipe.crop_padding + 1
        p["oy"] = int(rng.integers(0, span))
        p["ox"] = int(rng.integers(0, span))
    if recipe.flip_prob > 0:
        p["flip"] = bool(rng.uniform() < recipe.flip_prob)
    if recipe.rotation_degrees > 0:
        p["angle"] = float(rng.uniform(-recipe.rotation_degrees,
                                       recipe.rotation_degrees))
    if recipe.jitter_strength > 0:
        s = recipe.jitter_strength
        p["scale"] = rng.uniform(1.0 - s, 1.0 + s, size=channels)
        p["shift"] = rng.uniform(-s, s, size=channels)
    if recipe.grayscale_prob > 0:
        p["gray"] = bool(rng.uniform() < recipe.grayscale_prob)
    return p


def _rotate_bilinear(x: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Rotate each image about its center, bilinear, edges clamped."""
    n, c, h, w = x.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h) - cy, np.arange(w) - cx, indexing="ij")
    rad = np.radians(angles)[:, None, None]
    cos, sin = np.cos(rad), np.sin(rad)
    src_y = cos * yy - sin * xx + cy
    src_x = sin * yy + cos * xx + cx
    y0 = np.clip(np.floor(src_y).astype(np.int64), 0, h - 1)
    x0 = np.clip(np.floor(src_x).astype(np.int64), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = np.clip(src_y, 0, h - 1) - y0
    fx = np.clip(src_x, 0, w - 1) - x0
    flat = x.reshape(n * c, h, w)
    rep = lambda a: np.repeat(a, c, axis=0)
    ry0, ry1, rx0, rx1 = rep(y0), rep(y1), rep(x0), rep(x1)
    rfy, rfx = rep(fy), rep(fx)
    rows = np.arange(n * c)[:, None, None]
    top = flat[rows, ry0, rx0] * (1 - rfx) + flat[rows, ry0, rx1] * rfx
    bot = flat[rows, ry1, rx0] * (1 - rfx) + flat[rows, ry1, rx1] * rfx
    out = top * (1 - rfy) + bot * rfy
    return out.reshape(n, c, h, w)


def _apply_image_batch(images: np.ndarray, recipe: AugmentRecipe,
                       params: list) -> np.ndarray:
    n, c, h, w = images.shape
    x = images
    if recipe.crop_padding > 0:
        p = recipe.crop_padding
        padded = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), mode="reflect")
        x = np.empty_like(images)
        for i, pp in enumerate(params):
            x[i] = padded[i, :, pp["oy"]:pp["oy"] + h, pp["ox"]:pp["ox"] + w]
    if recipe.flip_prob > 0:
        mask = np.array([pp["flip"] for pp in params])
        if mask.any():
            x = x.copy()
            x[mask] = x[mask][..., ::-1]
    if recipe.rotation_degrees > 0:
        angles = np.array([pp["angle"] for pp in params])
        x = _rotate_bilinear(x, angles)
    if recipe.jitter_strength > 0:
        scale = np.stack([pp["scale"] for pp in params])[:, :, None, None]
        shift = np.stack([pp["shift"] for pp in params])[:, :, None, None]
        x = x * scale + shift
    if recipe.blur_sigma > 0:
        x = gaussian_filter1d(x, recipe.blur_sigma, axis=-1, mode="reflect")
        x = gaussian_filter1d(x, recipe.blur_sigma, axis=-2, mode="reflect")
    if recipe.grayscale_prob > 0:
        mask = np.array([pp["gray"] for pp in params])
        if mask.any():
            x = x.copy()
            x[mask] = x[mask].mean(axis=1, keepdims=True)
    return np.clip(x, 0.0, 1.0)


def augment(image: np.ndarray, recipe: AugmentRecipe,
            rng: np.random.Generator) -> np.ndarray:
    """One stochastic view of a single channel-first image in [0,1]."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise InvalidArgument(f"expected a C x H x W image, got shape {image.shape}")
    params = [_draw_params(recipe, rng, image.shape[0])]
    return _apply_image_batch(image[None], recipe, params)[0]


def augment_batch(images: np.ndarray, recipe: AugmentRecipe, seed: int,
                  epoch: int, indices: np.ndarray, view: int = 0,
                  stream: int = 0) -> np.ndarray:
    """Augment a batch with one independent stream per (sample, view)."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4:
        raise InvalidArgument("expected an N x C x H x W batch")
    c = images.shape[1]
    params = [_draw_params(recipe, view_rng(seed, epoch, int(i), view, stream), c)
              for i in indices]
    return _apply_image_batch(images, recipe, params)


def jitter_batch(features: np.ndarray, strength: float, seed: int,
                 epoch: int, indices: np.ndarray, view: int = 0,
                 stream: int = 0) -> np.ndarray:
    """Gaussian-noise views for plain feature vectors (non-image data)."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise InvalidArgument("expected an N x d feature batch")
    if strength < 0:
        raise InvalidArgument("strength must be >= 0")
    if strength == 0:
        return features.copy()
    noise = np.stack([view_rng(seed, epoch, int(i), view, stream).standard_normal(
        features.shape[1]) for i in indices])
    return features + strength * noise


def make_views(features: np.ndarray, recipe: AugmentRecipe, seed: int,
               epoch: int, indices: np.ndarray, stream: int = 0):
    """Two independent stochastic views per sample, image or vector alike."""
    if features.ndim == 4:
        va = augment_batch(features, recipe, seed, epoch, indices, 0, stream)
        vb = augment_batch(features, recipe, seed, epoch, indices, 1, stream)
    else:
        s = recipe.jitter_strength
        va = jitter_batch(features, s, seed, epoch, indices, 0, stream)
        vb = jitter_batch(features, s, seed, epoch, indices, 1, stream)
    return va, vb


# -- embedding losses ---------------------------------------------------------


@dataclass
class EmbeddingBatch:
    """2B embeddings, two views per source sample.

    Row i's partner view is pair_index[i]; the pairing is an involution
    with no fixed points. Embeddings are stored raw; the losses normalize
    internally and differentiate back through the normalization.
    """

    embeddings: np.ndarray
    pair_index: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.embeddings, dtype=np.float64)
        j = np.asarray(self.pair_index, dtype=np.int64)
        if z.ndim != 2 or len(j) != len(z):
            raise InvalidArgument("one pair index per embedding row required")
        if len(z) < 4 or len(z) % 2:
            raise InvalidArgument("need an even number of embeddings, at least 4")
        idx = np.arange(len(z))
        if np.any(j == idx) or np.any(j[j] != idx):
            raise InvalidArgument("pair_index must be a fixed-point-free involution")
        self.embeddings = z
        self.pair_index = j

    @classmethod
    def from_views(cls, view_a: np.ndarray, view_b: np.ndarray) -> "EmbeddingBatch":
        """Stack two aligned view batches; row i pairs with row i+B."""
        view_a = np.asarray(view_a, dtype=np.float64)
        view_b = np.asarray(view_b, dtype=np.float64)
        if view_a.shape != view_b.shape:
            raise InvalidArgument("view batches must share a shape")
        b = len(view_a)
        pair = np.concatenate([np.arange(b) + b, np.arange(b)])
        return cls(np.concatenate([view_a, view_b]), pair)

    @property
    def half(self) -> int:
        return len(self.embeddings) // 2


def _normalize_rows(z: np.ndarray):
    norms = np.maximum(np.linalg.norm(z, axis=1, keepdims=True), NORM_FLOOR)
    return z / norms, norms


def _contrastive_core(batch: EmbeddingBatch, pos_mask: np.ndarray,
                      pos_weights: np.ndarray, tau: float):
    """Shared value/gradient engine.

    pos_mask marks each anchor's positive set P(i) (self excluded);
    pos_weights scales each positive's numerator term. The per-anchor loss
    is -log[(1/|P(i)|) * sum_p w_p exp(s_ip) / sum_a exp(s_ia)], averaged
    over all 2B anchors. Gradient is w.r.t. the raw embeddings.
    """
    if tau <= 0:
        raise InvalidArgument("temperature must be positive")
    z_raw = batch.embeddings
    m = len(z_raw)
    z, norms = _normalize_rows(z_raw)
    sim = z @ z.T / tau
    off_diag = ~np.eye(m, dtype=bool)
    # row-wise max over non-self entries keeps the exponentials bounded
    row_max = np.where(off_diag, sim, -np.inf).max(axis=1, keepdims=True)
    e = np.exp(sim - row_max) * off_diag
    denom = e.sum(axis=1)
    numer = (e * pos_weights * pos_mask).sum(axis=1)
    p_count = pos_mask.sum(axis=1)
    losses = -np.log(numer) + np.log(p_count) + np.log(denom)
    value = float(losses.mean())
    g_sim = e / denom[:, None] - pos_mask * pos_weights * e / numer[:, None]
    g_norm = (g_sim @ z + g_sim.T @ z) / (m * tau)
    # chain through the row normalization: project out the radial component
    radial = (g_norm * z).sum(axis=1, keepdims=True)
    grad = (g_norm - radial * z) / norms
    return value, grad


def nt_xent(batch: EmbeddingBatch, tau: float = 0.5):
    """Instance-discrimination loss: each view's only positive is its pair."""
    m = len(batch.embeddings)
    pos = np.zeros((m, m), dtype=bool)
    pos[np.arange(m), batch.pair_index] = True
    return _contrastive_core(batch, pos, np.ones((m, m)), tau)


def _anchor_labels(batch: EmbeddingBatch, labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (batch.half,):
        raise InvalidArgument("one label per source sample required")
    return np.concatenate([labels, labels])


def _label_positive_mask(batch: EmbeddingBatch, anchor_labels: np.ndarray):
    m = len(batch.embeddings)
    pos = anchor_labels[:, None] == anchor_labels[None, :]
    np.fill_diagonal(pos, False)
    return pos


def sup_con(batch: EmbeddingBatch, labels: np.ndarray, tau: float = 0.5):
    """Label-positive contrastive loss; labels are one per source sample."""
    al = _anchor_labels(batch, labels)
    pos = _label_positive_mask(batch, al)
    m = len(batch.embeddings)
    return _contrastive_core(batch, pos, np.ones((m, m)), tau)


def weighted_sup_con(batch: EmbeddingBatch, labels: np.ndarray,
                     weights: np.ndarray, tau: float = 0.5):
    """Label-positive loss with per-sample trust weights.

    A positive p contributes with its own weight w_p, except the anchor's
    paired view which always counts fully: low-trust samples shrink toward
    plain instance discrimination instead of pulling label groups together.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (batch.half,):
        raise InvalidArgument("one weight per source sample required")
    if np.any(weights < 0) or np.any(weights > 1):
        raise InvalidArgument("weights must lie in [0, 1]")
    al = _anchor_labels(batch, labels)
    pos = _label_positive_mask(batch, al)
    m = len(batch.embeddings)
    w_anchor = np.concatenate([weights, weights])
    w_tilde = np.tile(w_anchor, (m, 1))
    w_tilde[np.arange(m), batch.pair_index] = 1.0
    return _contrastive_core(batch, pos, w_tilde, tau)
