"""Datasets, binary container IO, and label-noise injection.

A dataset carries two label tracks: the clean one (ground truth, used
only by evaluation and diagnostics) and the noisy one (what training is
allowed to see). Injectors corrupt the noisy track with exact per-class
counts so measured noise rates match the requested ratio to the sample.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, InvalidArgument

MAGIC = b"NLAB"
VERSION = 1

# conventional 10-class confusion pairs: truck->automobile, bird->airplane,
# deer->horse, cat<->dog
DEFAULT_PAIR_MAP = {9: 1, 2: 0, 4: 7, 3: 5, 5: 3}


@dataclass
class LabeledDataset:
    """Features plus clean and noisy label tracks.

    features: (n, d) vectors or (n, C, H, W) images in [0,1].
    noise_spec records how the noisy track was produced.
    """

    features: np.ndarray
    clean_labels: np.ndarray
    noisy_labels: np.ndarray
    class_count: int
    noise_spec: dict = field(default_factory=lambda: {"type": "none"})

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.clean_labels = np.asarray(self.clean_labels, dtype=np.int64)
        self.noisy_labels = np.asarray(self.noisy_labels, dtype=np.int64)
        n = len(self.features)
        if self.clean_labels.shape != (n,) or self.noisy_labels.shape != (n,):
            raise InvalidArgument("label tracks must have one entry per sample")
        if self.class_count < 2:
            raise InvalidArgument("class_count must be >= 2")
        for track in (self.clean_labels, self.noisy_labels):
            if len(track) and (track.min() < 0 or track.max() >= self.class_count):
                raise InvalidArgument("label outside [0, K)")

    def __len__(self) -> int:
        return len(self.features)

    @property
    def is_image(self) -> bool:
        return self.features.ndim == 4

    @property
    def input_dim(self) -> int:
        return int(np.prod(self.features.shape[1:]))


def noise_accuracy(dataset: LabeledDataset) -> float:
    """Fraction of samples whose noisy label still equals the clean one."""
    if len(dataset) == 0:
        return 1.0
    return float((dataset.noisy_labels == dataset.clean_labels).mean())


# -- synthetic generators ------------------------------------------------------

# class templates are keyed off the generator kind only, never the sample
# seed, so train and test splits drawn with different seeds share the same
# class structure
_TEMPLATE_KEY = 7340891


def _balanced_labels(samples: int, classes: int) -> np.ndarray:
    base = samples // classes
    counts = [base + (1 if c < samples % classes else 0) for c in range(classes)]
    return np.concatenate([np.full(cnt, c, dtype=np.int64)
                           for c, cnt in enumerate(counts)])


def _blob_points(classes: int, labels: np.ndarray, separation: float,
                 rng: np.random.Generator, dim: int) -> np.ndarray:
    trng = np.random.default_rng([_TEMPLATE_KEY, 1, classes, dim])
    centers = trng.standard_normal((classes, dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    return centers[labels] * separation + rng.standard_normal((len(labels), dim))


def _ring_points(classes: int, labels: np.ndarray, separation: float,
                 rng: np.random.Generator) -> np.ndarray:
    angles = 2 * np.pi * labels / classes
    centers = np.stack([np.cos(angles), np.sin(angles)], axis=1) * separation
    return centers + rng.standard_normal((len(labels), 2))


def _grating_images(classes: int, labels: np.ndarray, separation: float,
                    rng: np.random.Generator, side: int = 12) -> np.ndarray:
    """Sinusoidal gratings, one frequency/orientation pair per class.

    Orientation alternates with class parity and frequency steps every two
    classes, so flips and small crops keep a sample inside its class (a
    crop only shifts the phase, which is random per sample anyway).
    """
    trng = np.random.default_rng([_TEMPLATE_KEY, 2, classes])
    gains = trng.uniform(0.8, 1.2, size=(classes, 3))
    amp = min(0.12 * separation, 0.35)
    coord = np.arange(side)
    n = len(labels)
    phases = rng.uniform(0, 2 * np.pi, size=n)
    out = np.empty((n, 3, side, side))
    for i, (lab, phase) in enumerate(zip(labels, phases)):
        cycles = 1 + lab // 2
        wave = np.sin(2 * np.pi * cycles * coord / side + phase)
        plane = wave[None, :] if lab % 2 == 0 else wave[:, None]
        pattern = np.broadcast_to(plane, (side, side))
        out[i] = 0.5 + amp * gains[lab][:, None, None] * pattern
    out += 0.08 * rng.standard_normal(out.shape)
    return np.clip(out, 0.0, 1.0)


def generate_synthetic(kind: str = "blobs", classes: int = 4,
                       samples: int = 2000, separation: float = 2.0,
                       seed: int = 0) -> LabeledDataset:
    """Balanced synthetic dataset; kinds: blobs, ring, mini-image.

    blobs and ring give plain feature vectors; mini-image renders 3x12x12
    striped patterns so image augmentations have something to act on.
    Clean and noisy tracks start identical.
    """
    if classes < 2:
        raise InvalidArgument("need at least 2 classes")
    if samples < classes:
        raise InvalidArgument("need at least one sample per class")
    if separation <= 0:
        raise InvalidArgument("separation must be positive")
    labels = _balanced_labels(samples, classes)
    rng = np.random.default_rng(seed)
    if kind == "blobs":
        feats = _blob_points(classes, labels, separation, rng, dim=8)
    elif kind == "ring":
        feats = _ring_points(classes, labels, separation, rng)
    elif kind == "mini-image":
        feats = _grating_images(classes, labels, separation, rng)
    else:
        raise InvalidArgument(f"unknown synthetic kind {kind!r}")
    spec = {"type": "none", "kind": kind, "separation": separation, "seed": seed}
    return LabeledDataset(feats, labels, labels.copy(), classes, spec)


# -- binary container -----------------------------------------------------------


def save_dataset(dataset: LabeledDataset, path: str) -> None:
    """Write the flat little-endian container; see load_dataset."""
    shape = dataset.features.shape[1:]
    meta = json.dumps(dataset.noise_spec, sort_keys=True,
                      separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(struct.pack("<4sIII", MAGIC, VERSION, len(dataset), len(shape)))
        f.write(struct.pack(f"<{len(shape)}I", *shape))
        f.write(struct.pack("<I", dataset.class_count))
        f.write(dataset.features.astype("<f8").tobytes())
        f.write(dataset.clean_labels.astype("<i4").tobytes())
        f.write(dataset.noisy_labels.astype("<i4").tobytes())
        f.write(struct.pack("<I", len(meta)))
        f.write(meta)


def _read_exact(f, count: int, what: str) -> bytes:
    buf = f.read(count)
    if len(buf) != count:
        raise FormatError(f"truncated container: {what} at byte {f.tell() - len(buf)}")
    return buf


def load_dataset(path: str) -> LabeledDataset:
    """Read a container produced by save_dataset.

    Layout: magic 'NLAB', version u32, n u32, ndim u32, per-sample dims
    u32 each, K u32, features as n x dims little-endian float64, then the
    clean and noisy label tracks as int32, then a u32-length JSON metadata
    blob. All integers little-endian.
    """
    with open(path, "rb") as f:
        magic, version, n, ndim = struct.unpack("<4sIII", _read_exact(f, 16, "header"))
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r} at byte 0")
        if version != VERSION:
            raise FormatError(f"unsupported container version {version}")
        if ndim > 8:
            raise FormatError(f"implausible feature rank {ndim}")
        shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim, "dims"))
        (k,) = struct.unpack("<I", _read_exact(f, 4, "class count"))
        per = int(np.prod(shape)) if ndim else 1
        feats = np.frombuffer(
            _read_exact(f, 8 * n * per, "features"), dtype="<f8")
        feats = feats.reshape((n,) + shape).copy()
        clean = np.frombuffer(
            _read_exact(f, 4 * n, "clean labels"), dtype="<i4").astype(np.int64)
        noisy = np.frombuffer(
            _read_exact(f, 4 * n, "noisy labels"), dtype="<i4").astype(np.int64)
        (meta_len,) = struct.unpack("<I", _read_exact(f, 4, "metadata length"))
        meta = json.loads(_read_exact(f, meta_len, "metadata").decode())
        extra = f.read(1)
        if extra:
            raise FormatError(f"trailing bytes at byte {f.tell() - 1}")
    return LabeledDataset(feats, clean, noisy, k, meta)


def load_cifar10_binary(path: str) -> LabeledDataset:
    """Read the classic 3073-byte-record small-image format.

    Each record is 1 label byte (0..9) followed by 3072 pixel bytes in
    planar R,G,B row-major order for a 32x32 image; pixels scale to [0,1].
    """
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) % 3073:
        raise FormatError(
            f"file length {len(raw)} is not a multiple of 3073; "
            f"truncated record at byte {len(raw) - len(raw) % 3073}")
    n = len(raw) // 3073
    records = np.frombuffer(raw, dtype=np.uint8).reshape(n, 3073)
    labels = records[:, 0].astype(np.int64)
    bad = np.nonzero(labels > 9)[0]
    if len(bad):
        raise FormatError(f"label byte {labels[bad[0]]} > 9 at byte {bad[0] * 3073}")
    feats = records[:, 1:].reshape(n, 3, 32, 32).astype(np.float64) / 255.0
    spec = {"type": "none", "kind": "cifar10", "source": str(path)}
    return LabeledDataset(feats, labels, labels.copy(), 10, spec)


# -- noise injection -------------------------------------------------------------


@dataclass(frozen=True)
class AsymmetricMap:
    """Class-confusion structure for asymmetric noise.

    Either explicit source -> target pairs, or equally sized super-class
    groups flipped circularly (each class to the next in its group).
    """

    pairs: tuple = ()
    groups: tuple = ()

    @classmethod
    def from_pairs(cls, mapping: dict) -> "AsymmetricMap":
        return cls(pairs=tuple(sorted(mapping.items())))

    @classmethod
    def circular(cls, groups) -> "AsymmetricMap":
        return cls(groups=tuple(tuple(g) for g in groups))

    @classmethod
    def default_pairs(cls) -> "AsymmetricMap":
        return cls.from_pairs(DEFAULT_PAIR_MAP)

    @classmethod
    def circular_chunks(cls, class_count: int, group_size: int) -> "AsymmetricMap":
        if class_count % group_size:
            raise InvalidArgument("group size must divide the class count")
        groups = [tuple(range(s, s + group_size))
                  for s in range(0, class_count, group_size)]
        return cls.circular(groups)

    def validate(self, class_count: int) -> None:
        if bool(self.pairs) == bool(self.groups):
            raise InvalidArgument("map needs exactly one of pairs or groups")
        if self.pairs:
            for src, dst in self.pairs:
                if not (0 <= src < class_count and 0 <= dst < class_count):
                    raise InvalidArgument(f"pair {src}->{dst} outside [0, K)")
                if src == dst:
                    raise InvalidArgument(f"pair {src}->{dst} maps a class to itself")
            sources = [s for s, _ in self.pairs]
            if len(set(sources)) != len(sources):
                raise InvalidArgument("duplicate source class in pair map")
        else:
            flat = [c for g in self.groups for c in g]
            if sorted(flat) != list(range(class_count)):
                raise InvalidArgument("groups must partition the class set")
            if any(len(g) < 2 for g in self.groups):
                raise InvalidArgument("each group needs at least 2 classes")
            sizes = {len(g) for g in self.groups}
            if len(sizes) > 1:
                raise InvalidArgument("groups must be equally sized")

    def target_of(self, cls_idx: int) -> int | None:
        if self.pairs:
            lookup = dict(self.pairs)
            return lookup.get(cls_idx)
        for g in self.groups:
            if cls_idx in g:
                return g[(g.index(cls_idx) + 1) % len(g)]
        return None

    def to_json(self) -> dict:
        if self.pairs:
            return {"pairs": {str(s): d for s, d in self.pairs}}
        return {"groups": [list(g) for g in self.groups]}


def _corrupt_counts(dataset: LabeledDataset, ratio: float):
    if not 0.0 <= ratio <= 1.0:
        raise InvalidArgument("noise ratio must lie in [0, 1]")
    per_class = []
    for c in range(dataset.class_count):
        idx = np.nonzero(dataset.clean_labels == c)[0]
        per_class.append((idx, int(round(ratio * len(idx)))))
    return per_class


def inject_symmetric(dataset: LabeledDataset, ratio: float,
                     seed: int = 0) -> LabeledDataset:
    """Corrupt exactly round(ratio * class size) samples of every class.

    Each corrupted sample's noisy label is drawn uniformly from the other
    K-1 classes; features and the clean track are untouched.
    """
    rng = np.random.default_rng(seed)
    noisy = dataset.clean_labels.copy()
    k = dataset.class_count
    for idx, count in _corrupt_counts(dataset, ratio):
        chosen = rng.choice(idx, size=count, replace=False)
        offsets = rng.integers(1, k, size=count)
        noisy[chosen] = (noisy[chosen] + offsets) % k
    spec = dict(dataset.noise_spec)
    spec.update({"type": "symmetric", "ratio": ratio, "noise_seed": seed})
    return LabeledDataset(dataset.features, dataset.clean_labels, noisy,
                          k, spec)


def inject_asymmetric(dataset: LabeledDataset, ratio: float,
                      amap: AsymmetricMap, seed: int = 0) -> LabeledDataset:
    """Flip round(ratio * class size) samples of each mapped class to its
    mapped target; unmapped classes stay clean."""
    amap.validate(dataset.class_count)
    rng = np.random.default_rng(seed)
    noisy = dataset.clean_labels.copy()
    for idx, count in _corrupt_counts(dataset, ratio):
        if count == 0 or len(idx) == 0:
            continue
        target = amap.target_of(int(dataset.clean_labels[idx[0]]))
        if target is None:
            continue
        chosen = rng.choice(idx, size=count, replace=False)
        noisy[chosen] = target
    spec = dict(dataset.noise_spec)
    spec.update({"type": "asymmetric", "ratio": ratio, "noise_seed": seed,
                 "map": amap.to_json()})
    return LabeledDataset(dataset.features, dataset.clean_labels, noisy,
                          dataset.class_count, spec)
