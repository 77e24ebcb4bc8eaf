"""Flat `key = value` run configuration.

Every knob of an experiment lives in one flat document with dotted key
names, a documented default for each key, and strict typing. Unknown
keys are rejected so typos fail loudly. parse and render round-trip:
parse(render(c)) equals c for every valid config.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .contrastive import AugmentRecipe
from .data import AsymmetricMap, LabeledDataset, generate_synthetic, \
    inject_asymmetric, inject_symmetric
from .errors import InvalidArgument
from .losses import RobustLossConfig
from .pipeline import ClassifierSettings, ContrastiveSettings, PhaseConfig

# key -> (default, type); bool before int since bool is an int subclass
SCHEMA: dict = {
    "data.kind": ("mini-image", str),
    "data.classes": (4, int),
    "data.samples": (2000, int),
    "data.separation": (2.0, float),
    "data.seed": (0, int),
    "data.path": ("", str),
    "data.test_path": ("", str),
    "noise.type": ("none", str),
    "noise.ratio": (0.0, float),
    "noise.seed": (0, int),
    "noise.pairs": ("", str),
    "noise.group_size": (2, int),
    "net.encoder_layers": ("128:relu,64:relu", str),
    "net.projection_hidden": (64, int),
    "net.projection_out": (32, int),
    "net.classifier_hidden": (64, int),
    "net.batchnorm": (True, bool),
    "contrastive.epochs": (100, int),
    "contrastive.batch_size": (128, int),
    "contrastive.lr": (1e-3, float),
    "contrastive.weight_decay": (1e-6, float),
    "contrastive.temperature": (0.5, float),
    "contrastive.crop_padding": (4, int),
    "contrastive.flip_prob": (0.5, float),
    "contrastive.jitter_strength": (0.4, float),
    "contrastive.blur_sigma": (0.5, float),
    "contrastive.grayscale_prob": (0.2, float),
    "contrastive.rotation_degrees": (0.0, float),
    "classifier.epochs": (60, int),
    "classifier.warmup_epochs": (10, int),
    "classifier.batch_size": (64, int),
    "classifier.lr": (0.05, float),
    "classifier.weight_decay": (1e-5, float),
    "classifier.momentum": (0.9, float),
    "classifier.loss": ("elr", str),
    "classifier.gamma": (0.5, float),
    "classifier.alpha": (1.0, float),
    "classifier.beta": (1.0, float),
    "classifier.log_clamp": (-4.0, float),
    "classifier.lambda_elr": (3.0, float),
    "classifier.momentum_elr": (0.7, float),
    "classifier.track_selection": (False, bool),
    "classifier.crop_padding": (4, int),
    "classifier.flip_prob": (0.5, float),
    "classifier.jitter_strength": (0.0, float),
    "classifier.blur_sigma": (0.0, float),
    "classifier.grayscale_prob": (0.0, float),
    "classifier.rotation_degrees": (20.0, float),
    "run.seed": (0, int),
    "run.stage": ("all", str),
    "run.pretrained": (True, bool),
}

NOISE_TYPES = ("none", "symmetric", "asymmetric-pairs", "asymmetric-circular")
STAGES = ("pretrain", "classify", "finetune", "bootstrap", "all")


def _convert(key: str, raw: str):
    _, typ = SCHEMA[key]
    raw = raw.strip()
    try:
        if typ is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError:
        raise InvalidArgument(f"bad value {raw!r} for key {key!r} "
                              f"(expected {typ.__name__})") from None


@dataclass
class RunConfig:
    """Validated flat configuration; values default per SCHEMA."""

    values: dict = field(default_factory=lambda: {k: d for k, (d, _) in SCHEMA.items()})

    def get(self, key: str):
        if key not in SCHEMA:
            raise InvalidArgument(f"unknown config key {key!r}")
        return self.values[key]

    def set(self, key: str, value) -> None:
        if key not in SCHEMA:
            raise InvalidArgument(f"unknown config key {key!r}")
        _, typ = SCHEMA[key]
        if typ is not bool and isinstance(value, bool):
            raise InvalidArgument(f"bad type for key {key!r}")
        if not isinstance(value, typ):
            if typ is float and isinstance(value, int):
                value = float(value)
            else:
                raise InvalidArgument(f"bad type for key {key!r}")
        self.values[key] = value

    def __eq__(self, other) -> bool:
        return isinstance(other, RunConfig) and self.values == other.values


def parse(text: str) -> RunConfig:
    """Read a `key = value` document; `#` starts a comment."""
    cfg = RunConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise InvalidArgument(f"line {lineno}: expected 'key = value'")
        key, raw = body.split("=", 1)
        key = key.strip()
        if key not in SCHEMA:
            raise InvalidArgument(f"line {lineno}: unknown config key {key!r}")
        cfg.values[key] = _convert(key, raw)
    return cfg


def render(cfg: RunConfig) -> str:
    """Write the full config back out, one key per line, sorted."""
    lines = []
    for key in sorted(SCHEMA):
        v = cfg.values[key]
        if isinstance(v, bool):
            out = "true" if v else "false"
        elif isinstance(v, float):
            out = repr(v)
        else:
            out = str(v)
        lines.append(f"{key} = {out}")
    return "\n".join(lines) + "\n"


def load(path: str) -> RunConfig:
    with open(path) as f:
        return parse(f.read())


def _parse_encoder_layers(text: str) -> tuple:
    layers = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            width, act = part.split(":")
            layers.append((int(width), act.strip()))
        except ValueError:
            raise InvalidArgument(
                f"bad encoder layer {part!r}; expected 'width:activation'") from None
    if not layers:
        raise InvalidArgument("net.encoder_layers must name at least one layer")
    return tuple(layers)


def _parse_pairs(text: str) -> dict:
    pairs = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            src, dst = part.split(">")
            pairs[int(src)] = int(dst)
        except ValueError:
            raise InvalidArgument(
                f"bad noise pair {part!r}; expected 'src>dst'") from None
    return pairs


def _recipe(cfg: RunConfig, prefix: str) -> AugmentRecipe:
    g = lambda name: cfg.get(f"{prefix}.{name}")
    return AugmentRecipe(
        crop_padding=g("crop_padding"), flip_prob=g("flip_prob"),
        jitter_strength=g("jitter_strength"), blur_sigma=g("blur_sigma"),
        grayscale_prob=g("grayscale_prob"),
        rotation_degrees=g("rotation_degrees"))


def build_phase_config(cfg: RunConfig) -> PhaseConfig:
    """Materialize the training configuration objects."""
    contrastive = ContrastiveSettings(
        epochs=cfg.get("contrastive.epochs"),
        batch_size=cfg.get("contrastive.batch_size"),
        lr=cfg.get("contrastive.lr"),
        weight_decay=cfg.get("contrastive.weight_decay"),
        temperature=cfg.get("contrastive.temperature"),
        recipe=_recipe(cfg, "contrastive"))
    classifier = ClassifierSettings(
        epochs=cfg.get("classifier.epochs"),
        warmup_epochs=cfg.get("classifier.warmup_epochs"),
        batch_size=cfg.get("classifier.batch_size"),
        lr=cfg.get("classifier.lr"),
        weight_decay=cfg.get("classifier.weight_decay"),
        momentum=cfg.get("classifier.momentum"),
        loss_kind=cfg.get("classifier.loss"),
        loss_config=RobustLossConfig(
            gamma=cfg.get("classifier.gamma"),
            alpha=cfg.get("classifier.alpha"),
            beta=cfg.get("classifier.beta"),
            log_clamp=cfg.get("classifier.log_clamp")),
        lambda_elr=cfg.get("classifier.lambda_elr"),
        momentum_elr=cfg.get("classifier.momentum_elr"),
        recipe=_recipe(cfg, "classifier"),
        track_selection=cfg.get("classifier.track_selection"))
    return PhaseConfig(
        contrastive=contrastive, classifier=classifier,
        encoder_layers=_parse_encoder_layers(cfg.get("net.encoder_layers")),
        projection_hidden=cfg.get("net.projection_hidden"),
        projection_out=cfg.get("net.projection_out"),
        classifier_hidden=cfg.get("net.classifier_hidden"),
        use_batchnorm=cfg.get("net.batchnorm"))


def build_dataset(cfg: RunConfig) -> LabeledDataset:
    """Generate the synthetic dataset and apply the configured noise."""
    ds = generate_synthetic(
        kind=cfg.get("data.kind"), classes=cfg.get("data.classes"),
        samples=cfg.get("data.samples"),
        separation=cfg.get("data.separation"), seed=cfg.get("data.seed"))
    ntype = cfg.get("noise.type")
    if ntype not in NOISE_TYPES:
        raise InvalidArgument(f"unknown noise type {ntype!r}")
    if ntype == "none":
        return ds
    ratio = cfg.get("noise.ratio")
    nseed = cfg.get("noise.seed")
    if ntype == "symmetric":
        return inject_symmetric(ds, ratio, nseed)
    if ntype == "asymmetric-pairs":
        pairs = _parse_pairs(cfg.get("noise.pairs"))
        amap = (AsymmetricMap.from_pairs(pairs) if pairs
                else AsymmetricMap.default_pairs())
        return inject_asymmetric(ds, ratio, amap, nseed)
    amap = AsymmetricMap.circular_chunks(cfg.get("data.classes"),
                                         cfg.get("noise.group_size"))
    return inject_asymmetric(ds, ratio, amap, nseed)
