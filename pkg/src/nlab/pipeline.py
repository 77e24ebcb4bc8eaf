"""End-to-end training orchestration.

Phase a: unsupervised contrastive pre-training of the encoder, then a
classifier trained on the noisy labels (with a frozen-encoder warm-up),
then pseudo-labels from the classifier's own train-set predictions.

Phase b: a Gaussian mixture over per-sample losses converts loss values
into clean-probability weights, a weighted label-positive contrastive
step refines the encoder, and a final classifier trains on the
pseudo-labels. A mixup-bootstrap classifier is available as an
alternative to the contrastive fine-tuning.

All randomness is derived from one experiment seed; identical seeds
reproduce identical metric records byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .contrastive import (AugmentRecipe, EmbeddingBatch, augment_batch,
                          classification_recipe, contrastive_recipe,
                          jitter_batch, make_views, nt_xent, weighted_sup_con)
from .data import LabeledDataset
from .errors import DegenerateInput, InvalidArgument, NumericFailure
from .losses import (ElrState, RobustLossConfig, elr_update_targets,
                     hard_predictions, loss_bootstrap_mixed, loss_ce,
                     loss_elr, loss_nfl_rce, mixup_pair, per_sample_ce)
from .network import Network, NetworkSpec
from .optim import OptimState, optimizer_step
from .selection import (PseudoLabels, clean_subset_metrics, fit_gmm2,
                        generate_pseudo_labels, posterior_weights)

# augmentation stream ids, one per consumer of the experiment seed
STREAM_PRETRAIN = 1
STREAM_CLASSIFY = 2
STREAM_FINETUNE = 3
STREAM_FINAL = 4
STREAM_BOOTSTRAP = 5

LOSS_KINDS = ("ce", "nfl_rce", "elr")

RECORD_FIELDS = ("train_loss", "train_top1_vs_noisy", "train_top1_vs_clean",
                 "test_top1", "pseudo_label_accuracy", "clean_subset_size",
                 "clean_subset_accuracy")


@dataclass
class ContrastiveSettings:
    """Representation-learning schedule (optimizer is Adam, constant lr)."""

    epochs: int = 100
    batch_size: int = 128
    lr: float = 1e-3
    weight_decay: float = 1e-6
    temperature: float = 0.5
    recipe: AugmentRecipe = field(default_factory=contrastive_recipe)


@dataclass
class ClassifierSettings:
    """Supervised schedule (SGD momentum with cosine annealing)."""

    epochs: int = 60
    warmup_epochs: int = 10
    batch_size: int = 64
    lr: float = 0.05
    weight_decay: float = 1e-5
    momentum: float = 0.9
    loss_kind: str = "elr"
    loss_config: RobustLossConfig = field(default_factory=RobustLossConfig)
    lambda_elr: float = 3.0
    momentum_elr: float = 0.7
    recipe: AugmentRecipe = field(default_factory=classification_recipe)
    track_selection: bool = False


@dataclass
class PhaseConfig:
    """Everything one experiment needs beyond the dataset and seed."""

    contrastive: ContrastiveSettings = field(default_factory=ContrastiveSettings)
    classifier: ClassifierSettings = field(default_factory=ClassifierSettings)
    encoder_layers: tuple = ((128, "relu"), (64, "relu"))
    projection_hidden: int = 64
    projection_out: int = 32
    classifier_hidden: int = 64
    use_batchnorm: bool = True

    def __post_init__(self):
        if self.contrastive.epochs < 1 or self.classifier.epochs < 1:
            raise InvalidArgument("epoch budgets must be >= 1")
        if not 0 <= self.classifier.warmup_epochs <= self.classifier.epochs:
            raise InvalidArgument("warmup_epochs must lie in [0, epochs]")
        if self.classifier.loss_kind not in LOSS_KINDS:
            raise InvalidArgument(f"unknown loss kind {self.classifier.loss_kind!r}")
        if self.contrastive.batch_size < 2 or self.classifier.batch_size < 2:
            raise InvalidArgument("batch sizes must be >= 2")

    def network_spec(self, dataset: LabeledDataset) -> NetworkSpec:
        return NetworkSpec(
            input_dim=dataset.input_dim,
            encoder_layers=tuple(self.encoder_layers),
            projection_hidden=self.projection_hidden,
            projection_out=self.projection_out,
            classifier_hidden=self.classifier_hidden,
            class_count=dataset.class_count,
            use_batchnorm_in_classifier=self.use_batchnorm)


@dataclass
class ExperimentResult:
    """Per-epoch records plus terminal artifacts of one experiment."""

    seed: int
    records: list = field(default_factory=list)
    pseudo_labels: np.ndarray | None = None
    weights: np.ndarray | None = None
    summary: dict = field(default_factory=dict)
    _last_epoch: dict = field(default_factory=dict)

    def append(self, phase: str, epoch: int, **fields) -> dict:
        last = self._last_epoch.get(phase)
        if last is not None and epoch <= last:
            raise InvalidArgument(f"epoch {epoch} not increasing within {phase!r}")
        self._last_epoch[phase] = epoch
        record = {"seed": self.seed, "phase": phase, "epoch": epoch}
        record.update({k: None for k in RECORD_FIELDS})
        for k, v in fields.items():
            if k not in RECORD_FIELDS:
                raise InvalidArgument(f"unknown record field {k!r}")
            record[k] = None if v is None else float(v)
        self.records.append(record)
        return record

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    """Shuffled index batches; runts of fewer than 2 samples are skipped."""
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = perm[start:start + batch_size]
        if len(idx) >= 2:
            yield idx


def predict_probs(network: Network, features: np.ndarray,
                  batch_size: int = 512) -> np.ndarray:
    parts = []
    for start in range(0, len(features), batch_size):
        p, _ = network.forward(features[start:start + batch_size],
                               head="classifier", mode="eval")
        parts.append(p)
    return np.concatenate(parts) if parts else np.zeros((0, 1))


def evaluate_top1(network: Network, dataset: LabeledDataset,
                  label_track: str = "clean") -> float:
    """Eval-mode argmax accuracy against the chosen label track."""
    if label_track == "clean":
        labels = dataset.clean_labels
    elif label_track == "noisy":
        labels = dataset.noisy_labels
    else:
        raise InvalidArgument(f"unknown label track {label_track!r}")
    if len(dataset) == 0:
        return 0.0
    preds = hard_predictions(predict_probs(network, dataset.features))
    return float((preds == labels).mean())


def _single_view(features: np.ndarray, recipe: AugmentRecipe, seed: int,
                 epoch: int, idx: np.ndarray, stream: int) -> np.ndarray:
    if features.ndim == 4:
        return augment_batch(features, recipe, seed, epoch, idx, 0, stream)
    return jitter_batch(features, recipe.jitter_strength, seed, epoch, idx,
                        0, stream)


def _merge_grads(a: dict, b: dict) -> dict:
    out = dict(a)
    for k, v in b.items():
        out[k] = out[k] + v if k in out else v
    return out


def pretrain_contrastive(dataset: LabeledDataset, config: PhaseConfig,
                         seed: int, mode: str = "unsupervised",
                         labels: np.ndarray | None = None,
                         weights: np.ndarray | None = None,
                         network: Network | None = None,
                         result: ExperimentResult | None = None,
                         phase: str = "contrastive",
                         stream: int = STREAM_PRETRAIN):
    """Train encoder and projection head on two stochastic views per sample.

    mode 'unsupervised' pulls only a sample's own second view; mode
    'weighted-supervised' additionally pulls same-label samples, each
    scaled by its trust weight. Returns (network, result).
    """
    if len(dataset) == 0:
        raise InvalidArgument("dataset is empty")
    if mode not in ("unsupervised", "weighted-supervised"):
        raise InvalidArgument(f"unknown mode {mode!r}")
    if mode == "weighted-supervised":
        if labels is None or weights is None:
            raise InvalidArgument("weighted-supervised mode needs labels and weights")
        labels = np.asarray(labels, dtype=np.int64)
        weights = np.asarray(weights, dtype=np.float64)
    cfg = config.contrastive
    if network is None:
        network = Network(config.network_spec(dataset),
                          rng=np.random.default_rng([seed, 11]))
    if result is None:
        result = ExperimentResult(seed)
    opt = OptimState("adam", base_lr=cfg.lr, weight_decay=cfg.weight_decay,
                     schedule="constant", epoch_budget=cfg.epochs)
    order_rng = np.random.default_rng([seed, 12])
    feats = dataset.features
    for epoch in range(cfg.epochs):
        losses = []
        for idx in _batches(len(dataset), cfg.batch_size, order_rng):
            va, vb = make_views(feats[idx], cfg.recipe, seed, epoch, idx, stream)
            za, ca = network.forward(va, head="projection", mode="train")
            zb, cb = network.forward(vb, head="projection", mode="train")
            emb = EmbeddingBatch.from_views(za, zb)
            if mode == "unsupervised":
                value, g = nt_xent(emb, cfg.temperature)
            else:
                value, g = weighted_sup_con(emb, labels[idx], weights[idx],
                                            cfg.temperature)
            if not np.isfinite(value):
                raise NumericFailure(f"contrastive loss diverged at epoch {epoch}")
            b = len(idx)
            grads_a, _ = network.backward(ca, g[:b])
            grads_b, _ = network.backward(cb, g[b:])
            optimizer_step(opt, network.params, _merge_grads(grads_a, grads_b),
                           epoch)
            losses.append(value)
        result.append(phase, epoch, train_loss=float(np.mean(losses)))
    return network, result


def _loss_state(cfg: ClassifierSettings, dataset: LabeledDataset):
    if cfg.loss_kind == "elr":
        return ElrState.fresh(len(dataset), dataset.class_count,
                              cfg.momentum_elr, cfg.lambda_elr)
    return None


def _epoch_metrics(network, dataset, targets, test_dataset, cfg, result,
                   phase, epoch, train_loss):
    """Eval-mode accuracies, plus the loss-split diagnostics when tracked."""
    probs = predict_probs(network, dataset.features)
    preds = hard_predictions(probs)
    fields = {
        "train_loss": train_loss,
        "train_top1_vs_noisy": (preds == dataset.noisy_labels).mean(),
        "train_top1_vs_clean": (preds == dataset.clean_labels).mean(),
    }
    if test_dataset is not None:
        fields["test_top1"] = evaluate_top1(network, test_dataset, "clean")
    weights = None
    if cfg.track_selection:
        losses = per_sample_ce(probs, targets)
        try:
            fit = fit_gmm2(losses)
            weights = posterior_weights(fit, losses)
        except DegenerateInput:
            weights = np.ones(len(dataset))
        metrics = clean_subset_metrics(weights, dataset, targets=targets)
        fields["clean_subset_size"] = metrics["subset_size_fraction"]
        fields["clean_subset_accuracy"] = metrics["subset_noise_accuracy"]
    result.append(phase, epoch, **fields)
    return weights


def train_classifier(dataset: LabeledDataset, targets: np.ndarray,
                     config: PhaseConfig, seed: int,
                     encoder_init: dict | None = None,
                     test_dataset: LabeledDataset | None = None,
                     result: ExperimentResult | None = None,
                     phase: str = "classifier",
                     stream: int = STREAM_CLASSIFY):
    """Supervised training against the given target labels.

    With a pretrained encoder (encoder_init), the first warmup_epochs
    update only classifier-head parameters; a fresh encoder skips the
    warm-up entirely since there is nothing worth freezing. Returns
    (network, result).
    """
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (len(dataset),):
        raise InvalidArgument("one target label per training sample required")
    cfg = config.classifier
    network = Network(config.network_spec(dataset),
                      rng=np.random.default_rng([seed, 21]))
    warmup = 0
    if encoder_init is not None:
        network.load_encoder(encoder_init)
        warmup = cfg.warmup_epochs
    if result is None:
        result = ExperimentResult(seed)
    opt = OptimState("sgd", base_lr=cfg.lr, momentum=cfg.momentum,
                     weight_decay=cfg.weight_decay, schedule="cosine",
                     epoch_budget=cfg.epochs)
    state = _loss_state(cfg, dataset)
    order_rng = np.random.default_rng([seed, 22])
    feats = dataset.features
    weights = None
    for epoch in range(cfg.epochs):
        losses = []
        for idx in _batches(len(dataset), cfg.batch_size, order_rng):
            x = _single_view(feats[idx], cfg.recipe, seed, epoch, idx, stream)
            probs, cache = network.forward(x, head="classifier", mode="train")
            if cfg.loss_kind == "ce":
                value, dlogits = loss_ce(probs, targets[idx])
            elif cfg.loss_kind == "nfl_rce":
                value, dlogits = loss_nfl_rce(probs, targets[idx], cfg.loss_config)
            else:
                elr_update_targets(state, idx, probs)
                value, dlogits = loss_elr(probs, targets[idx], state, idx)
            if not np.isfinite(value):
                raise NumericFailure(f"classifier loss diverged at epoch {epoch}")
            grads, _ = network.backward(cache, dlogits)
            if epoch < warmup:
                grads = {k: v for k, v in grads.items() if k.startswith("clf.")}
            optimizer_step(opt, network.params, grads, epoch)
            losses.append(value)
        weights = _epoch_metrics(network, dataset, targets, test_dataset, cfg,
                                 result, phase, epoch, float(np.mean(losses)))
    if weights is not None:
        result.weights = weights
    return network, result


def run_pretraining_phase(dataset: LabeledDataset, config: PhaseConfig,
                          seed: int, test_dataset: LabeledDataset | None = None,
                          pretrained: Network | None = None,
                          result: ExperimentResult | None = None):
    """Phase a: contrastive pre-train, noisy-label classifier, pseudo-labels.

    An already pre-trained network can be passed to reuse its encoder
    (the contrastive step is label-free, so it is shareable across noise
    settings of the same dataset). Returns (network, pseudo_labels, result).
    """
    if result is None:
        result = ExperimentResult(seed)
    if pretrained is None:
        pretrained, result = pretrain_contrastive(
            dataset, config, seed, "unsupervised", result=result,
            phase="contrastive", stream=STREAM_PRETRAIN)
    network, result = train_classifier(
        dataset, dataset.noisy_labels, config, seed,
        encoder_init=pretrained.params, test_dataset=test_dataset,
        result=result, phase="classifier", stream=STREAM_CLASSIFY)
    pseudo = generate_pseudo_labels(network, dataset,
                                    source_epoch=config.classifier.epochs)
    result.pseudo_labels = pseudo.labels
    result.summary["pseudo_label_accuracy"] = pseudo.accuracy_vs_clean
    if test_dataset is not None:
        result.summary["final_test_top1"] = evaluate_top1(network, test_dataset)
    return network, pseudo, result


def run_finetuning_phase(dataset: LabeledDataset, pseudo_labels: PseudoLabels,
                         phase_a_network: Network, config: PhaseConfig,
                         seed: int,
                         test_dataset: LabeledDataset | None = None,
                         result: ExperimentResult | None = None):
    """Phase b: loss-based selection, weighted contrastive, final classifier.

    Per-sample losses against the pseudo-labels feed the mixture split;
    the resulting clean probabilities weight the label-positive
    contrastive refinement (encoder warm-started from phase a, projection
    head fresh), and the final classifier trains on pseudo-labels.
    Returns (network, result).
    """
    pseudo = np.asarray(pseudo_labels.labels, dtype=np.int64)
    if pseudo.shape != (len(dataset),):
        raise InvalidArgument("pseudo-labels must cover the training set")
    if result is None:
        result = ExperimentResult(seed)
    probs = predict_probs(phase_a_network, dataset.features)
    sample_losses = per_sample_ce(probs, pseudo)
    try:
        fit = fit_gmm2(sample_losses)
        weights = posterior_weights(fit, sample_losses)
    except DegenerateInput:
        weights = np.ones(len(dataset))
        result.summary["selection_degenerate"] = True
    result.weights = weights
    subset = clean_subset_metrics(weights, dataset, targets=pseudo)
    result.summary["clean_subset_size"] = subset["subset_size_fraction"]
    result.summary["clean_subset_accuracy"] = subset["subset_noise_accuracy"]

    refine = Network(config.network_spec(dataset),
                     rng=np.random.default_rng([seed, 31]))
    refine.load_encoder(phase_a_network.params)
    refine, result = pretrain_contrastive(
        dataset, config, seed, "weighted-supervised", labels=pseudo,
        weights=weights, network=refine, result=result,
        phase="finetune-contrastive", stream=STREAM_FINETUNE)
    network, result = train_classifier(
        dataset, pseudo, config, seed, encoder_init=refine.params,
        test_dataset=test_dataset, result=result, phase="finetune-classifier",
        stream=STREAM_FINAL)
    result.pseudo_labels = pseudo
    if test_dataset is not None:
        result.summary["final_test_top1"] = evaluate_top1(network, test_dataset)
    return network, result


def run_bootstrap_variant(dataset: LabeledDataset, targets: np.ndarray,
                          weights: np.ndarray | None, config: PhaseConfig,
                          seed: int, encoder_init: dict | None = None,
                          test_dataset: LabeledDataset | None = None,
                          self_pair: bool = False,
                          result: ExperimentResult | None = None):
    """Mixup-bootstrap classifier: each step mixes random batch pairs in
    proportion to their trust weights and corrects both label terms toward
    the model's own predictions.

    self_pair short-circuits the pairing (each sample with itself), which
    reduces every step to plain training; it exists for verification.
    Returns (network, result).
    """
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (len(dataset),):
        raise InvalidArgument("one target label per training sample required")
    if weights is None:
        weights = np.ones(len(dataset))
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (len(dataset),):
        raise InvalidArgument("one weight per training sample required")
    cfg = config.classifier
    network = Network(config.network_spec(dataset),
                      rng=np.random.default_rng([seed, 21]))
    warmup = 0
    if encoder_init is not None:
        network.load_encoder(encoder_init)
        warmup = cfg.warmup_epochs
    if result is None:
        result = ExperimentResult(seed)
    opt = OptimState("sgd", base_lr=cfg.lr, momentum=cfg.momentum,
                     weight_decay=cfg.weight_decay, schedule="cosine",
                     epoch_budget=cfg.epochs)
    state = _loss_state(cfg, dataset)
    order_rng = np.random.default_rng([seed, 22])
    pair_rng = np.random.default_rng([seed, 41])
    feats = dataset.features
    for epoch in range(cfg.epochs):
        losses = []
        for idx in _batches(len(dataset), cfg.batch_size, order_rng):
            b = len(idx)
            if self_pair:
                partner_pos = np.arange(b)
            else:
                partner_pos = (np.arange(b) + 1
                               + pair_rng.integers(0, b - 1, size=b)) % b
            idx_b = idx[partner_pos]
            x = _single_view(feats[idx], cfg.recipe, seed, epoch, idx,
                             STREAM_BOOTSTRAP)
            x_b = x[partner_pos]
            w_a, w_b = weights[idx], weights[idx_b]
            mixed, c_a, c_b = mixup_pair(x, x_b, w_a, w_b)
            probs, cache = network.forward(mixed, head="classifier", mode="train")
            if cfg.loss_kind == "elr":
                elr_update_targets(state, idx, probs)
            value, dlogits = loss_bootstrap_mixed(
                cfg.loss_kind, probs, targets[idx], targets[idx_b], w_a, w_b,
                c_a, c_b, cfg.loss_config, state, idx)
            if not np.isfinite(value):
                raise NumericFailure(f"bootstrap loss diverged at epoch {epoch}")
            grads, _ = network.backward(cache, dlogits)
            if epoch < warmup:
                grads = {k: v for k, v in grads.items() if k.startswith("clf.")}
            optimizer_step(opt, network.params, grads, epoch)
            losses.append(value)
        _epoch_metrics(network, dataset, targets, test_dataset, cfg, result,
                       "bootstrap", epoch, float(np.mean(losses)))
    if test_dataset is not None:
        result.summary["final_test_top1"] = evaluate_top1(network, test_dataset)
    return network, result
