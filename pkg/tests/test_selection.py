"""Loss-distribution mixture fitting and clean-subset selection."""

import csv

import numpy as np
import pytest

from nlab.data import generate_synthetic, inject_symmetric, noise_accuracy
from nlab.errors import DegenerateInput, InvalidArgument
from nlab.network import Network, NetworkSpec
from nlab.selection import (
    GmmFit,
    clean_subset_metrics,
    export_selection_csv,
    fit_gmm2,
    generate_pseudo_labels,
    posterior_weights,
    predict_labels,
)


def _denorm(fit, values):
    return fit.loss_min + np.asarray(values) * (fit.loss_max - fit.loss_min)


def _two_cluster_losses(rng, n_per=300, mu=(0.2, 0.8), sigma=0.05):
    a = rng.normal(mu[0], sigma, n_per)
    b = rng.normal(mu[1], sigma, n_per)
    return np.concatenate([a, b]), a, b


# -- mixture fitting -------------------------------------------------------------


def test_fit_recovers_two_point_clusters():
    losses = np.array([0.1, 0.1, 0.1, 0.9, 0.9, 0.9])
    fit = fit_gmm2(losses)
    raw_means = _denorm(fit, fit.means)
    assert abs(raw_means[0] - 0.1) < 1e-3
    assert abs(raw_means[1] - 0.9) < 1e-3
    assert np.allclose(fit.mixing, [0.5, 0.5], atol=1e-3)


def test_fit_matches_cluster_sample_means():
    # separation is 12 sigma, so component means land on the per-cluster
    # sample means almost exactly
    rng = np.random.default_rng(0)
    losses, a, b = _two_cluster_losses(rng)
    fit = fit_gmm2(losses)
    raw = _denorm(fit, fit.means)
    assert abs(raw[0] - a.mean()) < 1e-2
    assert abs(raw[1] - b.mean()) < 1e-2
    assert abs(fit.mixing.sum() - 1.0) <= 1e-9
    assert fit.means[0] <= fit.means[1]
    assert np.all(fit.variances > 0)


def test_log_likelihood_is_monotone():
    rng = np.random.default_rng(1)
    for trial in range(5):
        losses, _, _ = _two_cluster_losses(rng, n_per=80)
        fit = fit_gmm2(losses)
        traj = np.asarray(fit.trajectory)
        assert len(traj) == fit.n_iter
        assert fit.log_likelihood == traj[-1]
        assert np.all(np.diff(traj) >= -1e-10)


def test_fit_is_permutation_invariant():
    rng = np.random.default_rng(2)
    losses, _, _ = _two_cluster_losses(rng, n_per=50)
    shuffled = losses[rng.permutation(len(losses))]
    fit_a = fit_gmm2(losses)
    fit_b = fit_gmm2(shuffled)
    assert np.allclose(fit_a.means, fit_b.means, atol=1e-9)
    assert np.allclose(fit_a.mixing, fit_b.mixing, atol=1e-9)


def test_fit_rejects_bad_input():
    with pytest.raises(DegenerateInput):
        fit_gmm2(np.full(10, 0.7))
    with pytest.raises(DegenerateInput):
        fit_gmm2(np.zeros(10))
    with pytest.raises(InvalidArgument):
        fit_gmm2([0.1, 0.2, 0.3])
    with pytest.raises(InvalidArgument):
        fit_gmm2([0.1, 0.2, np.nan, 0.4])


# -- posterior weights -----------------------------------------------------------


def _manual_fit(means, variances, mixing=(0.5, 0.5)):
    return GmmFit(np.asarray(means, float), np.asarray(variances, float),
                  np.asarray(mixing, float), 0.0, 1, 0.0, 1.0)


def test_weights_saturate_at_component_means():
    fit = _manual_fit([0.2, 0.8], [0.01, 0.01])
    w = posterior_weights(fit, [0.2, 0.8])
    assert w[0] > 0.99
    assert w[1] < 0.01


def test_equal_components_give_half_everywhere():
    fit = _manual_fit([0.5, 0.5], [0.04, 0.04])
    w = posterior_weights(fit, np.linspace(0, 1, 11))
    assert np.all(w == 0.5)


def test_weights_bounded_and_monotone_for_shared_variance():
    fit = _manual_fit([0.3, 0.7], [0.02, 0.02], mixing=(0.4, 0.6))
    losses = np.sort(np.random.default_rng(3).uniform(-0.5, 1.5, 200))
    w = posterior_weights(fit, losses)
    assert np.all((w >= 0) & (w <= 1))
    assert np.all(np.diff(w) <= 1e-12)


def test_weights_invariant_to_affine_loss_rescaling():
    rng = np.random.default_rng(4)
    losses, _, _ = _two_cluster_losses(rng, n_per=60)
    scaled = 7.5 * losses + 3.0
    fit_raw = fit_gmm2(losses)
    fit_scaled = fit_gmm2(scaled)
    w_raw = posterior_weights(fit_raw, losses)
    w_scaled = posterior_weights(fit_scaled, scaled)
    assert np.allclose(w_raw, w_scaled, atol=1e-9)


def test_fitted_weights_separate_the_clusters():
    rng = np.random.default_rng(5)
    losses, a, _ = _two_cluster_losses(rng)
    fit = fit_gmm2(losses)
    w = posterior_weights(fit, losses)
    assert np.all(w[:len(a)] > 0.9)
    assert np.all(w[len(a):] < 0.1)


# -- pseudo-labels ---------------------------------------------------------------


def _small_net(dataset, seed=0):
    spec = NetworkSpec(input_dim=dataset.input_dim,
                       encoder_layers=((16, "relu"),),
                       projection_hidden=8, projection_out=4,
                       classifier_hidden=8, class_count=dataset.class_count)
    return Network(spec, rng=np.random.default_rng(seed))


def test_pseudo_labels_deterministic_and_scored():
    ds = generate_synthetic("blobs", classes=3, samples=90, seed=1)
    net = _small_net(ds)
    first = generate_pseudo_labels(net, ds, source_epoch=4)
    second = generate_pseudo_labels(net, ds, source_epoch=4)
    assert np.array_equal(first.labels, second.labels)
    assert first.source_epoch == 4
    assert first.labels.min() >= 0 and first.labels.max() < 3
    assert first.accuracy_vs_clean == float(
        (first.labels == ds.clean_labels).mean())


def test_prediction_batching_is_invisible():
    ds = generate_synthetic("blobs", classes=3, samples=50, seed=2)
    net = _small_net(ds, seed=1)
    small = predict_labels(net, ds.features, batch_size=7)
    large = predict_labels(net, ds.features, batch_size=512)
    assert np.array_equal(small, large)


def test_uniform_probabilities_break_ties_low():
    ds = generate_synthetic("blobs", classes=4, samples=20, seed=3)
    net = _small_net(ds, seed=2)
    for key in ("clf.0.W", "clf.0.b", "clf.1.W", "clf.1.b"):
        net.params[key][:] = 0.0
    out = generate_pseudo_labels(net, ds)
    assert np.all(out.labels == 0)


# -- clean-subset diagnostics ----------------------------------------------------


def test_subset_all_ones_reproduces_noise_accuracy():
    ds = inject_symmetric(
        generate_synthetic("blobs", classes=4, samples=200, seed=4), 0.4, seed=1)
    out = clean_subset_metrics(np.ones(len(ds)), ds)
    assert out["subset_size_fraction"] == 1.0
    assert out["subset_noise_accuracy"] == noise_accuracy(ds)


def test_oracle_weights_give_perfect_subset():
    ds = inject_symmetric(
        generate_synthetic("blobs", classes=4, samples=200, seed=5), 0.4, seed=2)
    w = (ds.noisy_labels == ds.clean_labels).astype(np.float64)
    out = clean_subset_metrics(w, ds)
    assert out["subset_noise_accuracy"] == 1.0
    assert out["subset_size_fraction"] == noise_accuracy(ds)


def test_empty_subset_flags_undefined_accuracy():
    ds = generate_synthetic("blobs", classes=2, samples=20, seed=6)
    out = clean_subset_metrics(np.zeros(len(ds)), ds)
    assert out == {"subset_size_fraction": 0.0, "subset_noise_accuracy": None}


def test_subset_accuracy_against_explicit_targets():
    ds = inject_symmetric(
        generate_synthetic("blobs", classes=3, samples=60, seed=7), 0.5, seed=3)
    out = clean_subset_metrics(np.ones(len(ds)), ds, targets=ds.clean_labels)
    assert out["subset_noise_accuracy"] == 1.0


def test_subset_metrics_validation():
    ds = generate_synthetic("blobs", classes=2, samples=20, seed=8)
    with pytest.raises(InvalidArgument):
        clean_subset_metrics(np.ones(len(ds)), ds, threshold=0.0)
    with pytest.raises(InvalidArgument):
        clean_subset_metrics(np.ones(len(ds)), ds, threshold=1.0)
    with pytest.raises(InvalidArgument):
        clean_subset_metrics(np.ones(len(ds) - 1), ds)


def test_selection_csv_round_trip(tmp_path):
    ds = inject_symmetric(
        generate_synthetic("blobs", classes=3, samples=12, seed=9), 0.3, seed=4)
    weights = np.linspace(0, 1, len(ds))
    pseudo = (ds.noisy_labels + 1) % 3
    path = tmp_path / "sel.csv"
    export_selection_csv(str(path), weights, pseudo, ds)
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["sample_index", "weight", "pseudo_label",
                       "clean_label", "noisy_label"]
    assert len(rows) == len(ds) + 1
    for i, row in enumerate(rows[1:]):
        assert row[0] == str(i)
        assert row[1] == f"{weights[i]:.6f}"
        assert row[2] == str(int(pseudo[i]))
        assert row[3] == str(int(ds.clean_labels[i]))
        assert row[4] == str(int(ds.noisy_labels[i]))
