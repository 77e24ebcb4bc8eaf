"""Desk-scale laboratory for classification under label noise.

Two-phase recipe: contrastive pre-training hands a robust-loss
classifier its encoder; the classifier's pseudo-labels and a loss-based
mixture split then drive a weighted contrastive fine-tuning pass (or a
mixup-bootstrap alternative). Everything runs on float64 numpy with
explicit gradients, so every number is checkable.
"""

from .config import (RunConfig, build_dataset, build_phase_config, load,
                     parse, render)
from .contrastive import (AugmentRecipe, EmbeddingBatch, augment,
                          augment_batch, classification_recipe,
                          contrastive_recipe, jitter_batch, make_views,
                          nt_xent, sup_con, view_rng, weighted_sup_con)
from .data import (AsymmetricMap, LabeledDataset, generate_synthetic,
                   inject_asymmetric, inject_symmetric, load_cifar10_binary,
                   load_dataset, noise_accuracy, save_dataset)
from .errors import (ContractViolation, DegenerateInput, FormatError,
                     InvalidArgument, NlabError, NumericFailure)
from .gradcheck import gradient_check
from .losses import (ElrState, RobustLossConfig, elr_update_targets,
                     hard_predictions, loss_bootstrap_mixed, loss_ce,
                     loss_ce_bootstrap, loss_elr, loss_elr_bootstrap,
                     loss_nfl, loss_nfl_rce, loss_nfl_rce_bootstrap,
                     loss_rce, mixup_pair, one_hot, per_sample_ce)
from .network import (Network, NetworkSpec, flatten_params, init_params,
                      softmax, unflatten_params)
from .optim import OptimState, cosine_lr, optimizer_step
from .pipeline import (ClassifierSettings, ContrastiveSettings,
                       ExperimentResult, PhaseConfig, evaluate_top1,
                       pretrain_contrastive, run_bootstrap_variant,
                       run_finetuning_phase, run_pretraining_phase,
                       train_classifier)
from .selection import (GmmFit, PseudoLabels, clean_subset_metrics,
                        export_selection_csv, fit_gmm2,
                        generate_pseudo_labels, posterior_weights,
                        predict_labels)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
