"""ERIS: energy-guided disentanglement of domain-specific and label-relevant
features for time-series classification under domain shift.

The package provides the network and its training losses (contrastive
domain/label energies, prototype contrast, weight-level orthogonality,
adversarial-consistency regularization with a domain discriminator), a
numerical integrator certifying the orthogonality gradient flow, synthetic
multi-domain benchmarks with leave-one-domain-out splits, and calibration /
disentanglement diagnostics.
"""

from .linalg import Rng, frob_norm_sq, matmul, sample_normal
from .data import (
    SyntheticConfig,
    TimeSeriesDataset,
    gen_synthetic,
    load_dataset,
    lodo_split,
    save_dataset,
)
from .model import (
    ArchConfig,
    CostEstimate,
    EnergyScores,
    ModelParams,
    consistency_error,
    cross_norm,
    discriminate_domain,
    encode,
    energy_domain,
    energy_label,
    energy_scores,
    estimate_cost,
    init_params,
    load_params,
    predict,
    save_params,
    variance_head,
)
from .losses import (
    LossBreakdown,
    Margins,
    component_loss_and_grads,
    grad_check,
    loss_cl,
    loss_disc,
    loss_dse,
    loss_lse,
    loss_ortho,
    loss_proto,
    loss_reg,
    loss_total,
    losses_and_grads,
)
from .orthoflow import (
    CertReport,
    FlowTrajectory,
    flow_step,
    save_trajectory,
    simulate_flow,
    verify_lemma,
)
from .train import (
    TrainConfig,
    TrainHistory,
    adv_perturbation,
    fit,
    lr_at,
    save_history,
    train_step,
)
from .evaluate import (
    MetricsReport,
    classification_metrics,
    disentanglement_summary,
    dse_rank_correlation,
    ece,
    evaluate_model,
    export_embeddings,
    feature_correlation_matrix,
    mutual_information_matrix,
)
from .bench import (
    ABLATION_CONFIGS,
    default_arch,
    default_synthetic_config,
    default_train_config,
    run_benchmark,
)

__version__ = "0.1.0"
