"""Reconstruction-leakage accounting for noisy gradient training.

The package bounds how much a trained model can reveal about a single
secret training record.  It combines a Renyi divergence accountant for
the subsampled Gaussian mechanism, leakage and posterior bounds derived
from that curve, a canary-memorization experiment that checks the bounds
empirically, and a sampling-policy analysis that ranks sequences by
extraction risk.
"""

from .accountant import (
    EpsilonResult,
    MechanismParams,
    RdpCurve,
    compose,
    default_order_grid,
    gaussian_rdp,
    rdp_to_dp_epsilon,
    sgm_rdp_curve,
    sgm_rdp_step,
)
from .bounds import (
    LeakageReport,
    SecretPrior,
    h_bound,
    l_bound,
    leakage_bits,
    min_h_bits,
    min_leakage,
    posterior_bound,
    secrecy_bits,
)
from .ngram import (
    Canary,
    CalibrationResult,
    LeakageRow,
    McEstimate,
    TrainConfig,
    calibrate_steps,
    canary_log_prob,
    clip_gradient,
    dp_sgd_step,
    grad,
    leakage_experiment,
    loss,
    mc_estimate,
    softmax_log_probs,
    train_model,
    train_models_log_probs,
)
from .sampling import (
    ConditionalModel,
    NgramTableModel,
    RiskRecord,
    SamplingPolicy,
    ScoreSet,
    TemperatureSchedule,
    calibrated_loss,
    conditional_log_density,
    risk_scan,
    sample_sequence,
    sample_sequences,
    sequence_log_density,
    sequence_nll,
    trials_log2,
)

__version__ = "0.1.0"

__all__ = [
    "EpsilonResult",
    "MechanismParams",
    "RdpCurve",
    "compose",
    "default_order_grid",
    "gaussian_rdp",
    "rdp_to_dp_epsilon",
    "sgm_rdp_curve",
    "sgm_rdp_step",
    "LeakageReport",
    "SecretPrior",
    "h_bound",
    "l_bound",
    "leakage_bits",
    "min_h_bits",
    "min_leakage",
    "posterior_bound",
    "secrecy_bits",
    "Canary",
    "CalibrationResult",
    "LeakageRow",
    "McEstimate",
    "TrainConfig",
    "calibrate_steps",
    "canary_log_prob",
    "clip_gradient",
    "dp_sgd_step",
    "grad",
    "leakage_experiment",
    "loss",
    "mc_estimate",
    "softmax_log_probs",
    "train_model",
    "train_models_log_probs",
    "ConditionalModel",
    "NgramTableModel",
    "RiskRecord",
    "SamplingPolicy",
    "ScoreSet",
    "TemperatureSchedule",
    "calibrated_loss",
    "conditional_log_density",
    "risk_scan",
    "sample_sequence",
    "sample_sequences",
    "sequence_log_density",
    "sequence_nll",
    "trials_log2",
    "__version__",
]
