"""Training-free cascaded early-rejection engine for out-of-distribution
detection: a spectral-energy sieve at shallow features, a hyperspherical
semantic energy gate at intermediate features, and a final energy / max
softmax scorer, composed as a conditional execution chain with calibrated
per-stage acceptance regions.
"""

from .backbone import (
    Backbone,
    ManifestEntry,
    StageSpec,
    forward_all,
    forward_stage,
    gate_overhead_flops,
    global_average_pool,
    head_logits,
    init_backbone,
    load_feature_manifest,
    save_feature_manifest,
    stage_flops,
    validate_feature_manifest,
)
from .cascade import (
    CalibrationBudget,
    CascadeOutcome,
    GateConfig,
    calibrate_gates,
    energy_score,
    expected_flops,
    gate_decision,
    load_gates,
    msp_score,
    run_cascade,
    save_gates,
)
from .corruptions import FAMILIES, CorruptionSpec, apply_corruption, build_corrupted_corpus
from .datagen import KINDS, CorpusSpec, generate_corpus, generate_sample, write_corpus
from .errors import (
    CalibrationError,
    ConfigError,
    DataError,
    DegenerateClassError,
    FitError,
    OodgateError,
    SizeError,
    TzrFormatError,
    ValidationError,
)
from .metrics import (
    ScoreSet,
    auroc,
    cascade_margin,
    cascade_score_set,
    exit_histogram,
    fpr_at_tpr,
    gate_margin,
    write_report_csv,
)
from .ses import (
    LAPLACIAN_4,
    SesConfig,
    channel_energy,
    default_top_k,
    frequency_weighting_ratio,
    laplacian_frequency_weights,
    laplacian_response,
    ses_score,
    spectral_contrast_gain,
    top_k_channels,
)
from .she import (
    PrototypeBank,
    build_bank,
    estimate_kappa,
    fit_prototypes,
    load_bank,
    magnitude_energy,
    save_bank,
    she_energy,
    vmf_concentration,
)
from .tensor import (
    as_kernel2d,
    as_tensor,
    depthwise_conv2d,
    power_spectrum,
    read_tensor,
    write_tensor,
)

__version__ = "0.1.0"
