"""Triplet-embedding classification with human-in-the-loop dataset growth."""

__version__ = "0.1.0"

from .errors import (
    CheckpointError,
    ConfigError,
    InputError,
    ParseError,
    SamplingError,
    StateError,
    TripletbootError,
)
from .embednet import (
    GradientSet,
    Network,
    Sample,
    SoftmaxHead,
    backward,
    forward,
    forward_batch,
    head_probabilities,
    head_step,
    init_head,
    init_network,
    l2_normalize,
    sgd_step,
    softmax_head_loss,
    softmax_head_loss_batch,
)
from .triplet import (
    EmbeddingIndex,
    Triplet,
    is_hard_negative,
    mine_triplets,
    sample_local_positive,
    triplet_grads,
    triplet_loss,
)
from .anchors import (
    AnchorSet,
    anchor_step,
    classification_grads,
    classification_loss,
    fit_anchors,
    joint_loss_and_grads,
    kmeans,
    predict,
    soft_vote,
)
from .trainer import (
    EvalReport,
    LogRecord,
    TrainConfig,
    TrainedModel,
    VARIANTS,
    evaluate,
    format_training_log,
    predict_label,
    score,
    score_batch,
    train,
)
from .data import (
    Dataset,
    SyntheticSpec,
    checkpoint_bytes,
    dataset_from_text,
    dataset_to_text,
    generate_synthetic,
    load_checkpoint,
    load_dataset,
    model_from_checkpoint_bytes,
    project_2d,
    save_checkpoint,
    save_dataset,
)
from .bootstrap import (
    BootstrapState,
    Decision,
    LabelRequest,
    OracleLabeler,
    RoundRecord,
    bootstrap_round,
    exemplars_for,
    filter_candidates,
    load_decision_log,
    load_state,
    replay_decisions,
    round_seed,
    run_bootstrap,
    split_candidates,
)
