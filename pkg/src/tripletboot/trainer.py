"""Training loop for the five model variants, plus evaluation and scoring.

Variants:
  softmax         cross-entropy head on the backbone, no metric learning
  triplet-naive   triplet loss, uniform positives, unfiltered negatives
  triplet-hn      hardness-filtered negatives, positives from the whole class
  triplet-m       hardness filter plus local positives (rho neighborhood)
  triplet-a       triplet-m plus jointly learned anchor points

Sampling is quasi-online: the embedding snapshot used for mining is rebuilt
every refresh_period iterations while gradients always use fresh forward
passes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .anchors import AnchorSet, anchor_step, fit_anchors, joint_loss_and_grads, soft_vote
from .embednet import (
    Network,
    Sample,
    SoftmaxHead,
    backward,
    forward_batch,
    head_probabilities,
    head_step,
    init_head,
    init_network,
    sgd_step,
    softmax_head_loss_batch,
)
from .errors import ConfigError, InputError, StateError
from .triplet import is_hard_negative, mine_triplets, triplet_grads, triplet_loss, EmbeddingIndex

VARIANT_SOFTMAX = "softmax"
VARIANT_NAIVE = "triplet-naive"
VARIANT_HN = "triplet-hn"
VARIANT_M = "triplet-m"
VARIANT_A = "triplet-a"
VARIANTS = (VARIANT_SOFTMAX, VARIANT_NAIVE, VARIANT_HN, VARIANT_M, VARIANT_A)

EVENT_REFRESH = "refresh"
EVENT_FINAL = "final"
EVENT_EARLY_STOP = "early-stop"


@dataclass
class TrainConfig:
    variant: str = VARIANT_M
    margin: float = 0.2
    gamma: float = 5.0
    omega: float = 0.1
    anchors_per_category: int = 3
    rho: float = 0.6
    embed_dim: int = 64
    hidden_dims: tuple = (64,)
    batch_size: int = 50
    refresh_period: int = 1000
    max_iterations: int = 2000
    learning_rate: float = 0.05
    seed: int = 0
    confidence_threshold: float = 0.5
    renormalize_anchors: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if self.margin < 0:
            raise ConfigError(f"margin must be >= 0, got {self.margin}")
        if self.gamma < 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        if not (0.0 <= self.omega <= 1.0):
            raise ConfigError(f"omega must be in [0, 1], got {self.omega}")
        if not (0.0 < self.rho <= 1.0):
            raise ConfigError(f"rho must be in (0, 1], got {self.rho}")
        if self.anchors_per_category < 1:
            raise ConfigError("anchors_per_category must be >= 1")
        if self.embed_dim < 1:
            raise ConfigError("embed_dim must be >= 1")
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        if any(h < 1 for h in self.hidden_dims):
            raise ConfigError("hidden_dims must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.refresh_period < 1:
            raise ConfigError("refresh_period must be >= 1")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not (0.0 <= self.confidence_threshold < 1.0):
            raise ConfigError("confidence_threshold must be in [0, 1)")

    # Mining policy seen by mine_triplets. triplet-naive disables filtering;
    # triplet-hn keeps the filter but samples positives from the whole class.
    @property
    def mining_filters(self) -> bool:
        return self.variant != VARIANT_NAIVE

    @property
    def mining_rho(self) -> float:
        if self.variant in (VARIANT_NAIVE, VARIANT_HN):
            return 1.0
        return self.rho


@dataclass
class LogRecord:
    """One aggregated training-log entry covering a window of iterations."""

    iteration: int
    loss: float
    violators: int
    event: str = EVENT_REFRESH

    def to_line(self, variant: str) -> str:
        return (
            f"iteration={self.iteration} loss={self.loss:.6f} "
            f"violators={self.violators} variant={variant} event={self.event}"
        )


@dataclass
class TrainedModel:
    network: Network
    anchors: AnchorSet | None
    head: SoftmaxHead | None
    config: TrainConfig
    n_categories: int
    log: list[LogRecord] = field(default_factory=list)


@dataclass
class EvalReport:
    mean_accuracy: float
    per_class: dict
    n_samples: int


def format_training_log(model: TrainedModel) -> str:
    return "\n".join(r.to_line(model.config.variant) for r in model.log) + "\n"


def _check_training_inputs(dataset: list[Sample], hard_pool: list[Sample]):
    if not dataset:
        raise InputError("training set is empty")
    labels = []
    for s in dataset:
        if s.label is None:
            raise InputError(f"training sample {s.id!r} has no label")
        labels.append(s.label)
    n_categories = max(labels) + 1
    if min(labels) < 0:
        raise InputError("negative category label")
    counts = np.bincount(labels, minlength=n_categories)
    if np.any(counts == 0):
        missing = int(np.argmin(counts))
        raise InputError(f"category {missing} has no training samples")
    if n_categories < 2:
        raise ConfigError("training needs at least 2 categories")
    dim = dataset[0].features.shape[0]
    for s in list(dataset) + list(hard_pool):
        if s.features.shape != (dim,):
            raise InputError(f"sample {s.id!r} has feature dim {s.features.shape[0]}, expected {dim}")
    return n_categories, dim


def _build_index(net: Network, samples: list[Sample], labels: list) -> EmbeddingIndex:
    feats = np.vstack([s.features for s in samples])
    emb = forward_batch(net, feats)
    return EmbeddingIndex([s.id for s in samples], emb, labels)


def _train_softmax(dataset, cfg, n_categories, dim, seeds) -> TrainedModel:
    net = init_network([dim, *cfg.hidden_dims, cfg.embed_dim], int(seeds[0]))
    head = init_head(cfg.embed_dim, n_categories, int(seeds[2]))
    rng = np.random.default_rng(int(seeds[1]))
    feats = np.vstack([s.features for s in dataset])
    labels = np.array([s.label for s in dataset], dtype=np.int64)

    log: list[LogRecord] = []
    window_loss, window_batches = 0.0, 0
    for it in range(cfg.max_iterations):
        if it > 0 and it % cfg.refresh_period == 0:
            log.append(LogRecord(it, window_loss / max(window_batches, 1), 0))
            window_loss, window_batches = 0.0, 0
        idx = rng.integers(len(dataset), size=cfg.batch_size)
        loss, net_grads, head_grads = softmax_head_loss_batch(net, head, feats[idx], labels[idx])
        net = sgd_step(net, net_grads, cfg.learning_rate)
        head = head_step(head, head_grads, cfg.learning_rate)
        window_loss += loss
        window_batches += 1
    if window_batches:
        log.append(
            LogRecord(cfg.max_iterations, window_loss / window_batches, 0, EVENT_FINAL)
        )
    return TrainedModel(net, None, head, cfg, n_categories, log)


def train(dataset: list[Sample], hard_pool: list[Sample], cfg: TrainConfig) -> TrainedModel:
    """Train one model variant on labeled samples plus an unlabeled hard pool.

    Hard-pool samples enter only as triplet negatives; the softmax variant has
    no way to consume them and ignores the pool entirely. Identical inputs and
    config produce an identical model.
    """
    n_categories, dim = _check_training_inputs(dataset, hard_pool)
    seeds = np.random.SeedSequence(cfg.seed).generate_state(4)

    if cfg.variant == VARIANT_SOFTMAX:
        return _train_softmax(dataset, cfg, n_categories, dim, seeds)

    net = init_network([dim, *cfg.hidden_dims, cfg.embed_dim], int(seeds[0]))
    rng = np.random.default_rng(int(seeds[1]))
    anchor_seed = int(seeds[3])

    indexed = list(dataset) + list(hard_pool)
    index_labels = [s.label for s in dataset] + [None] * len(hard_pool)
    hard_ids = [s.id for s in hard_pool]
    features_by_row = np.vstack([s.features for s in indexed])
    row_of = {s.id: i for i, s in enumerate(indexed)}
    label_of = {s.id: s.label for s in dataset}

    joint = cfg.variant == VARIANT_A
    anchors: AnchorSet | None = None
    index = None
    log: list[LogRecord] = []
    window_loss, window_violators, window_batches = 0.0, 0, 0

    for it in range(cfg.max_iterations):
        if it % cfg.refresh_period == 0:
            if window_batches:
                log.append(LogRecord(it, window_loss / window_batches, window_violators))
                window_loss, window_violators, window_batches = 0.0, 0, 0
            index = _build_index(net, indexed, index_labels)
            if joint and anchors is None and it >= cfg.refresh_period:
                labeled_rows = index.embeddings[: len(dataset)]
                labels_arr = np.array([s.label for s in dataset], dtype=np.int64)
                anchors = fit_anchors(labeled_rows, labels_arr, cfg.anchors_per_category, anchor_seed)

        batch = mine_triplets(index, hard_ids, cfg, rng)
        if not batch:
            log.append(LogRecord(it, window_loss / max(window_batches, 1), window_violators, EVENT_EARLY_STOP))
            window_loss, window_violators, window_batches = 0.0, 0, 0
            break

        n = len(batch)
        rows = np.array(
            [row_of[t.ref_id] for t in batch]
            + [row_of[t.pos_id] for t in batch]
            + [row_of[t.neg_id] for t in batch]
        )
        xs = features_by_row[rows]
        emb = forward_batch(net, xs)
        fx, fp, fn = emb[:n], emb[n : 2 * n], emb[2 * n :]

        upstream = np.zeros_like(emb)
        anchor_sums = [np.zeros_like(p) for p in anchors.points] if anchors is not None else None
        batch_loss = 0.0
        violators = 0
        for i, t in enumerate(batch):
            if is_hard_negative(fx[i], fp[i], fn[i], cfg.margin):
                violators += 1
            if anchors is not None:
                loss, gx, gp, gn, ga = joint_loss_and_grads(
                    fx[i], fp[i], fn[i], anchors, label_of[t.ref_id],
                    cfg.margin, cfg.gamma, cfg.omega,
                )
                for acc, g in zip(anchor_sums, ga):
                    acc += g
            else:
                loss = triplet_loss(fx[i], fp[i], fn[i], cfg.margin)
                gx, gp, gn = triplet_grads(fx[i], fp[i], fn[i], cfg.margin)
            batch_loss += loss
            upstream[i] += gx
            upstream[n + i] += gp
            upstream[2 * n + i] += gn

        upstream /= n
        net = sgd_step(net, backward(net, xs, upstream), cfg.learning_rate)
        if anchors is not None:
            anchors = anchor_step(
                anchors, [g / n for g in anchor_sums], cfg.learning_rate, cfg.renormalize_anchors
            )
        window_loss += batch_loss / n
        window_violators += violators
        window_batches += 1

    if window_batches:
        log.append(LogRecord(cfg.max_iterations, window_loss / window_batches, window_violators, EVENT_FINAL))

    if anchors is None:
        feats = np.vstack([s.features for s in dataset])
        labels_arr = np.array([s.label for s in dataset], dtype=np.int64)
        emb = forward_batch(net, feats)
        anchors = fit_anchors(emb, labels_arr, cfg.anchors_per_category, anchor_seed)
    return TrainedModel(net, anchors, None, cfg, n_categories, log)


def score(model: TrainedModel, features: np.ndarray) -> np.ndarray:
    """Confidence vector over the model's categories for one feature vector."""
    features = np.asarray(features, dtype=np.float64)
    emb = forward_batch(model.network, features[None, :])[0]
    if model.anchors is not None:
        return soft_vote(emb, model.anchors, model.config.gamma)
    if model.head is not None:
        return head_probabilities(model.head, emb)
    raise StateError("model has neither anchors nor a classification head")


def score_batch(model: TrainedModel, features: np.ndarray) -> np.ndarray:
    """Row-wise confidence vectors; row i equals score(model, features[i])."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise InputError("score_batch expects an (n, dim) matrix")
    return np.vstack([score(model, row) for row in features])


def predict_label(model: TrainedModel, features: np.ndarray) -> int:
    return int(np.argmax(score(model, features)))


def evaluate(model: TrainedModel, testset: list[Sample]) -> EvalReport:
    """Mean per-class accuracy over the classes present in the test set."""
    if not testset:
        raise InputError("test set is empty")
    for s in testset:
        if s.label is None:
            raise InputError(f"test sample {s.id!r} has no label")
        if not (0 <= s.label < model.n_categories):
            raise InputError(f"test sample {s.id!r} has unknown label {s.label}")
    feats = np.vstack([s.features for s in testset])
    labels = np.array([s.label for s in testset], dtype=np.int64)
    preds = np.array([int(np.argmax(p)) for p in score_batch(model, feats)])

    per_class = {}
    for cat in sorted(set(labels.tolist())):
        mask = labels == cat
        per_class[int(cat)] = float(np.mean(preds[mask] == cat))
    mean_acc = float(np.mean(list(per_class.values())))
    return EvalReport(mean_accuracy=mean_acc, per_class=per_class, n_samples=len(testset))
